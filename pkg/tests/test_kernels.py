import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spdcsim import kernels
from spdcsim.correlator import CorrelogramConfig, bin_thresholds

from oracles import brute_histogram, greedy_dead_time, ou_reference

PY = kernels.get_backend("python")
try:
    CY = kernels.get_backend("cython")
except ImportError:  # pragma: no cover - build without compiler
    CY = None

BACKENDS = [PY] + ([CY] if CY is not None and CY is not PY else [])
ids = [b.BACKEND for b in BACKENDS]

sorted_ticks = st.lists(st.integers(0, 2000), max_size=80).map(lambda x: np.array(sorted(x), dtype=np.int64))


def test_default_backend_is_compiled_when_built():
    if CY is None:
        pytest.skip("extension not built")
    assert kernels.BACKEND in ("cython", "python")
    assert CY.BACKEND == "cython"


def test_env_var_forces_python(monkeypatch):
    import importlib
    monkeypatch.setenv("SPDCSIM_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("SPDCSIM_PURE_PYTHON")
        importlib.reload(kernels)


@pytest.mark.parametrize("backend", BACKENDS, ids=ids)
class TestHistogram:
    @given(a=sorted_ticks, b=sorted_ticks, bw=st.sampled_from([3e-9, 2.5e-9, 1e-9, 4.7e-9]),
           tick=st.sampled_from([162e-12, 1e-9, 0.5e-9]))
    def test_matches_brute_force(self, backend, a, b, bw, tick):
        cfg = CorrelogramConfig(bw, 10 * bw)
        got = backend.windowed_histogram(a, b, bin_thresholds(cfg, tick), False)
        assert got.tolist() == brute_histogram(a, b, tick, bw, cfg.half_bins).tolist()

    @given(a=sorted_ticks)
    def test_self_pairs_excluded(self, backend, a):
        cfg = CorrelogramConfig(1e-9, 20e-9)
        got = backend.windowed_histogram(a, a, bin_thresholds(cfg, 1e-9), True)
        assert got.tolist() == brute_histogram(a, a, 1e-9, 1e-9, cfg.half_bins, True).tolist()
        assert got.tolist() == got[::-1].tolist()


@pytest.mark.parametrize("backend", BACKENDS, ids=ids)
class TestDeadTime:
    @given(t=sorted_ticks, dead=st.floats(0, 300))
    def test_greedy_oracle_and_gap(self, backend, t, dead):
        mask = backend.dead_time_mask(t, dead)
        assert mask.tolist() == greedy_dead_time(t, dead).tolist()
        kept = t[mask]
        assert np.all(np.diff(kept) > dead)

    def test_empty(self, backend):
        assert len(backend.dead_time_mask(np.zeros(0, dtype=np.int64), 5.0)) == 0


@pytest.mark.parametrize("backend", BACKENDS, ids=ids)
def test_ou_matches_sequential_reference(backend):
    rng = np.random.default_rng(3)
    t = np.sort(rng.uniform(0, 1e-5, 3000))
    xi = rng.standard_normal((2, 3000))
    got, re, im = backend.ou_intensity(t, 2e7, xi[0], xi[1], 0.0, 0.3, -0.2)
    ref, rre, rim = ou_reference(t, 2e7, xi[0], xi[1], 0.0, 0.3, -0.2)
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-12)
    assert re == pytest.approx(rre, rel=1e-9, abs=1e-12)
    assert im == pytest.approx(rim, rel=1e-9, abs=1e-12)


@pytest.mark.skipif(CY is None, reason="extension not built")
def test_backends_agree_on_large_input():
    rng = np.random.default_rng(9)
    a = np.sort(rng.integers(0, 10**9, 50_000))
    b = np.sort(rng.integers(0, 10**9, 50_000))
    cfg = CorrelogramConfig(3e-9, 300e-9)
    e = bin_thresholds(cfg, 162e-12)
    assert np.array_equal(PY.windowed_histogram(a, b, e, False), CY.windowed_histogram(a, b, e, False))
    assert np.array_equal(PY.dead_time_mask(a, 6e4), CY.dead_time_mask(a, 6e4))
