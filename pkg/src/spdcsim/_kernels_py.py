"""Pure numpy implementations of the hot loops.

Same signatures and integer results as the compiled ``_kernels`` module.
Used when the extension is not built or ``SPDCSIM_PURE_PYTHON=1``.
"""
import numpy as np

BACKEND = "python"

_OU_BLOCK = 1 << 18


def windowed_histogram(a, b, edges, exclude_self):
    """Histogram every delay ``b - a`` inside ``[edges[0], edges[-1])``.

    ``edges[k]`` is the smallest integer tick delay belonging to bin ``k``;
    the last entry closes the final bin.  With ``exclude_self`` the pair
    (i, i) is skipped (a and b are the same stream).
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    edges = np.asarray(edges, dtype=np.int64)
    nb = len(edges) - 1
    counts = np.zeros(nb, dtype=np.int64)
    if len(a) == 0 or len(b) == 0 or nb <= 0:
        return counts
    start = np.searchsorted(b, a + edges[0], side="left")
    stop = np.searchsorted(b, a + edges[-1], side="left")
    width = stop - start
    idx = np.arange(len(a))
    for k in range(int(width.max())):
        live = width > k
        j = start[live] + k
        d = b[j] - a[live]
        if exclude_self:
            d = d[j != idx[live]]
        counts += np.bincount(np.searchsorted(edges, d, side="right") - 1, minlength=nb)
    return counts


def dead_time_mask(ticks, dead):
    """Non-paralyzable dead time: keep a tag only if it is more than ``dead``
    ticks after the previously kept one."""
    ticks = np.asarray(ticks, dtype=np.int64)
    n = len(ticks)
    keep = np.zeros(n, dtype=bool)
    if n == 0:
        return keep
    gap = np.empty(n, dtype=np.float64)
    gap[0] = np.inf
    gap[1:] = np.diff(ticks)
    # a raw gap above the dead time always survives, whatever was dropped before
    keep[gap > dead] = True
    for i in np.flatnonzero(gap <= dead):
        # walk back to the last kept tag; clusters are short at sane rates
        j = i - 1
        while not keep[j]:
            j -= 1
        keep[i] = ticks[i] - ticks[j] > dead
    return keep


def _scan_block(c, w, state):
    # inclusive scan of a_k = c_k a_{k-1} + w_k by recursive doubling
    c = c.copy()
    w = w.copy()
    w[0] += c[0] * state
    shift = 1
    n = len(c)
    while shift < n:
        w[shift:] = w[shift:] + c[shift:] * w[:-shift]
        c[shift:] = c[shift:] * c[:-shift]
        shift <<= 1
    return w


def ou_intensity(times, theta, xi_re, xi_im, t0, a0_re, a0_im):
    """|a(t_k)|^2 of a unit-power complex Ornstein-Uhlenbeck field.

    ``theta`` is the amplitude decay rate, ``xi_*`` standard normal
    innovations (one per time) and ``a0`` the field at time ``t0``.
    Returns ``(intensity, last_re, last_im)`` so long runs can be chunked.
    """
    times = np.asarray(times, dtype=np.float64)
    n = len(times)
    out = np.empty(n, dtype=np.float64)
    if n == 0:
        return out, a0_re, a0_im
    dt = np.diff(times, prepend=t0)
    decay = np.exp(-theta * dt)
    scale = np.sqrt(np.maximum(1.0 - decay * decay, 0.0) * 0.5)
    innov = scale * (np.asarray(xi_re) + 1j * np.asarray(xi_im))
    state = complex(a0_re, a0_im)
    for s in range(0, n, _OU_BLOCK):
        e = min(s + _OU_BLOCK, n)
        field = _scan_block(decay[s:e].astype(np.complex128), innov[s:e], state)
        out[s:e] = field.real ** 2 + field.imag ** 2
        state = field[-1]
    return out, state.real, state.imag
