"""Pure-NumPy reference kernels.

Same algorithms, same loop orders and the same sign conventions as the
compiled ``_kernels`` extension. Used when the extension is not built or when
``ADAPTKV_PURE_PYTHON=1`` is set.
"""

import numpy as np


def householder_qr(a):
    """Thin Householder QR with non-negative R diagonal.

    Returns ``(q, r, min_pivot)`` where ``min_pivot`` is the smallest
    sub-column norm met while factorizing (equal to ``min |R_jj|``).
    Never raises on rank deficiency; callers decide.
    """
    a = np.array(a, dtype=np.float64, order="C")
    m, n = a.shape
    r = a.copy()
    vs = np.zeros((n, m))
    min_pivot = np.inf
    for j in range(n):
        x = r[j:, j]
        normx = np.sqrt(x @ x)
        min_pivot = min(min_pivot, normx)
        if normx == 0.0:
            continue
        alpha = -normx if x[0] >= 0.0 else normx
        v = x.copy()
        v[0] -= alpha
        vnorm = np.sqrt(v @ v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        vs[j, j:] = v
        r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
    q = np.eye(m, n)
    for j in range(n - 1, -1, -1):
        v = vs[j, j:]
        q[j:, :] -= 2.0 * np.outer(v, v @ q[j:, :])
    r = np.triu(r[:n, :])
    neg = np.diag(r) < 0.0
    r[neg, :] *= -1.0
    q[:, neg] *= -1.0
    return q, r, float(min_pivot) if n else np.inf


def jacobi_svd_square(a, max_sweeps, tol):
    """One-sided (Hestenes) Jacobi on the columns of ``a``.

    Returns ``(w, v, sweeps)`` with ``a @ v = w`` and the columns of ``w``
    mutually orthogonal. ``sweeps`` is -1 when the cap was hit.
    """
    # rows of wt/vt are the working columns; keeps slices contiguous
    wt = np.array(a, dtype=np.float64).T.copy()
    n = wt.shape[0]
    vt = np.eye(n)
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = wt[p]
                aq = wt[q]
                alpha = ap @ ap
                beta = aq @ aq
                gamma = ap @ aq
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                sgn = 1.0 if zeta >= 0.0 else -1.0
                t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * ap - s * aq
                wt[q] = s * ap + c * aq
                wt[p] = new_p
                vp = vt[p]
                vq = vt[q]
                new_vp = c * vp - s * vq
                vt[q] = s * vp + c * vq
                vt[p] = new_vp
        if not rotated:
            return wt.T.copy(), vt.T.copy(), sweep + 1
    return wt.T.copy(), vt.T.copy(), -1


def masked_softmax_rows(logits, scale, causal_offset):
    """Row softmax of ``scale * logits``; row i sees keys ``0..causal_offset+i``.

    ``causal_offset`` of ``None`` disables masking. Returns ``(weights, bad_row)``
    where ``bad_row`` is the first fully masked row index or -1.
    """
    x = np.asarray(logits, dtype=np.float64) * scale
    m, n = x.shape
    if causal_offset is None:
        visible = np.full(m, n)
    else:
        visible = np.clip(causal_offset + np.arange(m) + 1, 0, n)
    empty = np.flatnonzero(visible <= 0)
    if empty.size:
        return None, int(empty[0])
    mask = np.arange(n)[None, :] < visible[:, None]
    x = np.where(mask, x, -np.inf)
    x = x - x.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(x), 0.0)
    return e / e.sum(axis=1, keepdims=True), -1


def project_rows(x, u):
    """``x @ u`` with a fixed per-element summation order.

    Every output row depends only on its input row, bit for bit, regardless
    of how many rows are processed together.
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros((x.shape[0], u.shape[1]))
    for j in range(x.shape[1]):
        out += x[:, j : j + 1] * u[j]
    return out
