"""Shared oracles: finite differences and naive loop implementations."""

import numpy as np

from attcmi import tensor as T


def fd_grad(loss_fn, param: T.Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. every element."""
    g = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = loss_fn().item()
        flat[i] = keep - step
        lo = loss_fn().item()
        flat[i] = keep
        gf[i] = (hi - lo) / (2.0 * step)
    return g


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray,
                      rtol: float = 1e-4, atol: float = 1e-6):
    err = np.abs(analytic - numeric)
    tol = atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
    worst = np.argmax(err - tol)
    assert np.all(err <= tol), (
        f"gradient mismatch at flat index {worst}: "
        f"analytic {analytic.reshape(-1)[worst]} vs fd {numeric.reshape(-1)[worst]}"
    )


def check_op_grads(build_loss, params, step=1e-5, rtol=1e-4, atol=1e-6):
    """Check analytic grads of a scalar-producing closure against FD."""
    T.zero_grad(params)
    loss = build_loss()
    T.backward(loss)
    for p in params:
        numeric = fd_grad(build_loss, p, step=step)
        assert p.grad is not None
        assert_grad_close(p.grad, numeric, rtol=rtol, atol=atol)


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv2d_loops(x: np.ndarray, k: np.ndarray, stride: int,
                 pads=(0, 0, 0, 0)) -> np.ndarray:
    """Direct cross-correlation, quadruple loop over output and kernel."""
    pt, pb, pl, pr = pads
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    b, hp, wp, cin = xp.shape
    kh, kw, _, cout = k.shape
    h2 = (hp - kh) // stride + 1
    w2 = (wp - kw) // stride + 1
    out = np.zeros((b, h2, w2, cout))
    for n in range(b):
        for i in range(h2):
            for j in range(w2):
                for co in range(cout):
                    acc = 0.0
                    for u in range(kh):
                        for v in range(kw):
                            for ci in range(cin):
                                acc += xp[n, i * stride + u, j * stride + v, ci] * k[u, v, ci, co]
                    out[n, i, j, co] = acc
    return out


def conv2d_transpose_scatter(x: np.ndarray, k: np.ndarray, stride: int) -> np.ndarray:
    """Explicit scatter oracle for the 'valid' transpose convolution."""
    b, h2, w2, cout = x.shape
    kh, kw, cin, _ = k.shape
    out = np.zeros((b, (h2 - 1) * stride + kh, (w2 - 1) * stride + kw, cin))
    for n in range(b):
        for i in range(h2):
            for j in range(w2):
                for co in range(cout):
                    for u in range(kh):
                        for v in range(kw):
                            for ci in range(cin):
                                out[n, i * stride + u, j * stride + v, ci] += x[n, i, j, co] * k[u, v, ci, co]
    return out


def complex_matvec_loops(h: np.ndarray, x: np.ndarray) -> np.ndarray:
    m, n = h.shape
    out = np.zeros(m, dtype=complex)
    for i in range(m):
        acc = 0.0 + 0.0j
        for j in range(n):
            acc += h[i, j] * x[j]
        out[i] = acc
    return out
