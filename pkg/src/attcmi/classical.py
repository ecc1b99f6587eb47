"""Classical inversion baselines: matched filter and iterative least squares.

solve_ls runs conjugate gradients on the normal equations
(H^H H + alpha I) rho = H^H g without ever forming H^H H (CGLS), which keeps
per-iteration cost at two matrix-vector products and makes the timing
comparison against network inference representative.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


@dataclass
class SolverConfig:
    max_iters: int = 100
    rel_tol: float = 1e-6
    tikhonov_alpha: float = 0.0

    def validate(self) -> None:
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.rel_tol <= 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.tikhonov_alpha < 0:
            raise ValueError(f"tikhonov_alpha must be >= 0, got {self.tikhonov_alpha}")


@dataclass
class ReconResult:
    rho_rec: np.ndarray          # magnitude image, length N, entries >= 0
    iterations_used: int
    residual_norm: float         # final ||g - H rho||
    wall_time_s: float
    residual_history: list = field(default_factory=list)
    converged_degenerate: bool = False


def _check_dims(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=complex).reshape(-1)
    if h.shape[0] != g.size:
        raise ShapeError(f"H has {h.shape[0]} rows but g has {g.size} entries")
    return g


def matched_filter(h: np.ndarray, g: np.ndarray) -> ReconResult:
    """Back-projection rho = |H^H g|."""
    g = _check_dims(h, g)
    t0 = time.perf_counter()
    est = h.conj().T @ g
    rho = np.abs(est)
    wall = time.perf_counter() - t0
    resid = float(np.linalg.norm(g - h @ est))
    return ReconResult(rho_rec=rho, iterations_used=0, residual_norm=resid,
                       wall_time_s=wall)


def solve_ls(h: np.ndarray, g: np.ndarray, cfg: SolverConfig = SolverConfig()) -> ReconResult:
    """CGLS estimate of argmin ||g - H rho||^2 (+ alpha ||rho||^2).

    Stops at max_iters or when the normal-equation residual drops below
    rel_tol * ||H^H g||. A zero-curvature search direction is reported as
    converged_degenerate with the last iterate. The data residual ||g - H x||
    per iteration is recorded and is non-increasing.
    """
    cfg.validate()
    g = _check_dims(h, g)
    alpha = cfg.tikhonov_alpha
    hc = np.ascontiguousarray(h.conj().T)

    t0 = time.perf_counter()
    x = np.zeros(h.shape[1], dtype=complex)
    r = g.copy()                 # data residual g - H x
    s = hc @ r                   # normal-equation residual (alpha term is zero at x=0)
    norm_s0 = np.linalg.norm(s)
    p = s.copy()
    gamma = float(np.vdot(s, s).real)
    history = [float(np.linalg.norm(r))]
    iters = 0
    degenerate = False

    if norm_s0 > 0:
        for iters in range(1, cfg.max_iters + 1):
            q = h @ p
            delta = float(np.vdot(q, q).real) + alpha * float(np.vdot(p, p).real)
            if delta <= 0:
                degenerate = True
                iters -= 1
                break
            step = gamma / delta
            x += step * p
            r -= step * q
            s = hc @ r - alpha * x
            history.append(float(np.linalg.norm(r)))
            gamma_new = float(np.vdot(s, s).real)
            if np.sqrt(gamma_new) <= cfg.rel_tol * norm_s0:
                break
            p = s + (gamma_new / gamma) * p
            gamma = gamma_new

    wall = time.perf_counter() - t0
    return ReconResult(rho_rec=np.abs(x), iterations_used=iters,
                       residual_norm=history[-1], wall_time_s=wall,
                       residual_history=history, converged_degenerate=degenerate)


def time_reconstruction(method, h: np.ndarray, samples) -> tuple:
    """Mean and std of per-sample wall time; the first (warm-up) run is excluded.

    ``method`` maps (H, g) -> anything; ``samples`` is a sequence of >= 10
    measurement vectors.
    """
    samples = list(samples)
    if len(samples) < 10:
        raise ValueError(f"need >= 10 samples for a stable mean, got {len(samples)}")
    method(h, samples[0])  # warm-up, not timed
    times = []
    for g in samples:
        t0 = time.perf_counter()
        method(h, g)
        times.append(time.perf_counter() - t0)
    return float(np.mean(times)), float(np.std(times))
