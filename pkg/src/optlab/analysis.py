"""Flatness measurement: Hessians, spectra, traces, and 1D loss slices.

The 2D landscapes get an exact path (finite differences of the analytic
gradient plus the closed-form 2x2 eigensolve).  High-dimensional networks
go through a Hessian-vector product built from central differences of the
gradient, with power iteration for the leading eigenvalues and Hutchinson
probes for the trace.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .landscape import Landscape


@dataclass
class HessianReport:
    """Top-k spectrum and trace estimate at a parameter point.

    On the exact 2D path, trace_estimate is the sum of both eigenvalues
    (stderr 0, num_probes 0).
    """

    top_eigenvalues: list[float]
    trace_estimate: float
    trace_stderr: float
    num_probes: int
    hvp_step: float
    converged: list[bool] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "top_eigenvalues": [float(x) for x in self.top_eigenvalues],
            "trace_estimate": float(self.trace_estimate),
            "trace_stderr": float(self.trace_stderr),
            "num_probes": int(self.num_probes),
            "hvp_step": float(self.hvp_step),
            "converged": [bool(c) for c in self.converged],
        }


@dataclass
class FlatnessSlice:
    """Loss along theta* + zeta * l for a fixed random direction l."""

    zetas: np.ndarray
    losses: np.ndarray
    direction_seed: int
    direction_norm: float

    def loss_at(self, zeta: float) -> float:
        matches = np.flatnonzero(np.isclose(self.zetas, zeta))
        if matches.size == 0:
            raise ValueError(f"zeta {zeta} not on the slice grid")
        return float(self.losses[matches[0]])

    def to_dict(self) -> dict:
        return {
            "zetas": [float(z) for z in self.zetas],
            "losses": [float(v) for v in self.losses],
            "direction_seed": self.direction_seed,
            "direction_norm": float(self.direction_norm),
        }


def hessian_2d(
    landscape: Landscape, point: tuple[float, float], h: float = 1e-5
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetrized finite-difference Hessian of a 2D landscape.

    Central differences of the analytic gradient, symmetrized as
    (H + H^T)/2, eigenpairs from the closed-form 2x2 solution.  Returns
    (H, eigenvalues descending, eigenvectors as columns).
    """
    x, y = float(point[0]), float(point[1])
    xmin, xmax, ymin, ymax = landscape.domain
    if not (xmin + h <= x <= xmax - h and ymin + h <= y <= ymax - h):
        raise ValueError(
            f"point ({x}, {y}) within step {h} of the domain boundary {landscape.domain}"
        )
    cols = [
        (landscape.grad(x + h, y) - landscape.grad(x - h, y)) / (2.0 * h),
        (landscape.grad(x, y + h) - landscape.grad(x, y - h)) / (2.0 * h),
    ]
    raw = np.column_stack(cols)
    hess = 0.5 * (raw + raw.T)
    a, b, c = hess[0, 0], hess[0, 1], hess[1, 1]
    mean = 0.5 * (a + c)
    radius = np.sqrt((0.5 * (a - c)) ** 2 + b**2)
    eigvals = np.array([mean + radius, mean - radius])
    # eigenvector for the leading eigenvalue: (lambda - c, b) and
    # (b, lambda - a) are both valid; keep whichever has the larger norm
    cand_1 = np.array([eigvals[0] - c, b])
    cand_2 = np.array([b, eigvals[0] - a])
    v1 = cand_1 if np.linalg.norm(cand_1) >= np.linalg.norm(cand_2) else cand_2
    norm = np.linalg.norm(v1)
    if norm == 0.0:  # (near-)multiple of the identity: any basis works
        eigvecs = np.eye(2)
    else:
        v1 = v1 / norm
        eigvecs = np.column_stack([v1, np.array([-v1[1], v1[0]])])
    return hess, eigvals, eigvecs


def default_hvp_step(theta: np.ndarray) -> float:
    """1e-4 * (1 + ||theta||): guards the central difference against cancellation."""
    return 1e-4 * (1.0 + float(np.linalg.norm(theta)))


def hvp(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    direction: np.ndarray,
    h: float | None = None,
) -> np.ndarray:
    """H @ d by central differences of the gradient along d.

    Evaluates (g(theta + h*d_hat) - g(theta - h*d_hat)) / (2h) * ||d||;
    exact on quadratics for any h since their gradient is linear.
    """
    direction = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        raise ValueError("direction must be nonzero")
    if h is None:
        h = default_hvp_step(theta)
    if not h > 0:
        raise ValueError(f"step h must be > 0, got {h}")
    unit = direction / norm
    g_plus = grad_fn(theta + h * unit)
    g_minus = grad_fn(theta - h * unit)
    if not (np.all(np.isfinite(g_plus)) and np.all(np.isfinite(g_minus))):
        raise ValueError("non-finite gradient at HVP probe points")
    return (g_plus - g_minus) / (2.0 * h) * norm


def top_eigs(
    hvp_fn: Callable[[np.ndarray], np.ndarray],
    p: int,
    k: int,
    iters: int = 100,
    seed: int = 0,
    tol: float = 1e-9,
) -> tuple[list[float], list[bool]]:
    """Top-k eigenvalues by power iteration with deflation.

    Converges to the dominant-magnitude eigenvalues; each new value is
    deflated out before the next runs.  Values that fail to stabilize
    within `iters` are returned as the last Rayleigh quotient with the
    converged flag cleared.
    """
    if not 1 <= k <= min(p, 10):
        raise ValueError(f"k must be in [1, min(p, 10)] = [1, {min(p, 10)}], got {k}")
    rng = np.random.default_rng(seed)
    eigenvalues: list[float] = []
    eigenvectors: list[np.ndarray] = []
    converged: list[bool] = []

    def deflated(vec: np.ndarray) -> np.ndarray:
        out = hvp_fn(vec)
        for lam, evec in zip(eigenvalues, eigenvectors):
            out = out - lam * (evec @ vec) * evec
        return out

    for _ in range(k):
        v = rng.standard_normal(p)
        for evec in eigenvectors:
            v -= (evec @ v) * evec
        v /= np.linalg.norm(v)
        lam_prev = np.inf
        ok = False
        lam = 0.0
        for _ in range(iters):
            w = deflated(v)
            lam = float(v @ w)
            norm = np.linalg.norm(w)
            if norm == 0.0:
                lam, ok = 0.0, True
                break
            v = w / norm
            for evec in eigenvectors:
                v -= (evec @ v) * evec
            v /= np.linalg.norm(v)
            if abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
                ok = True
                break
            lam_prev = lam
        eigenvalues.append(lam)
        eigenvectors.append(v)
        converged.append(ok)
    order = np.argsort(eigenvalues)[::-1]
    return [eigenvalues[i] for i in order], [converged[i] for i in order]


def hutchinson_trace(
    hvp_fn: Callable[[np.ndarray], np.ndarray],
    p: int,
    probes: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Rademacher trace estimate: mean of z^T H z with its standard error."""
    if probes < 4:
        raise ValueError(f"need at least 4 probes, got {probes}")
    rng = np.random.default_rng(seed)
    samples = np.empty(probes)
    for i in range(probes):
        z = rng.integers(0, 2, size=p) * 2.0 - 1.0
        samples[i] = z @ hvp_fn(z)
    estimate = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(probes))
    return estimate, stderr


def flatness_slice(
    loss_fn: Callable[[np.ndarray], float],
    theta_star: np.ndarray,
    zeta_grid: np.ndarray | None = None,
    seed: int = 0,
) -> FlatnessSlice:
    """Loss along a random direction scaled to ||l|| = sqrt(p).

    The sqrt(p) normalization keeps the per-coordinate perturbation O(1)
    regardless of network size.  The grid must contain 0 so the slice is
    anchored at the unperturbed loss.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    p = theta_star.shape[0]
    if zeta_grid is None:
        zeta_grid = np.linspace(-1.0, 1.0, 41)
    zeta_grid = np.asarray(zeta_grid, dtype=float)
    if not np.any(zeta_grid == 0.0):
        raise ValueError("zeta grid must contain 0")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(p)
    direction *= np.sqrt(p) / np.linalg.norm(direction)
    losses = np.array([loss_fn(theta_star + z * direction) for z in zeta_grid])
    return FlatnessSlice(
        zetas=zeta_grid,
        losses=losses,
        direction_seed=seed,
        direction_norm=float(np.linalg.norm(direction)),
    )


def hessian_report_2d(landscape: Landscape, point: tuple[float, float], h: float = 1e-5) -> HessianReport:
    """Exact-path report: both eigenvalues, trace = their sum."""
    _, eigvals, _ = hessian_2d(landscape, point, h)
    return HessianReport(
        top_eigenvalues=[float(eigvals[0]), float(eigvals[1])],
        trace_estimate=float(eigvals[0] + eigvals[1]),
        trace_stderr=0.0,
        num_probes=0,
        hvp_step=h,
        converged=[True, True],
    )


def hessian_report(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    k: int = 1,
    iters: int = 100,
    probes: int = 32,
    seed: int = 0,
    h: float | None = None,
) -> HessianReport:
    """HVP-path report for a high-dimensional loss."""
    theta = np.asarray(theta, dtype=float)
    if h is None:
        h = default_hvp_step(theta)
    p = theta.shape[0]

    def hvp_fn(d: np.ndarray) -> np.ndarray:
        return hvp(grad_fn, theta, d, h)

    eigs, conv = top_eigs(hvp_fn, p, k, iters=iters, seed=seed)
    trace, stderr = hutchinson_trace(hvp_fn, p, probes, seed=seed)
    return HessianReport(
        top_eigenvalues=eigs,
        trace_estimate=trace,
        trace_stderr=stderr,
        num_probes=probes,
        hvp_step=h,
        converged=conv,
    )


SLICE_COLUMNS = ("zeta", "loss")


def write_slice_csv(slc: FlatnessSlice, path) -> None:
    from .runio import write_csv

    write_csv(path, SLICE_COLUMNS, zip(slc.zetas, slc.losses))
