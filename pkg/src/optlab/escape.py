"""Escape-time Monte Carlo on tunable-sharpness barrier potentials.

The potential is a 1D well of curvature H_phi at the origin joined C^1 to
an inverted parabola of curvature H_chi whose apex sits at the barrier
height delta_L.  Trials start at the well bottom, step the chosen
optimizer dynamics with noisy gradients, and record the first step that
crosses the saddle (plus a small margin).  Trials are driven by
per-trial generators seeded as (seed, trial index), so every trial is
reproducible in isolation and statistics cannot depend on trial order.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .landscape import NoiseModel
from .optim import OptimizerConfig, OptimizerState, Schedule, step

ESCAPE_DYNAMICS = ("adam", "invadam")
# the escape is declared a little past the saddle to avoid counting grazes
ESCAPE_MARGIN = 0.05
_NOISE_BLOCK = 1024


@dataclass(frozen=True)
class BarrierPotential:
    """Piecewise quadratic well + inverted-quadratic barrier, C^1 matched.

        U(x) = H_phi * x^2 / 2                     for x <= junction
        U(x) = delta_L - H_chi * (x - saddle)^2/2  for x >  junction

    The junction and saddle positions follow from continuity of U and U':
    junction = sqrt(2*delta_L*H_chi / (H_phi*(H_phi + H_chi))) and
    saddle = junction * (H_phi + H_chi) / H_chi.
    """

    sharpness: float  # curvature at the trapped minimum (H_phi)
    barrier: float  # well depth delta_L = U(saddle) - U(0)
    saddle_curvature: float  # |curvature| at the saddle (H_chi)
    junction: float
    saddle: float
    escape_threshold: float

    def loss(self, x):
        x = np.asarray(x, dtype=float)
        well = 0.5 * self.sharpness * x**2
        hill = self.barrier - 0.5 * self.saddle_curvature * (x - self.saddle) ** 2
        return np.where(x <= self.junction, well, hill)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(
            x <= self.junction,
            self.sharpness * x,
            -self.saddle_curvature * (x - self.saddle),
        )

    def curvature(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.junction, self.sharpness, -self.saddle_curvature)


def make_barrier(h_phi: float, delta_l: float, h_chi: float) -> BarrierPotential:
    """Build the two-piece potential for given curvatures and barrier height."""
    if not (h_phi > 0 and delta_l > 0 and h_chi > 0):
        raise ValueError(
            "all of h_phi, delta_l, h_chi must be > 0 for the C1 matching to "
            f"be feasible; got h_phi={h_phi}, delta_l={delta_l}, h_chi={h_chi}"
        )
    junction = np.sqrt(2.0 * delta_l * h_chi / (h_phi * (h_phi + h_chi)))
    saddle = junction * (h_phi + h_chi) / h_chi
    return BarrierPotential(
        sharpness=float(h_phi),
        barrier=float(delta_l),
        saddle_curvature=float(h_chi),
        junction=float(junction),
        saddle=float(saddle),
        escape_threshold=float(saddle * (1.0 + ESCAPE_MARGIN)),
    )


@dataclass
class EscapeStats:
    """First-passage step counts for one (potential, dynamics) cell."""

    trials: int
    escape_steps: np.ndarray  # step of first crossing; max_steps where censored
    censored: np.ndarray  # bool per trial
    median: float  # over uncensored trials only
    mean: float  # over uncensored trials only
    censoring_rate: float
    median_unreliable: bool  # censoring_rate > 0.5
    noise_warning: bool = False  # noise kind 'none': escape impossible

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "escape_steps": [int(s) for s in self.escape_steps],
            "censored": [bool(c) for c in self.censored],
            "median": float(self.median),
            "mean": float(self.mean),
            "censoring_rate": float(self.censoring_rate),
            "median_unreliable": self.median_unreliable,
            "noise_warning": self.noise_warning,
        }


def summarize_escapes(
    escape_steps: np.ndarray, censored: np.ndarray, noise_warning: bool = False
) -> EscapeStats:
    trials = escape_steps.shape[0]
    uncensored = escape_steps[~censored]
    rate = float(censored.mean())
    return EscapeStats(
        trials=trials,
        escape_steps=escape_steps,
        censored=censored,
        median=float(np.median(uncensored)) if uncensored.size else float("nan"),
        mean=float(uncensored.mean()) if uncensored.size else float("nan"),
        censoring_rate=rate,
        median_unreliable=rate > 0.5,
        noise_warning=noise_warning,
    )


def _dynamics_config(dynamics: str, cfg: OptimizerConfig | None) -> OptimizerConfig:
    if dynamics not in ESCAPE_DYNAMICS:
        raise ValueError(
            f"unknown dynamics {dynamics!r}; valid dynamics: {ESCAPE_DYNAMICS}"
        )
    base = cfg if cfg is not None else OptimizerConfig(optimizer=dynamics)
    alpha = 1.0 if dynamics == "invadam" else 0.0
    return replace(
        base,
        optimizer=dynamics,
        weight_decay=0.0,
        schedule=Schedule(kind="constant_alpha", fixed_alpha=alpha),
    )


def run_escape(
    potential: BarrierPotential,
    dynamics: str,
    noise: NoiseModel,
    cfg: OptimizerConfig | None = None,
    max_steps: int = 10_000,
    trials: int = 200,
    seed: int = 0,
) -> EscapeStats:
    """First-passage Monte Carlo from the well bottom over the saddle.

    Noise is added to the raw gradient before the moment updates.  All
    trials advance in lockstep as one elementwise optimizer step (the
    update is per-coordinate, so this is exact); each trial's noise
    stream comes from its own (seed, trial) generator.  Escaped trials
    are frozen at their crossing position.
    """
    if trials < 10:
        raise ValueError(f"need at least 10 trials, got {trials}")
    if max_steps < 1_000:
        raise ValueError(f"need max_steps >= 1000, got {max_steps}")
    run_cfg = _dynamics_config(dynamics, cfg)
    rngs = [np.random.default_rng([seed, i]) for i in range(trials)]
    x = np.zeros(trials)
    state = OptimizerState.zeros(trials)
    escape_step = np.full(trials, max_steps, dtype=int)
    done = np.zeros(trials, dtype=bool)
    block = np.empty((trials, 0))
    for t in range(max_steps):
        j = t % _NOISE_BLOCK
        if j == 0:
            block = np.stack(
                [rng.standard_normal(_NOISE_BLOCK) for rng in rngs], axis=0
            )
        if noise.kind == "none":
            eta = np.zeros(trials)
        elif noise.kind == "isotropic_gaussian":
            eta = noise.sigma * block[:, j]
        else:
            scale = np.sqrt(np.abs(potential.curvature(x)) / noise.batch_size)
            eta = noise.sigma * scale * block[:, j]
        g = potential.grad(x) + eta
        g[done] = 0.0
        new_x, state, _ = step(state, x, g, run_cfg)
        new_x[done] = x[done]
        x = new_x
        crossed = (~done) & (x >= potential.escape_threshold)
        escape_step[crossed] = t + 1
        done |= crossed
        if done.all():
            break
    return summarize_escapes(escape_step, ~done, noise_warning=noise.kind == "none")


@dataclass
class ScalingFit:
    """Least squares of log(median escape steps) on H_phi**exponent."""

    slope: float
    slope_stderr: float
    intercept: float
    r_squared: float
    regressor_exponent: float
    n_points: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "regressor_exponent": self.regressor_exponent,
            "n_points": self.n_points,
        }


# predicted log-escape-time scaling: quotient dynamics ~ H^(-1/2),
# product dynamics ~ H^(-3/2)
FIT_EXPONENTS = {"adam": -0.5, "invadam": -1.5}


def scaling_fit(
    grid: list[tuple[float, EscapeStats]], regressor_exponent: float
) -> ScalingFit:
    """Fit log(median) = slope * H**exponent + intercept over the grid.

    This is a trend check, not a constant-recovery check: the interesting
    output is the slope sign/magnitude ordering between dynamics.
    """
    if len(grid) < 4:
        raise ValueError(f"need at least 4 grid points, got {len(grid)}")
    too_censored = [h for h, stats in grid if stats.censoring_rate >= 0.5]
    if too_censored:
        raise ValueError(
            f"censoring rate >= 0.5 at grid points {too_censored}; medians "
            "there are unreliable"
        )
    h_values = np.array([h for h, _ in grid], dtype=float)
    medians = np.array([stats.median for _, stats in grid], dtype=float)
    x = h_values**regressor_exponent
    y = np.log(medians)
    n = len(grid)
    x_mean = x.mean()
    y_mean = y.mean()
    sxx = float(((x - x_mean) ** 2).sum())
    slope = float(((x - x_mean) * (y - y_mean)).sum() / sxx)
    intercept = float(y_mean - slope * x_mean)
    residuals = y - (slope * x + intercept)
    ssr = float((residuals**2).sum())
    sst = float(((y - y_mean) ** 2).sum())
    stderr = np.sqrt(ssr / (n - 2) / sxx) if n > 2 else float("nan")
    r_squared = 1.0 - ssr / sst if sst > 0 else 1.0
    return ScalingFit(
        slope=slope,
        slope_stderr=float(stderr),
        intercept=intercept,
        r_squared=r_squared,
        regressor_exponent=regressor_exponent,
        n_points=n,
    )


def median_ratio_by_sharpness(
    adam_grid: list[tuple[float, EscapeStats]],
    invadam_grid: list[tuple[float, EscapeStats]],
) -> tuple[np.ndarray, np.ndarray]:
    """(sharpness values, median_invadam / median_adam) sorted by sharpness."""
    adam = dict(adam_grid)
    inv = dict(invadam_grid)
    if set(adam) != set(inv):
        raise ValueError("dynamics grids cover different sharpness values")
    hs = np.array(sorted(adam), dtype=float)
    ratios = np.array([inv[h].median / adam[h].median for h in hs])
    return hs, ratios


def bootstrap_ratio_decreasing(
    adam_grid: list[tuple[float, EscapeStats]],
    invadam_grid: list[tuple[float, EscapeStats]],
    n_boot: int = 1000,
    seed: int = 0,
) -> float:
    """Fraction of bootstrap replicates with a non-increasing ratio curve.

    Each replicate resamples trials with replacement inside every cell and
    recomputes the censoring-aware medians.  A replicate with an empty
    uncensored resample in any cell counts against monotonicity.
    """
    rng = np.random.default_rng(seed)
    adam = dict(adam_grid)
    inv = dict(invadam_grid)
    hs = sorted(adam)
    hits = 0
    for _ in range(n_boot):
        ok = True
        prev = np.inf
        for h in hs:
            ratio_parts = []
            for stats in (inv[h], adam[h]):
                idx = rng.integers(0, stats.trials, size=stats.trials)
                steps = stats.escape_steps[idx]
                cens = stats.censored[idx]
                kept = steps[~cens]
                if kept.size == 0:
                    ok = False
                    break
                ratio_parts.append(np.median(kept))
            if not ok:
                break
            ratio = ratio_parts[0] / ratio_parts[1]
            if ratio > prev:
                ok = False
                break
            prev = ratio
        hits += ok
    return hits / n_boot


ESCAPE_SUMMARY_COLUMNS = (
    "H_phi",
    "dynamics",
    "median_steps",
    "mean_steps",
    "censoring_rate",
)


def write_escape_summary_csv(
    rows: list[tuple[float, str, EscapeStats]], path
) -> None:
    from .runio import write_csv

    def gen():
        for h, dynamics, stats in rows:
            yield (h, dynamics, stats.median, stats.mean, stats.censoring_rate)

    write_csv(path, ESCAPE_SUMMARY_COLUMNS, gen())
