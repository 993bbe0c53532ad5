"""Adam-family optimizers on flat parameter vectors.

Four optimizers share one update pipeline:

    m_t = beta1 * m_{t-1} + (1 - beta1) * g_t
    v_t = beta2 * v_{t-1} + (1 - beta2) * g_t**2
    m_hat = m_t / (1 - beta1**t)
    v_hat = v_t / (1 - beta2**t)
    u       = m_hat / (sqrt(v_hat) + eps)        # quotient form (Adam)
    u_tilde = m_hat * sqrt(v_hat)                # product form (InvAdam)
    blend   = alpha * u_tilde + (1 - alpha) * u
    theta  -= lr * blend

Adam is alpha = 0, InvAdam is alpha = 1, and DualAdam moves alpha from 1
to 0 under a switching schedule (linear by default).  AdamW is Adam plus
decoupled weight decay.  The quotient form shrinks the step where the
second moment is large; the product form enlarges it there, which is what
lets the product form leave high-curvature basins.

All operations are elementwise, so a step sharded over disjoint index
ranges reproduces the unsharded result bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMIZERS = ("adam", "adamw", "invadam", "dualadam")
SCHEDULE_KINDS = ("linear", "exponential", "fixed_epoch", "constant_alpha")

# Paper-default hyperparameters.
DEFAULT_LR = 1e-3
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8
DEFAULT_SWITCHING_RATE = 8e-5


@dataclass(frozen=True)
class Schedule:
    """Maps the step counter t (and epoch) to the product-form weight alpha.

    kind:
      linear         alpha = max(0, 1 - rate * t)
      exponential    alpha = base ** t
      fixed_epoch    alpha = 1 while epoch < switch_epoch, then 0
      constant_alpha alpha = fixed_alpha forever (0 -> pure quotient form,
                     1 -> pure product form)
    """

    kind: str = "linear"
    rate: float = DEFAULT_SWITCHING_RATE
    base: float = 0.99
    switch_epoch: int = 0
    fixed_alpha: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(
                f"unknown schedule kind {self.kind!r}; valid kinds: {SCHEDULE_KINDS}"
            )
        if self.kind == "linear" and self.rate < 0:
            raise ValueError(f"linear schedule rate must be >= 0, got {self.rate}")
        if self.kind == "exponential" and not 0.0 < self.base <= 1.0:
            raise ValueError(f"exponential base must be in (0, 1], got {self.base}")
        if self.kind == "fixed_epoch" and self.switch_epoch < 0:
            raise ValueError(f"switch_epoch must be >= 0, got {self.switch_epoch}")
        if self.kind == "constant_alpha" and not 0.0 <= self.fixed_alpha <= 1.0:
            raise ValueError(f"fixed_alpha must be in [0, 1], got {self.fixed_alpha}")


def alpha_at(schedule: Schedule, t: int, epoch: int = 0) -> float:
    """Evaluate the schedule at step t >= 1.  Result is clamped to [0, 1]."""
    if t < 1:
        raise ValueError(f"step counter must be >= 1, got {t}")
    if schedule.kind == "linear":
        alpha = max(0.0, 1.0 - schedule.rate * t)
    elif schedule.kind == "exponential":
        alpha = schedule.base**t
    elif schedule.kind == "fixed_epoch":
        alpha = 1.0 if epoch < schedule.switch_epoch else 0.0
    else:
        alpha = schedule.fixed_alpha
    return min(1.0, max(0.0, alpha))


def linear_rate_for_fraction(total_iterations: int, fraction: float = 0.16) -> float:
    """Linear rate that drives alpha to 0 after `fraction` of the run.

    Mirrors the large-scale setting where the product form is active only
    for a brief opening portion of training.
    """
    if total_iterations < 1:
        raise ValueError(f"total_iterations must be >= 1, got {total_iterations}")
    if not 0.0 < fraction:
        raise ValueError(f"fraction must be positive, got {fraction}")
    return 1.0 / (fraction * total_iterations)


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters shared by the whole optimizer family.

    weight_decay is decoupled (AdamW style) and must stay 0 for every
    optimizer except adamw.
    """

    optimizer: str = "dualadam"
    learning_rate: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPS
    weight_decay: float = 0.0
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(
                f"unknown optimizer {self.optimizer!r}; valid optimizers: {OPTIMIZERS}"
            )
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in [0, 1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in [0, 1), got {self.beta2}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.weight_decay != 0.0 and self.optimizer != "adamw":
            raise ValueError("weight_decay is only supported for adamw")


def make_config(optimizer: str = "dualadam", **overrides) -> OptimizerConfig:
    """Build a config with the canonical schedule for a named optimizer.

    adam/adamw pin alpha to 0, invadam pins it to 1, dualadam defaults to
    the linear schedule (rate overridable via `schedule`).
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(
            f"unknown optimizer {optimizer!r}; valid optimizers: {OPTIMIZERS}"
        )
    if "schedule" not in overrides:
        if optimizer in ("adam", "adamw"):
            overrides["schedule"] = Schedule(kind="constant_alpha", fixed_alpha=0.0)
        elif optimizer == "invadam":
            overrides["schedule"] = Schedule(kind="constant_alpha", fixed_alpha=1.0)
        else:
            overrides["schedule"] = Schedule(kind="linear", rate=DEFAULT_SWITCHING_RATE)
    return OptimizerConfig(optimizer=optimizer, **overrides)


@dataclass(frozen=True)
class OptimizerState:
    """First/second moment vectors plus the step counter.

    v accumulates squared gradients and stays elementwise >= 0 for the
    lifetime of the state.
    """

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, p: int) -> "OptimizerState":
        if p < 1:
            raise ValueError(f"parameter count must be >= 1, got {p}")
        return cls(m=np.zeros(p), v=np.zeros(p), t=0)

    @property
    def p(self) -> int:
        return self.m.shape[0]


@dataclass(frozen=True)
class StepReport:
    """Per-step telemetry for trajectory CSVs."""

    alpha: float
    update_norm: float
    adam_part_norm: float
    inv_part_norm: float


def update_moments(
    state: OptimizerState, g: np.ndarray, cfg: OptimizerConfig
) -> OptimizerState:
    """Exponential moving averages of g and g**2; bumps t by one."""
    g = np.asarray(g, dtype=float)
    if g.shape != state.m.shape:
        raise ValueError(
            f"gradient length {g.shape} does not match state length {state.m.shape}"
        )
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise ValueError(f"non-finite gradient at index {bad}: {g[bad]}")
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g**2
    return OptimizerState(m=m, v=v, t=state.t + 1)


def bias_correct(
    state: OptimizerState, cfg: OptimizerConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Remove the zero-initialization bias: m/(1 - beta1^t), v/(1 - beta2^t)."""
    if state.t < 1:
        raise ValueError("bias correction needs t >= 1 (denominator is 0 at t=0)")
    m_hat = state.m / (1.0 - cfg.beta1**state.t)
    v_hat = state.v / (1.0 - cfg.beta2**state.t)
    return m_hat, v_hat


def adam_update(m_hat: np.ndarray, v_hat: np.ndarray, eps: float) -> np.ndarray:
    """Quotient form: m_hat / (sqrt(v_hat) + eps)."""
    return m_hat / (np.sqrt(v_hat) + eps)


def invadam_update(m_hat: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    """Product form: m_hat * sqrt(v_hat).  No eps; nothing is divided."""
    return m_hat * np.sqrt(v_hat)


def step(
    state: OptimizerState,
    theta: np.ndarray,
    g: np.ndarray,
    cfg: OptimizerConfig,
    epoch: int = 0,
) -> tuple[np.ndarray, OptimizerState, StepReport]:
    """One optimizer step: theta' = theta - lr * blend(alpha).

    Pure function of (state, theta, g, cfg, epoch): identical inputs give
    bit-identical outputs.  AdamW's decoupled decay subtracts
    lr * weight_decay * theta outside the gradient path.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != state.m.shape:
        raise ValueError(
            f"parameter length {theta.shape} does not match state length {state.m.shape}"
        )
    new_state = update_moments(state, g, cfg)
    m_hat, v_hat = bias_correct(new_state, cfg)
    u = adam_update(m_hat, v_hat, cfg.epsilon)
    u_tilde = invadam_update(m_hat, v_hat)
    alpha = alpha_at(cfg.schedule, new_state.t, epoch)
    blend = alpha * u_tilde + (1.0 - alpha) * u
    new_theta = theta - cfg.learning_rate * blend
    if cfg.weight_decay != 0.0:
        new_theta = new_theta - cfg.learning_rate * cfg.weight_decay * theta
    report = StepReport(
        alpha=alpha,
        update_norm=float(np.linalg.norm(blend)),
        adam_part_norm=float(np.linalg.norm(u)),
        inv_part_norm=float(np.linalg.norm(u_tilde)),
    )
    return new_theta, new_state, report


# Per-parameter FLOP breakdown of the blended step.  The quotient-only
# step fuses the update path, fusion, and weight update into 5 FLOPs.
FLOPS_BREAKDOWN = {
    "moments": 7,
    "bias_correction": 2,
    "update_path": 4,
    "fusion": 3,
    "weight_update": 2,
}


def flops_per_iteration(p: int, optimizer: str, alpha_active: bool = True) -> int:
    """Theoretical per-iteration FLOP count.

    dualadam costs 18p while the blend is active and falls back to the
    14p quotient-only step once alpha has reached 0 (the residual alpha
    bookkeeping is O(1), counted as 0p).
    """
    if p < 1:
        raise ValueError(f"parameter count must be >= 1, got {p}")
    if optimizer not in OPTIMIZERS:
        raise ValueError(
            f"unknown optimizer {optimizer!r}; valid optimizers: {OPTIMIZERS}"
        )
    if optimizer == "dualadam":
        return 18 * p if alpha_active else 14 * p
    if optimizer == "adam":
        return 14 * p
    if optimizer == "adamw":
        # decoupled decay adds one multiply and one subtract per parameter
        return 16 * p
    # product-only path: sqrt + multiply + lr multiply + subtract = 4p
    return 13 * p


def optimizer_overhead_fraction(batch_size: int) -> float:
    """Blend overhead (4p) over the ~6*b*p forward/backward cost: 4/(6b)."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    return 4.0 / (6.0 * batch_size)


def shard_step(
    state: OptimizerState,
    theta: np.ndarray,
    g: np.ndarray,
    cfg: OptimizerConfig,
    shards: list[np.ndarray],
    epoch: int = 0,
) -> tuple[np.ndarray, OptimizerState, list[StepReport]]:
    """Run `step` independently on disjoint index ranges and reassemble.

    Every update is elementwise, so this must equal the unsharded step bit
    for bit; it exists so that equality is a tested guarantee rather than
    an assumption.
    """
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(g, dtype=float)
    covered = np.concatenate(shards) if shards else np.array([], dtype=int)
    if len(np.unique(covered)) != theta.shape[0] or covered.shape[0] != theta.shape[0]:
        raise ValueError("shards must partition the index range exactly")
    new_theta = np.empty_like(theta)
    new_m = np.empty_like(state.m)
    new_v = np.empty_like(state.v)
    reports = []
    for idx in shards:
        sub_state = OptimizerState(m=state.m[idx], v=state.v[idx], t=state.t)
        sub_theta, sub_new, rep = step(sub_state, theta[idx], g[idx], cfg, epoch)
        new_theta[idx] = sub_theta
        new_m[idx] = sub_new.m
        new_v[idx] = sub_new.v
        reports.append(rep)
    return new_theta, OptimizerState(m=new_m, v=new_v, t=state.t + 1), reports
