"""Flat key=value config files with dotted keys.

Format: one `key = value` per line, `#` comments, blank lines ignored.
Dotted keys nest (`schedule.kind = linear`).  Values parse as int, float,
bool, or string; comma-separated values parse as lists.  Every subcommand
validates its keys against a registry and rejects unknown ones by name.
"""
from __future__ import annotations

from pathlib import Path

from .optim import OPTIMIZERS, OptimizerConfig, Schedule, linear_rate_for_fraction


class ConfigError(ValueError):
    pass


def _parse_scalar(text: str):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [_parse_scalar(part) for part in text.split(",") if part.strip() != ""]
    return _parse_scalar(text)


def parse_config_text(text: str) -> dict:
    """Parse to a flat {dotted_key: value} dict."""
    flat: dict = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in flat:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = parse_value(value)
    return flat


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


OPTIMIZER_KEYS = {
    "optimizer",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "schedule.kind",
    "schedule.rate",
    "schedule.base",
    "schedule.switch_epoch",
    "schedule.fixed_alpha",
    "switch_fraction",
    "seed",
}

NOISE_KEYS = {"noise.kind", "noise.sigma", "noise.batch_size"}

DATA_KEYS = {"dataset", "n", "classes", "data_noise", "data_seed"}

NET_KEYS = {"layers", "activation", "init_seed"}

TRAIN_KEYS = {"epochs", "batch_size"}

VALID_KEYS = {
    "trajectory": OPTIMIZER_KEYS
    | NOISE_KEYS
    | {"landscape", "start", "max_steps", "classify_radius", "contour_mesh", "expect_diverged"},
    "train": OPTIMIZER_KEYS | DATA_KEYS | NET_KEYS | TRAIN_KEYS | {"expect_diverged"},
    "hessian": OPTIMIZER_KEYS
    | DATA_KEYS
    | {
        "fixture",
        "params_prefix",
        "top_k",
        "probes",
        "power_iters",
        "zeta_min",
        "zeta_max",
        "zeta_points",
        "slice_seed",
    },
    "escape": OPTIMIZER_KEYS
    | NOISE_KEYS
    | {
        "sharpness_grid",
        "delta_l",
        "saddle_curvature",
        "trials",
        "max_steps",
        "bootstrap_samples",
    },
    "sweep": OPTIMIZER_KEYS
    | DATA_KEYS
    | NET_KEYS
    | TRAIN_KEYS
    | {"mode", "rates", "rate_scale", "exp_bases", "fixed_epochs", "expect_diverged"},
}


def validate_keys(flat: dict, subcommand: str) -> None:
    valid = VALID_KEYS[subcommand]
    unknown = sorted(set(flat) - valid)
    if unknown:
        raise ConfigError(
            f"invalid config key(s) for {subcommand}: {', '.join(unknown)}; "
            f"valid keys: {', '.join(sorted(valid))}"
        )


def as_list(value) -> list:
    return list(value) if isinstance(value, list) else [value]


def schedule_from(
    flat: dict,
    optimizer: str,
    total_iterations: int | None = None,
) -> Schedule:
    """Schedule for one optimizer, honoring explicit schedule.* keys.

    adam/adamw/invadam always pin alpha; dualadam defaults to linear with
    the rate taken from schedule.rate, or derived from switch_fraction
    when the total iteration count is known.
    """
    if optimizer in ("adam", "adamw"):
        return Schedule(kind="constant_alpha", fixed_alpha=0.0)
    if optimizer == "invadam":
        return Schedule(kind="constant_alpha", fixed_alpha=1.0)
    kind = flat.get("schedule.kind", "linear")
    if kind == "linear":
        if "schedule.rate" in flat:
            rate = float(flat["schedule.rate"])
        elif total_iterations is not None:
            rate = linear_rate_for_fraction(
                total_iterations, float(flat.get("switch_fraction", 0.16))
            )
        else:
            rate = Schedule().rate
        return Schedule(kind="linear", rate=rate)
    if kind == "exponential":
        return Schedule(kind="exponential", base=float(flat.get("schedule.base", 0.99)))
    if kind == "fixed_epoch":
        return Schedule(
            kind="fixed_epoch", switch_epoch=int(flat.get("schedule.switch_epoch", 0))
        )
    if kind == "constant_alpha":
        return Schedule(
            kind="constant_alpha", fixed_alpha=float(flat.get("schedule.fixed_alpha", 0.0))
        )
    raise ConfigError(f"unknown schedule.kind {kind!r}")


def optimizer_config_from(
    flat: dict,
    optimizer: str | None = None,
    total_iterations: int | None = None,
    schedule: Schedule | None = None,
) -> OptimizerConfig:
    name = optimizer if optimizer is not None else flat.get("optimizer", "dualadam")
    if isinstance(name, list):
        raise ConfigError("pass a single optimizer name here, not a list")
    if name not in OPTIMIZERS:
        raise ConfigError(
            f"unknown optimizer {name!r}; valid optimizers: {', '.join(OPTIMIZERS)}"
        )
    if schedule is None:
        schedule = schedule_from(flat, name, total_iterations)
    return OptimizerConfig(
        optimizer=name,
        learning_rate=float(flat.get("lr", OptimizerConfig.learning_rate)),
        beta1=float(flat.get("beta1", OptimizerConfig.beta1)),
        beta2=float(flat.get("beta2", OptimizerConfig.beta2)),
        epsilon=float(flat.get("eps", OptimizerConfig.epsilon)),
        weight_decay=float(flat.get("weight_decay", 0.0)),
        schedule=schedule,
    )


def parse_seed_spec(spec: str) -> list[int]:
    """Seed list from 'a..b' (inclusive), 'a,b,c', or a single integer."""
    spec = spec.strip()
    if ".." in spec:
        lo_text, _, hi_text = spec.partition("..")
        lo, hi = int(lo_text), int(hi_text)
        if hi < lo:
            raise ConfigError(f"seed range {spec!r} is empty")
        return list(range(lo, hi + 1))
    if "," in spec:
        return [int(part) for part in spec.split(",") if part.strip()]
    return [int(spec)]
