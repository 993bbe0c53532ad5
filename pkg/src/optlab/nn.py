"""Small fully-connected classifier with hand-written backprop.

Parameters live in one flat vector so the optimizers can treat the
network exactly like the 2D landscapes.  Datasets are synthetic
(two moons, spirals), seed-deterministic, and pre-split 64/16/20.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import OptimizerConfig, OptimizerState, alpha_at, step

ACTIVATIONS = ("relu", "tanh")


def num_params(layer_sizes: list[int]) -> int:
    return sum(
        n_in * n_out + n_out for n_in, n_out in zip(layer_sizes, layer_sizes[1:])
    )


@dataclass
class Network:
    """Layer sizes, activation, and the flat parameter vector.

    The index map packs each layer as [W (n_in*n_out), b (n_out)] in
    order, so params[offsets[k]:offsets[k+1]] is layer k.
    """

    layer_sizes: list[int]
    activation: str
    params: np.ndarray

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(n < 1 for n in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; valid: {ACTIVATIONS}"
            )
        expected = num_params(self.layer_sizes)
        if self.params.shape != (expected,):
            raise ValueError(
                f"params must have shape ({expected},), got {self.params.shape}"
            )

    @property
    def p(self) -> int:
        return self.params.shape[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def unpack(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        theta = self.params if params is None else params
        layers = []
        offset = 0
        for n_in, n_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            w = theta[offset : offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = theta[offset : offset + n_out]
            offset += n_out
            layers.append((w, b))
        return layers


def make_network(layer_sizes: list[int], activation: str = "tanh", seed: int = 0) -> Network:
    """Glorot-uniform init: U(-sqrt(6/(n_in+n_out)), +sqrt(6/(n_in+n_out)))."""
    rng = np.random.default_rng(seed)
    chunks = []
    for n_in, n_out in zip(layer_sizes, layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        chunks.append(rng.uniform(-limit, limit, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    return Network(
        layer_sizes=list(layer_sizes),
        activation=activation,
        params=np.concatenate(chunks),
    )


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_deriv(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0).astype(float) if kind == "relu" else 1.0 - a**2


def forward(
    net: Network, inputs: np.ndarray, params: np.ndarray | None = None
) -> tuple[np.ndarray, list]:
    """Batch forward pass; returns (logits, cache for backprop)."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x.shape[1] != net.layer_sizes[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match layer_sizes[0]={net.layer_sizes[0]}"
        )
    layers = net.unpack(params)
    cache = [(None, x)]
    a = x
    for k, (w, b) in enumerate(layers):
        z = a @ w + b
        a = _act(z, net.activation) if k < len(layers) - 1 else z
        cache.append((z, a))
    return a, cache


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    params: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient as a flat vector."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("batch must be non-empty")
    if labels.min() < 0 or labels.max() >= net.n_classes:
        bad = labels[(labels < 0) | (labels >= net.n_classes)][0]
        raise ValueError(f"label {bad} out of range [0, {net.n_classes})")
    logits, cache = forward(net, inputs, params)
    n = logits.shape[0]
    probs = _softmax(logits)
    # loss = mean over batch of -log softmax[label]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())

    layers = net.unpack(params)
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads: list[np.ndarray] = []
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        a_prev = cache[k][1]
        grads.append(delta.sum(axis=0))  # bias
        grads.append((a_prev.T @ delta).reshape(-1))  # weights
        if k > 0:
            z_prev, a_prev_act = cache[k]
            delta = (delta @ w.T) * _act_deriv(z_prev, a_prev_act, net.activation)
    flat = np.concatenate(grads[::-1])
    return loss, flat


def predict(net: Network, inputs: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
    logits, _ = forward(net, inputs, params)
    return logits.argmax(axis=1)


def accuracy(
    net: Network, inputs: np.ndarray, labels: np.ndarray, params: np.ndarray | None = None
) -> float:
    return float((predict(net, inputs, params) == np.asarray(labels)).mean())


@dataclass
class Dataset:
    """Inputs, integer labels, and disjoint train/val/test index lists."""

    inputs: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    name: str = "dataset"

    def __post_init__(self) -> None:
        n = self.inputs.shape[0]
        all_idx = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if len(np.unique(all_idx)) != n or all_idx.shape[0] != n:
            raise ValueError("splits must be disjoint and cover every sample")

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[which]
        return self.inputs[idx], self.labels[idx]


def _split_indices(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_train = int(round(0.64 * n))
    n_val = int(round(0.16 * n))
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def _class_counts(n: int, classes: int) -> list[int]:
    # balanced within +-1: distribute the remainder over the first classes
    base = n // classes
    counts = [base + (1 if c < n % classes else 0) for c in range(classes)]
    return counts


def make_two_moons(n: int, noise_sigma: float = 0.2, seed: int = 0) -> Dataset:
    """Two interleaved half-circles, one per class, plus Gaussian jitter."""
    if n < 10:
        raise ValueError(f"need n >= 10 samples, got {n}")
    rng = np.random.default_rng(seed)
    counts = _class_counts(n, 2)
    t0 = np.linspace(0.0, np.pi, counts[0])
    t1 = np.linspace(0.0, np.pi, counts[1])
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    inputs = np.vstack([upper, lower]) + noise_sigma * rng.standard_normal((n, 2))
    labels = np.concatenate([np.zeros(counts[0], dtype=int), np.ones(counts[1], dtype=int)])
    train, val, test = _split_indices(n, rng)
    return Dataset(inputs, labels, train, val, test, name="two_moons")


def make_spirals(n: int, classes: int = 3, noise_sigma: float = 0.2, seed: int = 0) -> Dataset:
    """`classes` interleaved spiral arms with radial growth and jitter."""
    if n < 10:
        raise ValueError(f"need n >= 10 samples, got {n}")
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    rng = np.random.default_rng(seed)
    counts = _class_counts(n, classes)
    points = []
    labels = []
    for c, count in enumerate(counts):
        t = np.linspace(0.25, 1.0, count)
        angle = 2.0 * np.pi * (t * 1.25 + c / classes)
        radius = t * 2.0
        arm = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
        points.append(arm)
        labels.append(np.full(count, c, dtype=int))
    inputs = np.vstack(points) + noise_sigma * rng.standard_normal((n, 2))
    train, val, test = _split_indices(n, rng)
    return Dataset(inputs, np.concatenate(labels), train, val, test, name="spirals")


def batch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Epoch shuffle as a pure function of (seed, epoch) only."""
    return np.random.default_rng([seed, epoch]).permutation(n)


@dataclass
class TrainRun:
    """Per-epoch records plus the final parameter vector."""

    epochs: np.ndarray
    train_loss: np.ndarray
    val_loss: np.ndarray
    test_acc: np.ndarray
    gen_gap: np.ndarray  # val_loss - train_loss, recomputed exactly
    alpha: np.ndarray
    final_params: np.ndarray
    seed: int
    optimizer: str
    diverged: bool = False


def train(
    net: Network,
    dataset: Dataset,
    cfg: OptimizerConfig,
    epochs: int,
    batch_size: int,
    seed: int,
) -> TrainRun:
    """Mini-batch training with a seeded per-epoch shuffle.

    Batch order depends only on (seed, epoch), never on the optimizer, so
    swapping optimizers changes parameter trajectories and nothing else.
    A non-finite loss stops the run early with the diverged flag set and
    the records collected so far.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    train_x, train_y = dataset.split("train")
    if batch_size > train_x.shape[0]:
        raise ValueError(
            f"batch_size {batch_size} exceeds train split size {train_x.shape[0]}"
        )
    val_x, val_y = dataset.split("val")
    test_x, test_y = dataset.split("test")
    theta = net.params.copy()
    state = OptimizerState.zeros(net.p)
    rows: list[tuple] = []
    diverged = False
    for epoch in range(epochs):
        order = batch_order(seed, epoch, train_x.shape[0])
        for lo in range(0, order.shape[0], batch_size):
            idx = order[lo : lo + batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, g = loss_and_grad(net, train_x[idx], train_y[idx], theta)
                if not (np.isfinite(loss) and np.all(np.isfinite(g))):
                    diverged = True
                    break
                theta, state, _ = step(state, theta, g, cfg, epoch)
        if diverged:
            break
        epoch_train_loss, _ = loss_and_grad(net, train_x, train_y, theta)
        epoch_val_loss, _ = loss_and_grad(net, val_x, val_y, theta)
        epoch_alpha = alpha_at(cfg.schedule, max(state.t, 1), epoch)
        rows.append(
            (
                epoch,
                epoch_train_loss,
                epoch_val_loss,
                accuracy(net, test_x, test_y, theta),
                epoch_val_loss - epoch_train_loss,
                epoch_alpha,
            )
        )
    if not rows:
        rows.append((0, float("nan"), float("nan"), 0.0, float("nan"), 1.0))
    return TrainRun(
        epochs=np.array([r[0] for r in rows], dtype=int),
        train_loss=np.array([r[1] for r in rows], dtype=float),
        val_loss=np.array([r[2] for r in rows], dtype=float),
        test_acc=np.array([r[3] for r in rows], dtype=float),
        gen_gap=np.array([r[4] for r in rows], dtype=float),
        alpha=np.array([r[5] for r in rows], dtype=float),
        final_params=theta,
        seed=seed,
        optimizer=cfg.optimizer,
        diverged=diverged,
    )


TRAINRUN_COLUMNS = ("epoch", "train_loss", "val_loss", "test_acc", "gen_gap", "alpha")


def write_trainrun_csv(run: TrainRun, path) -> None:
    from .runio import write_csv

    rows = zip(
        (int(e) for e in run.epochs),
        run.train_loss,
        run.val_loss,
        run.test_acc,
        run.gen_gap,
        run.alpha,
    )
    write_csv(path, TRAINRUN_COLUMNS, rows)


def save_params(path_prefix, net: Network, seed: int, params: np.ndarray | None = None) -> tuple[str, str]:
    """Write the flat parameter vector as text plus a JSON header."""
    from .runio import write_json

    theta = net.params if params is None else params
    vec_path = f"{path_prefix}.txt"
    with open(vec_path, "w", newline="\n") as fh:
        for value in theta:
            fh.write(repr(float(value)) + "\n")
    header_path = f"{path_prefix}.json"
    write_json(
        header_path,
        {
            "layer_sizes": list(net.layer_sizes),
            "activation": net.activation,
            "seed": seed,
        },
    )
    return vec_path, header_path


def load_params(path_prefix) -> tuple[Network, int]:
    """Rebuild a Network from a saved parameter vector and header."""
    from .runio import read_json

    header = read_json(f"{path_prefix}.json")
    with open(f"{path_prefix}.txt", "r") as fh:
        values = [float(line) for line in fh if line.strip()]
    net = Network(
        layer_sizes=list(header["layer_sizes"]),
        activation=header["activation"],
        params=np.array(values),
    )
    return net, int(header["seed"])
