"""Parameter estimation: a small fully-connected network trained on noisy
dictionary projections, and exhaustive dictionary matching as the baseline.

The network maps phase-aligned, unit-norm subspace coefficient vectors to
(T1, T2) in milliseconds. Targets are normalized to [0, 1] by the dictionary
grid ranges during training and de-normalized (and clamped to those ranges)
at inference. Voxels with negligible coefficient energy are masked to zero.
"""

import math
from dataclasses import dataclass

import numpy as np

from .epg import Dictionary
from .subspace import SubspaceBasis, phase_align, project

BACKGROUND_REL_NORM = 1e-3
DEFAULT_HIDDEN = (300, 300)


@dataclass
class TrainConfig:
    noise_sigma: float = 0.01
    augment_factor: int = 100
    epochs: int = 30
    batch_size: int = 512
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    plateau_patience: int = 10
    plateau_rel_improvement: float = 1e-5

    def __post_init__(self):
        if self.augment_factor < 1:
            raise ValueError("augment_factor must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("bad optimizer settings")


@dataclass
class MrfNet:
    """Three affine layers, rectified-linear on the first two; the output
    layer is linear unless output_relu is set."""

    weights: list[np.ndarray]  # (in, out) per layer
    biases: list[np.ndarray]
    t1_range: tuple[float, float]
    t2_range: tuple[float, float]
    output_relu: bool = False

    @classmethod
    def initialize(
        cls,
        rank: int,
        t1_range: tuple[float, float],
        t2_range: tuple[float, float],
        hidden: tuple[int, int] = DEFAULT_HIDDEN,
        seed: int = 0,
        output_relu: bool = False,
        dtype=np.float32,
    ) -> "MrfNet":
        rng = np.random.default_rng(seed)
        sizes = [rank, hidden[0], hidden[1], 2]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            scale = math.sqrt(2.0 / fan_in)
            weights.append(rng.normal(0.0, scale, (fan_in, fan_out)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(weights, biases, tuple(t1_range), tuple(t2_range), output_relu)

    @property
    def rank(self) -> int:
        return self.weights[0].shape[0]

    def copy(self) -> "MrfNet":
        return MrfNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.t1_range,
            self.t2_range,
            self.output_relu,
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Normalized (T1, T2) predictions for a batch of coefficient rows."""
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last or self.output_relu:
                h = np.maximum(h, 0.0)
        return h

    def _forward_cached(self, x):
        pre, post = [], [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if (i < last or self.output_relu) else z
            post.append(h)
        return pre, post

    def loss_and_gradients(self, x: np.ndarray, targets_norm: np.ndarray):
        """Mean-squared-error loss and its gradients for every parameter."""
        batch = x.shape[0]
        pre, post = self._forward_cached(x)
        pred = post[-1]
        diff = pred - targets_norm
        loss = float(np.mean(diff**2))

        grad_ws = [None] * len(self.weights)
        grad_bs = [None] * len(self.biases)
        delta = (2.0 / diff.size) * diff
        last = len(self.weights) - 1
        if self.output_relu:
            delta = delta * (pre[last] > 0)
        for i in range(last, -1, -1):
            grad_ws[i] = post[i].T @ delta
            grad_bs[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre[i - 1] > 0)
        return loss, grad_ws, grad_bs

    def predict_ms(self, x: np.ndarray) -> np.ndarray:
        """De-normalized predictions clamped to the training grid ranges."""
        out = self.forward(x).astype(np.float64)
        lo1, hi1 = self.t1_range
        lo2, hi2 = self.t2_range
        t1 = np.clip(lo1 + out[:, 0] * (hi1 - lo1), lo1, hi1)
        t2 = np.clip(lo2 + out[:, 1] * (hi2 - lo2), lo2, hi2)
        return np.stack([t1, t2], axis=1)

    def normalize_targets(self, t1_ms: np.ndarray, t2_ms: np.ndarray) -> np.ndarray:
        lo1, hi1 = self.t1_range
        lo2, hi2 = self.t2_range
        return np.stack(
            [(t1_ms - lo1) / (hi1 - lo1), (t2_ms - lo2) / (hi2 - lo2)], axis=1
        )


def make_training_set(
    dictionary: Dictionary,
    basis: SubspaceBasis,
    cfg: TrainConfig,
    chunk_size: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Noise-augmented training pairs from the dictionary.

    Per atom: unit-normalize, draw augment_factor complex white-noise
    corruptions (noise_sigma per real/imaginary component), project onto the
    basis, phase-align, unit-normalize the coefficient row. Targets are the
    (T1, T2) labels in milliseconds. N = d * augment_factor rows.
    """
    if dictionary.n_atoms == 0:
        raise ValueError("empty dictionary")
    rng = np.random.default_rng(cfg.seed)
    aug = cfg.augment_factor
    d = dictionary.n_atoms
    n_frames = dictionary.n_frames

    atoms = dictionary.normalized_atoms().T  # (d, L)
    inputs = np.empty((d * aug, basis.rank_s), dtype=np.float32)
    targets = np.empty((d * aug, 2), dtype=np.float32)

    for lo in range(0, d, chunk_size):
        hi = min(lo + chunk_size, d)
        block = np.repeat(atoms[lo:hi], aug, axis=0)
        if cfg.noise_sigma > 0:
            noise = rng.normal(0.0, cfg.noise_sigma, (2, block.shape[0], n_frames))
            block = block + noise[0] + 1j * noise[1]
        coeffs = phase_align(project(block, basis))
        norms = np.linalg.norm(coeffs, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        inputs[lo * aug : hi * aug] = coeffs / norms
        targets[lo * aug : hi * aug, 0] = np.repeat(dictionary.t1_ms[lo:hi], aug)
        targets[lo * aug : hi * aug, 1] = np.repeat(dictionary.t2_ms[lo:hi], aug)

    return inputs, targets


class DivergenceError(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def train(
    net: MrfNet,
    data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
) -> tuple[MrfNet, list[float]]:
    """Minibatch SGD with momentum on the MSE of normalized targets.

    The learning rate halves when the epoch loss plateaus. Returns the
    trained network and the per-epoch loss history (empty for zero epochs).
    """
    inputs, targets_ms = data
    if inputs.shape[0] == 0:
        raise ValueError("empty training set")
    net = net.copy()
    targets = net.normalize_targets(
        targets_ms[:, 0].astype(np.float64), targets_ms[:, 1].astype(np.float64)
    ).astype(inputs.dtype)

    rng = np.random.default_rng(cfg.seed + 1)
    lr = cfg.learning_rate
    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    history: list[float] = []
    best = math.inf
    stalled = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(inputs.shape[0])
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, inputs.shape[0], cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss, grad_ws, grad_bs = net.loss_and_gradients(inputs[idx], targets[idx])
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            for i in range(len(net.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - lr * grad_ws[i]
                vel_b[i] = cfg.momentum * vel_b[i] - lr * grad_bs[i]
                net.weights[i] += vel_w[i]
                net.biases[i] += vel_b[i]
            epoch_loss += loss
            n_batches += 1
        epoch_loss /= n_batches
        history.append(epoch_loss)

        if epoch_loss < best * (1.0 - cfg.plateau_rel_improvement):
            best = epoch_loss
            stalled = 0
        else:
            stalled += 1
            if stalled >= cfg.plateau_patience:
                lr *= 0.5
                stalled = 0

    return net, history


def infer(net: MrfNet, coeffs: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Per-voxel (T1, T2) maps from aligned real coefficient rows (n, S).

    Rows whose norm is below 1e-3 of the stack maximum are treated as
    background and reported as zero.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[1] != net.rank:
        raise ValueError(f"expected (n, {net.rank}) coefficients")
    norms = np.linalg.norm(coeffs, axis=1)
    threshold = BACKGROUND_REL_NORM * (norms.max() if norms.size else 0.0)
    fg = norms > threshold

    maps = np.zeros((coeffs.shape[0], 2))
    if fg.any():
        rows = coeffs[fg]
        if normalize:
            rows = rows / norms[fg][:, None]
        maps[fg] = net.predict_ms(rows.astype(net.weights[0].dtype))
    return maps


def dictionary_match(
    coeffs: np.ndarray,
    dictionary: Dictionary,
    basis: SubspaceBasis,
    chunk_size: int = 2048,
) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive maximum-inner-product match in the subspace.

    Voxel rows (phase-aligned, any positive scale) are scored against the
    normalized, phase-aligned projections of every atom; each voxel gets the
    argmax atom's label and the matched amplitude as a proton-density proxy.
    Returns (maps (n, 2), pd (n,)).
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    proj = phase_align(project(dictionary.atoms.T.astype(np.complex128), basis))
    raw_norms = np.linalg.norm(proj, axis=1)
    raw_norms[raw_norms == 0] = 1.0
    table = (proj / raw_norms[:, None]).astype(np.float64)  # (d, S)

    norms = np.linalg.norm(coeffs, axis=1)
    threshold = BACKGROUND_REL_NORM * (norms.max() if norms.size else 0.0)
    fg = norms > threshold

    maps = np.zeros((coeffs.shape[0], 2))
    pd = np.zeros(coeffs.shape[0])
    rows = coeffs[fg] / norms[fg][:, None]
    best_idx = np.empty(rows.shape[0], dtype=np.int64)
    best_score = np.empty(rows.shape[0])
    for lo in range(0, rows.shape[0], chunk_size):
        hi = min(lo + chunk_size, rows.shape[0])
        scores = rows[lo:hi] @ table.T
        best_idx[lo:hi] = np.argmax(scores, axis=1)
        best_score[lo:hi] = scores[np.arange(lo, hi) - lo, best_idx[lo:hi]]

    maps[fg, 0] = dictionary.t1_ms[best_idx]
    maps[fg, 1] = dictionary.t2_ms[best_idx]
    pd[fg] = best_score * norms[fg] / raw_norms[best_idx]
    return maps, pd


def save_net(net: MrfNet, cfg: TrainConfig | None, path) -> None:
    from . import bundle

    arrays = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w.astype(np.float32)
        arrays[f"b{i}"] = b.astype(np.float32)
    meta = {
        "kind": "mrf-net",
        "t1_range": list(net.t1_range),
        "t2_range": list(net.t2_range),
        "output_relu": net.output_relu,
        "layers": len(net.weights),
    }
    if cfg is not None:
        meta["train"] = {
            "noise_sigma": cfg.noise_sigma,
            "augment_factor": cfg.augment_factor,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "seed": cfg.seed,
        }
    bundle.write_bundle(path, arrays, meta=meta)


def load_net(path) -> MrfNet:
    from . import bundle

    arrays, meta = bundle.read_bundle(path)
    n_layers = int(meta["layers"])
    weights = [arrays[f"w{i}"] for i in range(n_layers)]
    biases = [arrays[f"b{i}"] for i in range(n_layers)]
    return MrfNet(
        weights=weights,
        biases=biases,
        t1_range=tuple(meta["t1_range"]),
        t2_range=tuple(meta["t2_range"]),
        output_relu=bool(meta["output_relu"]),
    )
