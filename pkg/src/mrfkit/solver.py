"""Iterative shrinkage reconstruction of subspace images with momentum
acceleration and backtracking step-size halving.

Modes: ``bpi`` is the non-iterative adjoint reconstruction, ``lr`` iterates
with the subspace prior alone (identity prox), and ``lrtv`` adds channel-wise
total-variation shrinkage. The gradient is computed without the factor two,
matching the majorization test used for step-size control.
"""

import csv
import io
from dataclasses import dataclass, field, asdict

import numpy as np

from . import forward_model as fm
from .forward_model import CoilMaps, KSpaceData, SamplingPattern
from .subspace import SubspaceBasis
from .tvprox import TvConfig, tv_norm, tv_prox_stack

MODES = ("bpi", "lr", "lrtv")
DEFAULT_LAMBDA = 2e-5
_MU_FLOOR = 1e-30


class NumericalError(RuntimeError):
    """Non-finite values or a collapsed step size during a solve."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class SolverConfig:
    mode: str = "lrtv"
    lam: float | None = None  # TV weight; resolved to 2e-5 for lrtv, 0 otherwise
    mu0: float | str = "auto"
    max_outer_iters: int = 50
    stop_rel_change: float = 1e-4
    tv: TvConfig = field(default_factory=TvConfig)
    tv_warm_start: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.lam is None:
            self.lam = DEFAULT_LAMBDA if self.mode == "lrtv" else 0.0
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.mode != "lrtv" and self.lam != 0:
            raise ValueError(f"lambda must be 0 in mode {self.mode!r}")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if isinstance(self.mu0, str):
            if self.mu0 != "auto":
                raise ValueError("mu0 must be a positive number or 'auto'")
        elif self.mu0 <= 0:
            raise ValueError("mu0 must be a positive number or 'auto'")


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    fidelity: float
    tv_term: float
    mu: float
    halvings: int
    rel_change: float
    momentum: float = 0.0
    fidelity_at_x: float = 0.0
    majorization_rhs: float = 0.0


@dataclass
class SolveTrace:
    records: list[TraceRecord] = field(default_factory=list)

    _CSV_FIELDS = ("iteration", "objective", "fidelity", "tv_term", "mu", "halvings", "rel_change")

    def append(self, record: TraceRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self._CSV_FIELDS)
        for rec in self.records:
            row = asdict(rec)
            writer.writerow([repr(row[f]) if isinstance(row[f], float) else row[f]
                             for f in self._CSV_FIELDS])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _fidelity(y: np.ndarray, ks: np.ndarray) -> float:
    resid = y - ks
    return float(np.vdot(resid, resid).real)


def bpi(
    y: KSpaceData, basis: SubspaceBasis, coils: CoilMaps, pattern: SamplingPattern
) -> np.ndarray:
    """Back-projected images: the adjoint applied to the data, no iterations."""
    return fm.adjoint(y, basis, coils, pattern)


def gradient(
    x: np.ndarray,
    y: KSpaceData,
    basis: SubspaceBasis,
    coils: CoilMaps,
    pattern: SamplingPattern,
    ahyv: np.ndarray | None = None,
) -> np.ndarray:
    """Subspace gradient A^H(A(x v^H)) v - A^H(y) v (no factor two)."""
    if ahyv is None:
        ahyv = fm.adjoint(y, basis, coils, pattern)
    ks = fm.forward(x, basis, coils, pattern)
    return fm.adjoint(ks, basis, coils, pattern) - ahyv


def backtrack_ok(
    z: np.ndarray,
    x: np.ndarray,
    grad: np.ndarray,
    mu: float,
    y: KSpaceData,
    basis: SubspaceBasis,
    coils: CoilMaps,
    pattern: SamplingPattern,
    fidelity_x: float | None = None,
) -> bool:
    """True when the step satisfies the quadratic majorization at step size mu.

    False exactly when ||y - A(z v^H)||^2 exceeds
    ||y - A(x v^H)||^2 + 2 Re<grad, z - x> + ||z - x||^2 / mu,
    i.e. when the step size must be halved.
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if fidelity_x is None:
        fidelity_x = _fidelity(y.y, fm.forward(x, basis, coils, pattern).y)
    fidelity_z = _fidelity(y.y, fm.forward(z, basis, coils, pattern).y)
    diff = z - x
    rhs = (
        fidelity_x
        + 2.0 * float(np.vdot(grad, diff).real)
        + float(np.vdot(diff, diff).real) / mu
    )
    return not fidelity_z > rhs


def auto_step_size(pattern: SamplingPattern, n_coils: int) -> float:
    """Compression-factor step size: image pixels over mean per-frame samples
    counted across coils."""
    per_frame = pattern.total_samples(n_coils) / pattern.n_frames
    h, w = pattern.shape
    return h * w / per_frame


def solve(
    y: KSpaceData,
    basis: SubspaceBasis,
    coils: CoilMaps,
    pattern: SamplingPattern,
    cfg: SolverConfig,
) -> tuple[np.ndarray, SolveTrace]:
    """Reconstruct the subspace coefficient stack from masked k-space data.

    Starts from zero; each iteration takes a gradient step, applies the TV
    prox (identity when lambda is 0), halves the step size until the
    majorization holds, then applies momentum with coefficient (k-1)/(k+2).
    Halved step sizes persist across iterations. Returns the final iterate
    and the per-iteration trace (initial record included).
    """
    h, w = pattern.shape
    n = h * w
    lam = cfg.lam

    ahyv = fm.adjoint(y, basis, coils, pattern)
    if isinstance(cfg.mu0, str):
        mu = auto_step_size(pattern, coils.n_coils)
    else:
        mu = float(cfg.mu0)

    x = np.zeros((n, basis.rank_s), dtype=np.complex128)
    z_prev = np.zeros_like(x)
    duals = None

    norm_y_sq = float(np.vdot(y.y, y.y).real)
    trace = SolveTrace()
    trace.append(
        TraceRecord(
            iteration=0,
            objective=norm_y_sq,
            fidelity=norm_y_sq,
            tv_term=0.0,
            mu=mu,
            halvings=0,
            rel_change=float("inf"),
        )
    )

    if cfg.mode == "bpi":
        return ahyv, trace

    for k in range(1, cfg.max_outer_iters + 1):
        ks_x = fm.forward(x, basis, coils, pattern)
        fidelity_x = _fidelity(y.y, ks_x.y)
        grad = fm.adjoint(ks_x, basis, coils, pattern) - ahyv

        halvings = 0
        while True:
            step = x - mu * grad
            if lam > 0:
                z, new_duals = tv_prox_stack(
                    step,
                    lam * mu,
                    cfg.tv,
                    (h, w),
                    dual_init=duals if cfg.tv_warm_start else None,
                    return_dual=True,
                )
            else:
                z, new_duals = step, None
            fidelity_z = _fidelity(y.y, fm.forward(z, basis, coils, pattern).y)
            diff = z - x
            rhs = (
                fidelity_x
                + 2.0 * float(np.vdot(grad, diff).real)
                + float(np.vdot(diff, diff).real) / mu
            )
            if fidelity_z > rhs:
                mu *= 0.5
                halvings += 1
                if mu < _MU_FLOOR:
                    raise NumericalError("step size collapsed during backtracking", iteration=k)
                continue
            break
        duals = new_duals if cfg.tv_warm_start else None

        momentum = (k - 1.0) / (k + 2.0)
        x_next = z + momentum * (z - z_prev)

        if not np.all(np.isfinite(x_next)):
            raise NumericalError("non-finite iterate", iteration=k)

        norm_x = float(np.linalg.norm(x))
        rel_change = float(np.linalg.norm(x_next - x) / norm_x) if norm_x > 0 else float("inf")

        tv_term = 0.0
        if lam > 0:
            for s in range(basis.rank_s):
                channel = z[:, s].reshape(h, w)
                tv_term += tv_norm(channel.real, cfg.tv.variant)
                tv_term += tv_norm(channel.imag, cfg.tv.variant)
            tv_term *= lam

        trace.append(
            TraceRecord(
                iteration=k,
                objective=fidelity_z + tv_term,
                fidelity=fidelity_z,
                tv_term=tv_term,
                mu=mu,
                halvings=halvings,
                rel_change=rel_change,
                momentum=momentum,
                fidelity_at_x=fidelity_x,
                majorization_rhs=rhs,
            )
        )

        x, z_prev = x_next, z
        if rel_change < cfg.stop_rel_change:
            break

    return x, trace


def save_reconstruction(x: np.ndarray, basis: SubspaceBasis, hw: tuple[int, int], path) -> None:
    from . import bundle

    h, w = hw
    bundle.write_bundle(
        path,
        {
            "x_subspace": x.T.reshape(basis.rank_s, h, w).astype(np.complex64),
            "basis_v": basis.v.astype(np.complex64),
        },
        meta={"kind": "reconstruction", "rank": basis.rank_s},
    )


def load_reconstruction(path) -> tuple[np.ndarray, SubspaceBasis, tuple[int, int]]:
    from . import bundle

    arrays, _ = bundle.read_bundle(path)
    stack = arrays["x_subspace"].astype(np.complex128)
    rank, h, w = stack.shape
    x = stack.reshape(rank, h * w).T
    v = arrays["basis_v"].astype(np.complex128)
    basis = SubspaceBasis(v=v, s_values=np.zeros(min(v.shape)), rank_s=rank)
    return x, basis, (h, w)
