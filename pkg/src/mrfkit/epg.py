"""Extended Phase Graph simulation of FISP fingerprints and dictionary compilation.

The signal model is an inversion-prepared, gradient-spoiled FISP train: an
ideal 180° inversion, a recovery delay, then L instantaneous excitations with
a shared repetition time. Ideal crusher gradients advance the configuration
order by one per repetition; the acquired signal is the F0 state after each
pulse, decayed to the echo time.

All pulses share a fixed RF phase of zero, so the transverse configuration
states stay purely imaginary and the longitudinal states purely real for the
whole train. The simulator exploits this and propagates real-valued state
arrays; the physical factor i is reattached at readout.
"""

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_TR_MS = 10.0
DEFAULT_TE_MS = 1.908
DEFAULT_TINV_MS = 18.0
DEFAULT_ALPHA_MAX_DEG = 70.0
DEFAULT_FLIP_PERIOD = 250
DEFAULT_K_MAX = 100


@dataclass(frozen=True)
class SequenceSchedule:
    """Flip-angle train and fixed timings of a FISP acquisition."""

    flip_angles_deg: np.ndarray
    tr_ms: float = DEFAULT_TR_MS
    te_ms: float = DEFAULT_TE_MS
    tinv_ms: float = DEFAULT_TINV_MS
    inversion: bool = True

    def __post_init__(self):
        flips = np.asarray(self.flip_angles_deg, dtype=np.float64)
        if flips.ndim != 1 or flips.size < 1:
            raise ValueError("flip_angles_deg must be a non-empty 1-D array")
        if np.any(flips < 0) or np.any(flips > 180):
            raise ValueError("flip angles must lie in [0, 180] degrees")
        if not (self.tr_ms > self.te_ms > 0):
            raise ValueError("need tr_ms > te_ms > 0")
        if self.tinv_ms < 0:
            raise ValueError("tinv_ms must be >= 0")
        object.__setattr__(self, "flip_angles_deg", flips)

    @property
    def n_frames(self) -> int:
        return self.flip_angles_deg.size


@dataclass(frozen=True)
class TissueParams:
    """Relaxation times of one tissue, in milliseconds."""

    t1_ms: float
    t2_ms: float

    def __post_init__(self):
        if not (math.isfinite(self.t1_ms) and math.isfinite(self.t2_ms)):
            raise ValueError("tissue parameters must be finite")
        if self.t1_ms <= 0 or self.t2_ms <= 0:
            raise ValueError("tissue parameters must be positive")


@dataclass(frozen=True)
class GridRange:
    """Inclusive arithmetic range start, start+step, ..., stop."""

    start: float
    step: float
    stop: float

    def __post_init__(self):
        if self.step <= 0 or self.start <= 0 or self.stop < self.start:
            raise ValueError("grid range must be positive with stop >= start")

    def values(self) -> np.ndarray:
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(count, dtype=np.float64)

    @classmethod
    def parse(cls, text: str) -> "GridRange":
        """Parse the CLI form ``start:step:stop``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"expected start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        return cls(start, step, stop)


@dataclass(frozen=True)
class GridSpec:
    """Cartesian (T1, T2) grid generating a dictionary."""

    t1: GridRange
    t2: GridRange

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All grid pairs in T1-major, T2-minor order."""
        t1v, t2v = np.meshgrid(self.t1.values(), self.t2.values(), indexing="ij")
        return t1v.ravel(), t2v.ravel()


@dataclass
class Dictionary:
    """Simulated fingerprints (one column per tissue) with their labels."""

    atoms: np.ndarray  # complex64, (L, d)
    t1_ms: np.ndarray  # float32, (d,)
    t2_ms: np.ndarray  # float32, (d,)
    schedule: SequenceSchedule
    grid_spec: GridSpec | None = None

    @property
    def n_frames(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    def label(self, j: int) -> TissueParams:
        return TissueParams(float(self.t1_ms[j]), float(self.t2_ms[j]))

    def normalized_atoms(self) -> np.ndarray:
        """L2-normalized copy of the atoms; raw atoms are kept as stored."""
        norms = np.linalg.norm(self.atoms, axis=0, keepdims=True)
        norms[norms == 0] = 1.0
        return self.atoms / norms


def default_schedule(
    n_frames: int,
    alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG,
    period: int = DEFAULT_FLIP_PERIOD,
    tr_ms: float = DEFAULT_TR_MS,
    te_ms: float = DEFAULT_TE_MS,
    tinv_ms: float = DEFAULT_TINV_MS,
) -> SequenceSchedule:
    """Inversion-prepared FISP schedule with rectified-sinusoid flip angles.

    Flip angle of repetition t (0-based) is ``alpha_max_deg * |sin(pi*t/period)|``.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    t = np.arange(n_frames, dtype=np.float64)
    flips = alpha_max_deg * np.abs(np.sin(np.pi * t / period))
    return SequenceSchedule(flips, tr_ms=tr_ms, te_ms=te_ms, tinv_ms=tinv_ms, inversion=True)


def _epg_states_init(n_orders: int, n_atoms: int, z0: np.ndarray):
    p = np.zeros((n_orders, n_atoms), dtype=np.float32)
    m = np.zeros((n_orders, n_atoms), dtype=np.float32)
    z = np.zeros((n_orders, n_atoms), dtype=np.float32)
    z[0] = z0
    return p, m, z


def simulate_fingerprints(
    t1_ms: np.ndarray,
    t2_ms: np.ndarray,
    schedule: SequenceSchedule,
    k_max: int | None = None,
) -> np.ndarray:
    """Simulate fingerprints for arrays of tissues at once.

    Parameters
    ----------
    t1_ms, t2_ms : array_like, shape (n,)
        Relaxation times in milliseconds.
    schedule : SequenceSchedule
    k_max : int, optional
        Highest retained configuration order. Defaults to min(L, 100);
        orders above min(k_max, L) are truncated.

    Returns
    -------
    ndarray, complex64, shape (L, n)
        F0 signal at the echo time after each excitation.
    """
    t1 = np.asarray(t1_ms, dtype=np.float64)
    t2 = np.asarray(t2_ms, dtype=np.float64)
    if t1.shape != t2.shape or t1.ndim != 1:
        raise ValueError("t1_ms and t2_ms must be 1-D arrays of equal length")
    if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t2))):
        raise ValueError("tissue parameters must be finite")
    if np.any(t1 <= 0) or np.any(t2 <= 0):
        raise ValueError("tissue parameters must be positive")

    n_frames = schedule.n_frames
    if k_max is None:
        k_max = min(n_frames, DEFAULT_K_MAX)
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    n_orders = min(int(k_max), n_frames) + 1

    tr, te, tinv = schedule.tr_ms, schedule.te_ms, schedule.tinv_ms
    e1 = np.exp(-tr / t1).astype(np.float32)
    e2 = np.exp(-tr / t2).astype(np.float32)
    recovery = (1.0 - e1).astype(np.float32)
    echo = np.exp(-te / t2).astype(np.float32)

    if schedule.inversion:
        z0 = (1.0 - 2.0 * np.exp(-tinv / t1)).astype(np.float32)
    else:
        z0 = np.ones(t1.shape, dtype=np.float32)

    p, m, z = _epg_states_init(n_orders, t1.size, z0)
    signal = np.empty((n_frames, t1.size), dtype=np.float32)
    flips = np.deg2rad(schedule.flip_angles_deg)

    for t in range(n_frames):
        a = flips[t]
        ca2 = np.float32(math.cos(a / 2) ** 2)
        sa2 = np.float32(math.sin(a / 2) ** 2)
        sa = np.float32(math.sin(a))
        hsa = np.float32(0.5 * math.sin(a))
        ca = np.float32(math.cos(a))

        # RF mixing at phase 0; states (p, m, z) stand for (F+/i, F-/i, Z).
        pn = ca2 * p + sa2 * m - sa * z
        mn = sa2 * p + ca2 * m + sa * z
        zn = hsa * p - hsa * m + ca * z
        p, m, z = pn, mn, zn

        signal[t] = p[0]

        # relaxation over the full repetition, recovery feeds order 0 only
        p *= e2
        m *= e2
        z *= e1
        z[0] += recovery

        # ideal crusher: configuration order k -> k+1
        p[1:] = p[:-1]
        m[:-1] = m[1:]
        m[-1] = 0.0
        p[0] = -m[0]

    return (1j * signal * echo[None, :]).astype(np.complex64)


def simulate_fingerprint(
    params: TissueParams,
    schedule: SequenceSchedule,
    k_max: int | None = None,
) -> np.ndarray:
    """Simulate a single fingerprint; see :func:`simulate_fingerprints`."""
    out = simulate_fingerprints(
        np.array([params.t1_ms]), np.array([params.t2_ms]), schedule, k_max=k_max
    )
    return out[:, 0]


def build_dictionary(
    grid: GridSpec,
    schedule: SequenceSchedule,
    k_max: int | None = None,
    exclude=None,
    chunk_size: int = 8192,
) -> Dictionary:
    """Simulate one atom per retained (T1, T2) grid pair.

    Parameters
    ----------
    grid : GridSpec
    schedule : SequenceSchedule
    exclude : callable, optional
        Vectorized predicate ``exclude(t1, t2) -> bool array``; pairs where it
        returns True are dropped. Default keeps the full grid.
    chunk_size : int
        Atoms simulated per batch (memory bound; does not affect values).
    """
    t1, t2 = grid.pairs()
    if exclude is not None:
        drop = np.asarray(exclude(t1, t2), dtype=bool)
        t1, t2 = t1[~drop], t2[~drop]
    if t1.size == 0:
        raise ValueError("grid is empty after exclusion")

    n_frames = schedule.n_frames
    atoms = np.empty((n_frames, t1.size), dtype=np.complex64)
    for lo in range(0, t1.size, chunk_size):
        hi = min(lo + chunk_size, t1.size)
        atoms[:, lo:hi] = simulate_fingerprints(t1[lo:hi], t2[lo:hi], schedule, k_max=k_max)

    return Dictionary(
        atoms=atoms,
        t1_ms=t1.astype(np.float32),
        t2_ms=t2.astype(np.float32),
        schedule=schedule,
        grid_spec=grid,
    )


def save_dictionary(dictionary: Dictionary, path) -> None:
    from . import bundle

    s = dictionary.schedule
    meta = {
        "kind": "dictionary",
        "tr_ms": s.tr_ms,
        "te_ms": s.te_ms,
        "tinv_ms": s.tinv_ms,
        "inversion": s.inversion,
    }
    if dictionary.grid_spec is not None:
        g = dictionary.grid_spec
        meta["grid"] = {
            "t1": [g.t1.start, g.t1.step, g.t1.stop],
            "t2": [g.t2.start, g.t2.step, g.t2.stop],
        }
    bundle.write_bundle(
        path,
        {
            "atoms": dictionary.atoms,
            "t1": dictionary.t1_ms,
            "t2": dictionary.t2_ms,
            "flip_angles_deg": dictionary.schedule.flip_angles_deg.astype(np.float32),
        },
        meta=meta,
    )


def load_dictionary(path) -> Dictionary:
    from . import bundle

    arrays, meta = bundle.read_bundle(path)
    schedule = SequenceSchedule(
        arrays["flip_angles_deg"].astype(np.float64),
        tr_ms=float(meta["tr_ms"]),
        te_ms=float(meta["te_ms"]),
        tinv_ms=float(meta["tinv_ms"]),
        inversion=bool(meta["inversion"]),
    )
    grid = None
    if "grid" in meta:
        grid = GridSpec(
            t1=GridRange(*meta["grid"]["t1"]),
            t2=GridRange(*meta["grid"]["t2"]),
        )
    return Dictionary(
        atoms=arrays["atoms"],
        t1_ms=arrays["t1"],
        t2_ms=arrays["t2"],
        schedule=schedule,
        grid_spec=grid,
    )
