"""Forward operator: per-frame masked unitary 2-D Fourier transforms with
multi-coil sensitivities, acting on subspace coefficient stacks, plus the
mask and coil-map generators.

Masks live on the dense k-space grid in natural FFT layout (DC at index 0).
The DFT is unitary both ways, so with full sampling and a single uniform coil
the operator is an isometry.
"""

from dataclasses import dataclass

import numpy as np

from .subspace import SubspaceBasis

DEFAULT_CENTER_RADIUS = 4
DEFAULT_DENSITY_GAMMA = 2.0

_FRAME_BLOCK = 32  # frames per block, bounds the materialized image stack


@dataclass
class SamplingPattern:
    """Per-frame boolean k-space masks on the dense grid."""

    masks: np.ndarray  # bool, (L, H, W), natural FFT layout
    seed: int | None = None
    accel: float | None = None
    center_radius: int | None = None
    gamma: float | None = None
    k0: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks.shape[1], self.masks.shape[2]

    @property
    def n_frames(self) -> int:
        return self.masks.shape[0]

    @property
    def per_frame_counts(self) -> np.ndarray:
        return self.masks.sum(axis=(1, 2)).astype(np.int64)

    def total_samples(self, n_coils: int) -> int:
        return int(self.per_frame_counts.sum()) * n_coils


@dataclass
class CoilMaps:
    """Complex receive sensitivities, RSS-normalized to a max of 1."""

    sens: np.ndarray  # complex, (C, H, W)

    @property
    def n_coils(self) -> int:
        return self.sens.shape[0]

    def rss(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.sens) ** 2, axis=0))


@dataclass
class KSpaceData:
    """Masked dense-grid k-space samples, zero where unsampled."""

    y: np.ndarray  # complex, (L, C, H, W)
    pattern: SamplingPattern

    @property
    def n_coils(self) -> int:
        return self.y.shape[1]


def _radial_weights(h: int, w: int, gamma: float, k0: float) -> np.ndarray:
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    radius = np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    return (1.0 + radius / k0) ** (-gamma)


def _center_block(h: int, w: int, radius: int) -> np.ndarray:
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    return (np.abs(ky)[:, None] <= radius) & (np.abs(kx)[None, :] <= radius)


def make_vd_cartesian_masks(
    h: int,
    w: int,
    n_frames: int,
    accel: float,
    seed: int,
    center_radius: int = DEFAULT_CENTER_RADIUS,
    gamma: float = DEFAULT_DENSITY_GAMMA,
    k0: float | None = None,
) -> SamplingPattern:
    """Per-frame variable-density random Cartesian masks.

    Sampling probability decays radially as (1 + |k|/k0)^-gamma, scaled so the
    expected samples per frame are H*W/accel; a (2*center_radius+1)^2 block
    around DC is always fully sampled. Frames are independent draws from one
    seeded generator.
    """
    if accel < 1:
        raise ValueError("accel must be >= 1")
    if k0 is None:
        k0 = h / 8.0
    target = h * w / accel
    center = _center_block(h, w, center_radius)
    n_center = int(center.sum())
    if target < n_center:
        raise ValueError(
            f"center block ({n_center} samples) alone exceeds the budget "
            f"of {target:.0f} samples per frame"
        )

    weights = _radial_weights(h, w, gamma, k0)
    outside = ~center
    budget = target - n_center
    if budget >= outside.sum():
        prob = np.ones((h, w))
    else:
        w_out = weights[outside]

        def expected(scale):
            return np.minimum(1.0, scale * w_out).sum()

        lo, hi = 0.0, 1.0 / w_out.min()
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if expected(mid) < budget:
                lo = mid
            else:
                hi = mid
        prob = np.minimum(1.0, 0.5 * (lo + hi) * weights)
    prob[center] = 1.0

    rng = np.random.default_rng(seed)
    masks = rng.random((n_frames, h, w)) < prob[None, :, :]
    masks[:, center] = True
    return SamplingPattern(
        masks=masks,
        seed=seed,
        accel=float(accel),
        center_radius=center_radius,
        gamma=gamma,
        k0=float(k0),
    )


def make_coil_maps(h: int, w: int, n_coils: int, kind: str = "gaussian-ring") -> CoilMaps:
    """Simulated receive sensitivities.

    ``uniform`` gives flat maps (scaled 1/sqrt(C) so the RSS is one), acting
    as a single effective coil. ``gaussian-ring`` places C smooth complex
    Gaussian lobes on a ring around the field of view with a linear phase
    ramp per coil, then RSS-normalizes to a max of 1.
    """
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    if kind == "uniform":
        sens = np.full((n_coils, h, w), 1.0 / np.sqrt(n_coils), dtype=np.complex128)
        return CoilMaps(sens=sens)
    if kind != "gaussian-ring":
        raise ValueError(f"unknown coil map kind {kind!r}")

    # pixel coordinates centered on the array so antipodal coil placement is
    # an exact grid symmetry for even C
    y = np.arange(h) - (h - 1) / 2.0
    x = np.arange(w) - (w - 1) / 2.0
    yy, xx = np.meshgrid(y, x, indexing="ij")
    ring_radius = 0.5 * min(h, w)
    width = 0.35 * min(h, w)

    sens = np.empty((n_coils, h, w), dtype=np.complex128)
    for c in range(n_coils):
        theta = 2.0 * np.pi * c / n_coils
        cy = ring_radius * np.sin(theta)
        cx = ring_radius * np.cos(theta)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width**2))
        ramp = 0.2 * (np.cos(theta) * yy - np.sin(theta) * xx) / max(h, w)
        sens[c] = mag * np.exp(2j * np.pi * ramp)

    rss = np.sqrt(np.sum(np.abs(sens) ** 2, axis=0))
    sens /= rss.max()
    return CoilMaps(sens=sens)


def _check_geometry(basis, coils: CoilMaps, pattern: SamplingPattern):
    h, w = pattern.shape
    if coils.sens.shape[1:] != (h, w):
        raise ValueError("coil maps and sampling pattern disagree on image size")
    if basis is not None and basis.n_frames != pattern.n_frames:
        raise ValueError("basis frames and sampling pattern frames disagree")
    return h, w


def apply_frames(frames: np.ndarray, coils: CoilMaps, pattern: SamplingPattern) -> KSpaceData:
    """Masked multi-coil unitary FFT of explicit frame images (L, H, W)."""
    h, w = _check_geometry(None, coils, pattern)
    n_frames = pattern.n_frames
    if frames.shape != (n_frames, h, w):
        raise ValueError(f"frames must have shape {(n_frames, h, w)}")
    y = np.empty((n_frames, coils.n_coils, h, w), dtype=np.complex128)
    for lo in range(0, n_frames, _FRAME_BLOCK):
        hi = min(lo + _FRAME_BLOCK, n_frames)
        weighted = coils.sens[None, :, :, :] * frames[lo:hi, None, :, :]
        y[lo:hi] = np.fft.fft2(weighted, norm="ortho", axes=(-2, -1))
        y[lo:hi] *= pattern.masks[lo:hi, None, :, :]
    return KSpaceData(y=y, pattern=pattern)


def forward(
    x: np.ndarray, basis: SubspaceBasis, coils: CoilMaps, pattern: SamplingPattern
) -> KSpaceData:
    """A(x v^H): frame images from the coefficient stack, coil-weighted,
    unitary 2-D FFT, masked. x has shape (n, S) with n = H*W."""
    h, w = _check_geometry(basis, coils, pattern)
    n_frames = pattern.n_frames
    if x.shape != (h * w, basis.rank_s):
        raise ValueError(f"x must have shape {(h * w, basis.rank_s)}")
    vh = basis.v.conj()  # frame t image = x @ vh[t]
    y = np.empty((n_frames, coils.n_coils, h, w), dtype=np.complex128)
    for lo in range(0, n_frames, _FRAME_BLOCK):
        hi = min(lo + _FRAME_BLOCK, n_frames)
        frames = (x @ vh[lo:hi].T).T.reshape(hi - lo, h, w)
        weighted = coils.sens[None, :, :, :] * frames[:, None, :, :]
        block = np.fft.fft2(weighted, norm="ortho", axes=(-2, -1))
        block *= pattern.masks[lo:hi, None, :, :]
        y[lo:hi] = block
    return KSpaceData(y=y, pattern=pattern)


def adjoint(
    data: KSpaceData, basis: SubspaceBasis, coils: CoilMaps, pattern: SamplingPattern
) -> np.ndarray:
    """A^H(y) v: zero-filled inverse unitary FFT, conjugate coil combine,
    projected onto the basis. Exact adjoint of :func:`forward`."""
    h, w = _check_geometry(basis, coils, pattern)
    n_frames = pattern.n_frames
    y = data.y
    if y.shape != (n_frames, coils.n_coils, h, w):
        raise ValueError(f"k-space must have shape {(n_frames, coils.n_coils, h, w)}")
    x = np.zeros((h * w, basis.rank_s), dtype=np.complex128)
    conj_sens = coils.sens.conj()
    for lo in range(0, n_frames, _FRAME_BLOCK):
        hi = min(lo + _FRAME_BLOCK, n_frames)
        masked = y[lo:hi] * pattern.masks[lo:hi, None, :, :]
        imgs = np.fft.ifft2(masked, norm="ortho", axes=(-2, -1))
        combined = np.sum(conj_sens[None, :, :, :] * imgs, axis=1)
        x += combined.reshape(hi - lo, h * w).T @ basis.v[lo:hi]
    return x


def save_kspace(data: KSpaceData, coils: CoilMaps, path, extra_meta: dict | None = None) -> None:
    from . import bundle

    p = data.pattern
    meta = {
        "kind": "kspace",
        "seed": p.seed,
        "accel": p.accel,
        "center_radius": p.center_radius,
        "gamma": p.gamma,
        "k0": p.k0,
    }
    if extra_meta:
        meta.update(extra_meta)
    bundle.write_bundle(
        path,
        {
            "y": data.y.astype(np.complex64),
            "masks": p.masks.astype(np.uint8),
            "sens": coils.sens.astype(np.complex64),
        },
        meta=meta,
    )


def load_kspace(path) -> tuple[KSpaceData, CoilMaps, dict]:
    from . import bundle

    arrays, meta = bundle.read_bundle(path)
    pattern = SamplingPattern(
        masks=arrays["masks"].astype(bool),
        seed=meta.get("seed"),
        accel=meta.get("accel"),
        center_radius=meta.get("center_radius"),
        gamma=meta.get("gamma"),
        k0=meta.get("k0"),
    )
    data = KSpaceData(y=arrays["y"].astype(np.complex128), pattern=pattern)
    coils = CoilMaps(sens=arrays["sens"].astype(np.complex128))
    return data, coils, meta
