"""Independent reference implementations used to check the library.

These deliberately avoid the library's code paths: the Bloch oracle tracks
explicit magnetization vectors with real rotation matrices instead of
configuration states, the TV oracle minimizes the prox objective by
subgradient descent, and the matching oracle searches the full-length
fingerprint space.
"""

import numpy as np


def rotation_x(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rotation_z(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def bloch_fingerprint(t1_ms, t2_ms, schedule, n_spins=2048):
    """Isochromat-ensemble FISP simulation.

    Spins are evenly dephased over 2*pi per repetition (the ideal-crusher
    assumption); excitation is a right-handed rotation about +x applied as a
    real 3x3 matrix; relaxation uses the full-TR constants and the echo is
    the ensemble mean transverse magnetization decayed to TE.
    """
    tr, te, tinv = schedule.tr_ms, schedule.te_ms, schedule.tinv_ms
    e1 = np.exp(-tr / t1_ms)
    e2 = np.exp(-tr / t2_ms)
    echo = np.exp(-te / t2_ms)

    m = np.zeros((n_spins, 3))
    if schedule.inversion:
        m[:, 2] = 1.0 - 2.0 * np.exp(-tinv / t1_ms)
    else:
        m[:, 2] = 1.0

    crush = 2.0 * np.pi * np.arange(n_spins) / n_spins
    cos_c, sin_c = np.cos(crush), np.sin(crush)

    out = np.zeros(schedule.n_frames, dtype=np.complex128)
    for t in range(schedule.n_frames):
        rot = rotation_x(np.deg2rad(schedule.flip_angles_deg[t]))
        m = m @ rot.T
        out[t] = (m[:, 0].mean() + 1j * m[:, 1].mean()) * echo
        m[:, 0] *= e2
        m[:, 1] *= e2
        m[:, 2] = m[:, 2] * e1 + (1.0 - e1)
        mx = m[:, 0] * cos_c - m[:, 1] * sin_c
        m[:, 1] = m[:, 0] * sin_c + m[:, 1] * cos_c
        m[:, 0] = mx
    return out


def tv_objective(u, b, tau, variant):
    dy = np.zeros_like(u)
    dx = np.zeros_like(u)
    dy[:-1] = u[1:] - u[:-1]
    dx[:, :-1] = u[:, 1:] - u[:, :-1]
    if variant == "isotropic":
        tv = np.sqrt(dy**2 + dx**2).sum()
    else:
        tv = np.abs(dy).sum() + np.abs(dx).sum()
    return 0.5 * np.sum((u - b) ** 2) + tau * tv


def tv_prox_subgradient(b, tau, variant, iters=100_000):
    """Long-run subgradient descent on the prox objective.

    Polyak-type steps against a shrinking optimistic target; returns the best
    iterate and its objective value.
    """
    u = b.copy()
    best_f = np.inf
    best_u = u.copy()
    for k in range(1, iters + 1):
        dy = np.zeros_like(u)
        dx = np.zeros_like(u)
        dy[:-1] = u[1:] - u[:-1]
        dx[:, :-1] = u[:, 1:] - u[:, :-1]
        if variant == "isotropic":
            mag = np.sqrt(dy**2 + dx**2)
            f = 0.5 * np.sum((u - b) ** 2) + tau * mag.sum()
            mag[mag == 0] = 1.0
            gy, gx = dy / mag, dx / mag
        else:
            f = 0.5 * np.sum((u - b) ** 2) + tau * (np.abs(dy).sum() + np.abs(dx).sum())
            gy, gx = np.sign(dy), np.sign(dx)
        if f < best_f:
            best_f = f
            best_u = u.copy()
        g = -gy.copy()
        g[1:] += gy[:-1]
        g -= gx
        g[:, 1:] += gx[:, :-1]
        g = (u - b) + tau * g
        gnorm2 = np.sum(g * g)
        if gnorm2 == 0:
            break
        target = best_f - 50.0 / k**1.5
        u = u - max(f - target, 0.0) / gnorm2 * g
    return best_u, best_f


def match_full_space(series, atoms):
    """Maximum normalized inner-product match in the full fingerprint space.

    series: (n, L) complex rows; atoms: (L, d). Returns argmax indices.
    """
    norms = np.linalg.norm(atoms, axis=0)
    norms[norms == 0] = 1.0
    scores = np.abs(series.conj() @ atoms) / norms[None, :]
    return np.argmax(scores, axis=1)
