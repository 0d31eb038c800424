"""Channel models: in-waveguide propagation, PA-to-user free space, ULA.

The per-user, per-BS effective channel row collapses the in-waveguide phase
and the free-space leg of every PA on a waveguide into one complex gain per
waveguide:

    a[k, b, n] = sum_p sqrt(delta_eq) * (eta / d_np) * exp(-j*2*pi*(d_np/lam + x_np/lam_g))

with d_np the PA-to-user distance.  The rest of the artifact consumes this
closed form; tests pin it against the explicit stacked-channel/radiation
block-matrix product.

Sign conventions: in-waveguide and free-space phases both advance as
exp(-j*theta); the free-space entry is stored unconjugated and no net
conjugation is applied when the rows are assembled.
"""

from __future__ import annotations

import numpy as np

from .geometry import SystemGeometry, PinchingState, all_pa_coordinates


def waveguide_phase(x: float, guided_wavelength: float) -> float:
    """Phase (radians) accumulated from the feed point to a PA at distance x."""
    if guided_wavelength <= 0:
        raise ValueError("guided wavelength must be positive")
    return 2.0 * np.pi * x / guided_wavelength


def freespace_entry(pa_position, user_position, wavelength: float, eta: float) -> complex:
    """Unconjugated free-space channel entry (eta/d) * exp(-j*2*pi*d/lambda)."""
    d = float(np.linalg.norm(np.asarray(pa_position, float) - np.asarray(user_position, float)))
    if d <= 0.0:
        raise ValueError("PA and user positions coincide (singular distance)")
    return (eta / d) * np.exp(-2j * np.pi * d / wavelength)


def pa_user_distances(geom: SystemGeometry, state: PinchingState) -> np.ndarray:
    """(K, 2, N, P) Euclidean distances between every PA and every user."""
    pas = all_pa_coordinates(geom, state)          # (2, N, P, 3)
    diff = pas[None, ...] - geom.users[:, None, None, None, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def effective_channel_matrix(geom: SystemGeometry, state: PinchingState) -> np.ndarray:
    """(K, 2, N) complex effective channel rows for all users and BSs."""
    d = pa_user_distances(geom, state)             # (K, 2, N, P)
    if np.any(d <= 0):
        raise ValueError("PA and user positions coincide (singular distance)")
    lam = geom.wavelength
    lam_g = geom.guided_wavelength
    # the free-space and in-guide phasors are multiplied rather than summed in
    # the exponent: the totals run to ~1e5 rad, where a single rounding of the
    # summed argument already costs ~1e-11 of relative accuracy
    amp = np.sqrt(geom.delta_eq) * geom.eta / d
    phasor = np.exp(-2j * np.pi * d / lam) * np.exp(-2j * np.pi * state.x[None, ...] / lam_g)
    return np.sum(amp * phasor, axis=-1)


def effective_channel(geom: SystemGeometry, state: PinchingState, user: int, bs: int) -> np.ndarray:
    """Effective channel row (length N) for one user and one BS."""
    k = geom.n_users
    if not (0 <= user < k):
        raise IndexError(f"user index {user} out of range")
    if not (0 <= bs < 2):
        raise IndexError(f"bs index {bs} out of range")
    return effective_channel_matrix(geom, state)[user, bs]


def stacked_channel_oracle(geom: SystemGeometry, state: PinchingState, user: int, bs: int) -> np.ndarray:
    """Literal block-matrix construction of the same row, kept as an oracle.

    Builds the stacked per-waveguide channel column H (free-space entries
    conjugated, as the channel definition's trailing Hermitian demands), the
    block-diagonal in-waveguide radiation matrix G, and evaluates H^H @ G.
    """
    n, p = geom.n_waveguides, geom.n_pas
    lam, lam_g = geom.wavelength, geom.guided_wavelength
    pas = all_pa_coordinates(geom, state)
    u = geom.users[user]

    diff = pas[bs].reshape(n * p, 3) - u[None, :]
    d = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2)
    h_stack = np.conj((geom.eta / d) * np.exp(-2j * np.pi * d / lam))

    g_block = np.zeros((n * p, n), dtype=complex)
    g_col = np.sqrt(geom.delta_eq) * np.exp(
        -2j * np.pi * state.x[bs].reshape(n * p) / lam_g)
    for wg in range(n):
        for j in range(p):
            g_block[wg * p + j, wg] = g_col[wg * p + j]

    return h_stack.conj().T @ g_block


def ula_channel(bs_position, antenna_count: int, spacing: float, user_position,
                wavelength: float, alpha: float) -> np.ndarray:
    """Deterministic LoS steering channel of a uniform linear array.

    Entry m is d_m^(-alpha/2) * exp(-j*2*pi*d_m/lambda) with d_m the distance
    from the m-th element to the user; elements are laid out along x starting
    at bs_position.
    """
    if antenna_count < 1:
        raise ValueError("need at least one array element")
    base = np.asarray(bs_position, dtype=float)
    user = np.asarray(user_position, dtype=float)
    elements = np.tile(base, (antenna_count, 1))
    elements[:, 0] += spacing * np.arange(antenna_count)
    d = np.linalg.norm(elements - user[None, :], axis=1)
    if np.any(d <= 0):
        raise ValueError("user coincides with an array element")
    return d ** (-alpha / 2.0) * np.exp(-2j * np.pi * d / wavelength)
