"""SINR, per-user achievable rate and the sum-rate objective.

User k's desired signal adds the two BS contributions coherently,
|a_k1 . w_k1 + a_k2 . w_k2|^2, while inter-user interference accumulates
per BS and adds in power (I_1 + I_2) in the denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POWER_TOL = 1e-9   # relative slack on the power budget check
QOS_TOL = 1e-9     # absolute slack on the per-user rate threshold


@dataclass(frozen=True)
class BeamformingState:
    """Per-BS complex beamforming matrices, shape (2, N, K); column k serves user k."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=complex)
        if w.ndim != 3 or w.shape[0] != 2:
            raise ValueError("beamforming state must have shape (2, N, K)")
        if not np.all(np.isfinite(w.view(float))):
            raise ValueError("beamforming entries must be finite")
        object.__setattr__(self, "w", w)

    @property
    def n_users(self) -> int:
        return self.w.shape[2]

    def copy(self) -> "BeamformingState":
        return BeamformingState(self.w.copy())


@dataclass
class RateReport:
    per_user_rate: np.ndarray
    sum_rate: float
    per_user_sinr: np.ndarray
    interference: np.ndarray    # (K, 2): I_1, I_2 per user
    feasible_qos: np.ndarray    # bool per user, rate >= threshold - QOS_TOL


def user_rate(a: np.ndarray, W: BeamformingState, user: int, noise_power: float):
    """Rate, SINR and the two per-BS interference powers for one user.

    ``a`` is the (K, 2, N) effective channel array.
    """
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    k = user
    if a.shape[0] != W.w.shape[2] or a.shape[2] != W.w.shape[1]:
        raise ValueError(
            f"channel {a.shape} and beamforming {W.w.shape} dimensions disagree"
        )
    sig = a[k, 0] @ W.w[0, :, k] + a[k, 1] @ W.w[1, :, k]
    signal = abs(sig) ** 2
    i_per_bs = np.zeros(2)
    for b in range(2):
        for kp in range(a.shape[0]):
            if kp == k:
                continue
            i_per_bs[b] += abs(a[k, b] @ W.w[b, :, kp]) ** 2
    sinr = signal / (i_per_bs[0] + i_per_bs[1] + noise_power)
    rate = np.log2(1.0 + sinr)
    return float(rate), float(sinr), float(i_per_bs[0]), float(i_per_bs[1])


def sum_rate(a: np.ndarray, W: BeamformingState, noise_power: float,
             rate_threshold: float = 0.0) -> RateReport:
    """Aggregate user_rate over all users and fill the QoS flags."""
    n_users = a.shape[0]
    rates = np.zeros(n_users)
    sinrs = np.zeros(n_users)
    interf = np.zeros((n_users, 2))
    for k in range(n_users):
        rates[k], sinrs[k], interf[k, 0], interf[k, 1] = user_rate(a, W, k, noise_power)
    return RateReport(
        per_user_rate=rates,
        sum_rate=float(np.sum(rates)),
        per_user_sinr=sinrs,
        interference=interf,
        feasible_qos=rates >= rate_threshold - QOS_TOL,
    )


def power_used(W: BeamformingState) -> np.ndarray:
    """trace(W_b W_b^H) per BS: total transmit power in watts."""
    return np.array([float(np.sum(np.abs(W.w[b]) ** 2)) for b in range(2)])


def power_check(W: BeamformingState, budgets) -> tuple[np.ndarray, bool]:
    """Power drawn per BS and whether both stay within budget (1e-9 relative)."""
    used = power_used(W)
    budgets = np.asarray(budgets, dtype=float)
    feasible = bool(np.all(used <= budgets * (1.0 + POWER_TOL)))
    return used, feasible


def wdma_rate(a: np.ndarray, assignment, powers, noise_power: float,
              rate_threshold: float = 0.0) -> RateReport:
    """Rates under waveguide-division access, computed directly from the assignment.

    ``assignment[k][b]`` is the waveguide serving user k from BS b (injective
    per BS); ``powers[b][n]`` the transmit power on waveguide n of BS b.  User
    k's two owned waveguides combine coherently; every waveguide owned by
    another user interferes.
    """
    n_users = a.shape[0]
    assignment = np.asarray(assignment, dtype=int)
    powers = np.asarray(powers, dtype=float)
    for b in range(2):
        owners = assignment[:, b]
        if len(set(owners.tolist())) != n_users:
            raise ValueError(f"assignment is not injective for BS {b}")

    rates = np.zeros(n_users)
    sinrs = np.zeros(n_users)
    interf = np.zeros((n_users, 2))
    for k in range(n_users):
        sig = 0.0 + 0.0j
        for b in range(2):
            n = assignment[k, b]
            sig += a[k, b, n] * np.sqrt(powers[b, n])
        signal = abs(sig) ** 2
        for b in range(2):
            for kp in range(n_users):
                if kp == k:
                    continue
                n = assignment[kp, b]
                interf[k, b] += abs(a[k, b, n]) ** 2 * powers[b, n]
        sinrs[k] = signal / (interf[k, 0] + interf[k, 1] + noise_power)
        rates[k] = np.log2(1.0 + sinrs[k])
    return RateReport(
        per_user_rate=rates,
        sum_rate=float(np.sum(rates)),
        per_user_sinr=sinrs,
        interference=interf,
        feasible_qos=rates >= rate_threshold - QOS_TOL,
    )


def wdma_beamforming(assignment, powers, n_waveguides: int) -> BeamformingState:
    """The sparse beamforming matrix equivalent to a WDMA assignment."""
    assignment = np.asarray(assignment, dtype=int)
    powers = np.asarray(powers, dtype=float)
    n_users = assignment.shape[0]
    w = np.zeros((2, n_waveguides, n_users), dtype=complex)
    for k in range(n_users):
        for b in range(2):
            n = assignment[k, b]
            w[b, n, k] = np.sqrt(powers[b, n])
    return BeamformingState(w)
