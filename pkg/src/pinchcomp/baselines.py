"""Comparison schemes and the projected-gradient reference optimizer.

Four schemes frame the meta-learned optimizer:

* ``pga_oracle`` - multi-start projected gradient ascent over (W, P) with
  backtracking; the near-optimal reference the headline ratio is measured
  against.
* equidistant pinching - PAs fixed on a uniform grid, beamforming optimized
  by the same projected-gradient routine.
* WDMA - one waveguide per user per BS, equal power split, positions fixed.
* CoMP-Fixed (ULA) - conventional arrays at the service-area center with
  matched-filter transmission and an optimized per-user power split.  The
  fixed directions leave residual inter-user interference, which is what
  caps this scheme at high transmit power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import effective_channel_matrix, ula_channel
from .geometry import (SystemGeometry, PinchingState, spacing_violations,
                       range_violations, respace_positions)
from .rate import (BeamformingState, RateReport, sum_rate, wdma_rate,
                   wdma_beamforming, power_check)
from .tapegraph import joint_rate_gradient
from .gml import normalize_power, equidistant_x, clustered_x

ULA_ALPHA = 3.9


@dataclass
class BaselineResult:
    scheme: str
    sum_rate: float
    report: RateReport
    w: np.ndarray
    x: np.ndarray | None       # None for the ULA scheme (no positions)
    assignment: np.ndarray | None = None
    qos_feasible: bool = True

    def to_doc(self) -> dict:
        doc = {
            "scheme": self.scheme,
            "best": {
                "sum_rate": self.sum_rate,
                "per_user_rate": self.report.per_user_rate.tolist(),
                "feasible_qos": [bool(f) for f in self.report.feasible_qos],
                "w_re": self.w.real.tolist(),
                "w_im": self.w.imag.tolist(),
                "p": self.x.tolist() if self.x is not None else None,
            },
        }
        if self.assignment is not None:
            doc["best"]["assignment"] = self.assignment.tolist()
        return doc


def equidistant_positions(geom: SystemGeometry) -> PinchingState:
    """PAs at x = p*span/(P+1), p = 1..P, on every waveguide."""
    return PinchingState(equidistant_x(geom))


def mrt_beamforming(geom: SystemGeometry, a: np.ndarray, budgets=None) -> np.ndarray:
    """Matched-filter beams at full per-BS budget, coherent across BSs."""
    budgets = geom.power_budget if budgets is None else budgets
    k = a.shape[0]
    w = np.zeros((2, a.shape[2], k), dtype=complex)
    for b in range(2):
        for u in range(k):
            w[b, :, u] = np.conj(a[u, b, :])
        used = np.sum(np.abs(w[b]) ** 2)
        if used > 0:
            w[b] *= math.sqrt(budgets[b] / used)
    return w


def _objective(geom: SystemGeometry, w: np.ndarray, x: np.ndarray,
               qos_weight: float) -> float:
    a = effective_channel_matrix(geom, PinchingState(x))
    rep = sum_rate(a, BeamformingState(w), geom.noise_power, geom.rate_threshold)
    val = rep.sum_rate
    if qos_weight > 0.0:
        val -= qos_weight * float(np.sum(np.maximum(
            geom.rate_threshold - rep.per_user_rate, 0.0)))
    return val


def _project(geom: SystemGeometry, w: np.ndarray, x: np.ndarray):
    w = normalize_power(BeamformingState(w), geom.power_budget).w
    x = respace_positions(geom, x)
    return w, x


def _pga_single(geom: SystemGeometry, w: np.ndarray, x: np.ndarray, steps: int,
                step_size: float, optimize_positions: bool, qos_weight: float,
                stall_limit: int = 40):
    """Projected gradient ascent with backtracking from one start point."""
    w, x = _project(geom, w, x)
    best_val = _objective(geom, w, x, qos_weight)
    scale = step_size
    stall = 0
    w_amp = math.sqrt(max(geom.power_budget) / w.size)
    x_amp = geom.guided_wavelength
    for _ in range(steps):
        gw, gx = joint_rate_gradient(geom, w, x)
        gw_n = float(np.linalg.norm(gw.view(float)))
        gx_n = float(np.linalg.norm(gx))
        dw = gw / (gw_n + 1e-300) * w_amp
        dx = gx / (gx_n + 1e-300) * x_amp if optimize_positions else 0.0
        improved = False
        s = scale
        for _ in range(24):
            w_try, x_try = _project(geom, w + s * dw,
                                    x + s * dx if optimize_positions else x)
            val = _objective(geom, w_try, x_try, qos_weight)
            if val >= best_val:
                improved = val > best_val + 1e-12
                w, x, best_val = w_try, x_try, val
                scale = min(s * 2.0, 64.0)
                break
            s *= 0.5
        if not improved:
            stall += 1
            if stall >= stall_limit:
                break
        else:
            stall = 0
    return w, x, best_val


def pga_oracle(geom: SystemGeometry, p_init: PinchingState | None = None,
               w_init: BeamformingState | None = None, restarts: int = 16,
               steps: int = 500, step_size: float = 1.0,
               optimize_positions: bool = True, qos_weight: float = 0.0,
               seed: int = 0) -> BaselineResult:
    """Best feasible solution over multiple projected-gradient starts.

    Restart 0 starts from matched-filter beams at equidistant (or given)
    positions; later restarts draw seed-derived random starts.
    """
    if restarts < 1:
        raise ValueError("need at least one restart")
    rng = np.random.default_rng(seed)
    x0 = p_init.x if p_init is not None else clustered_x(geom)
    n, k = geom.n_waveguides, geom.n_users

    best = None
    for r in range(restarts):
        if r == 0:
            x_start = x0.copy()
            if w_init is not None:
                w_start = w_init.w.copy()
            else:
                a0 = effective_channel_matrix(geom, PinchingState(x_start))
                w_start = mrt_beamforming(geom, a0)
        else:
            if optimize_positions:
                x_start = rng.uniform(0.0, geom.span, size=x0.shape)
                x_start = respace_positions(geom, x_start)
            else:
                x_start = x0.copy()
            w_start = (rng.standard_normal((2, n, k))
                       + 1j * rng.standard_normal((2, n, k)))
            w_start = normalize_power(
                BeamformingState(w_start), geom.power_budget).w
        w, x, val = _pga_single(geom, w_start, x_start, steps, step_size,
                                optimize_positions, qos_weight)
        if best is None or val > best[2]:
            best = (w, x, val)

    w, x, _ = best
    a = effective_channel_matrix(geom, PinchingState(x))
    report = sum_rate(a, BeamformingState(w), geom.noise_power, geom.rate_threshold)
    return BaselineResult(
        scheme="pga_oracle", sum_rate=report.sum_rate, report=report,
        w=w, x=x, qos_feasible=bool(np.all(report.feasible_qos)),
    )


def equidistant_baseline(geom: SystemGeometry, restarts: int = 4,
                         steps: int = 300, qos_weight: float = 0.0,
                         seed: int = 0,
                         w_warm: np.ndarray | None = None) -> BaselineResult:
    """Uniform PA grid; beamforming optimized by the same projected routine."""
    p0 = equidistant_positions(geom)
    w_init = BeamformingState(w_warm) if w_warm is not None else None
    res = pga_oracle(geom, p_init=p0, w_init=w_init, restarts=restarts,
                     steps=steps, optimize_positions=False,
                     qos_weight=qos_weight, seed=seed)
    return BaselineResult(
        scheme="equidistant", sum_rate=res.sum_rate, report=res.report,
        w=res.w, x=res.x, qos_feasible=res.qos_feasible,
    )


def wdma_assign(geom: SystemGeometry, P: PinchingState) -> np.ndarray:
    """Greedy waveguide ownership: strongest users pick first, per BS.

    Returns assignment[k, b] = waveguide index; raises when there are more
    users than waveguides.
    """
    k, n = geom.n_users, geom.n_waveguides
    if k > n:
        raise ValueError(f"{k} users cannot each own one of {n} waveguides")
    a = effective_channel_matrix(geom, P)
    gains = np.abs(a)                     # (K, 2, N)
    order = np.argsort(-gains.max(axis=(1, 2)), kind="stable")
    assignment = np.zeros((k, 2), dtype=int)
    for b in range(2):
        taken = set()
        for u in order:
            row = gains[u, b]
            pick = min((i for i in range(n) if i not in taken),
                       key=lambda i: (-row[i], i))
            assignment[u, b] = pick
            taken.add(pick)
    return assignment


def wdma_powers(geom: SystemGeometry, assignment: np.ndarray) -> np.ndarray:
    """Equal split across a BS's waveguides; only owned waveguides radiate."""
    powers = np.zeros((2, geom.n_waveguides))
    for b in range(2):
        per_wg = geom.power_budget[b] / geom.n_waveguides
        for k in range(assignment.shape[0]):
            powers[b, assignment[k, b]] = per_wg
    return powers


def wdma_baseline(geom: SystemGeometry, P: PinchingState | None = None) -> BaselineResult:
    """Waveguide-division benchmark at fixed (default equidistant) positions."""
    P = P if P is not None else equidistant_positions(geom)
    a = effective_channel_matrix(geom, P)
    assignment = wdma_assign(geom, P)
    powers = wdma_powers(geom, assignment)
    report = wdma_rate(a, assignment, powers, geom.noise_power, geom.rate_threshold)
    w = wdma_beamforming(assignment, powers, geom.n_waveguides).w
    return BaselineResult(
        scheme="wdma", sum_rate=report.sum_rate, report=report, w=w, x=P.x,
        assignment=assignment, qos_feasible=bool(np.all(report.feasible_qos)),
    )


def ula_effective_channel(geom: SystemGeometry, alpha: float = ULA_ALPHA) -> np.ndarray:
    """(K, 2, N) rows for arrays at the service-area center, one per BS.

    The exponent-alpha path loss is referenced to the same 1 m gain constant
    as the pinching model so the two channel families share power units.
    """
    k, n = geom.n_users, geom.n_waveguides
    a = np.zeros((k, 2, n), dtype=complex)
    for b in range(2):
        pos = np.array([geom.span / 2.0, geom.span / 2.0, geom.heights[b]])
        for u in range(k):
            a[u, b, :] = geom.eta * ula_channel(
                pos, n, geom.wavelength / 2.0, geom.users[u],
                geom.wavelength, alpha)
    return a


def _ula_w_from_powers(a: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Matched-filter directions with per-user, per-BS power loading."""
    k, _, n = a.shape
    w = np.zeros((2, n, k), dtype=complex)
    for b in range(2):
        for u in range(k):
            h = a[u, b, :]
            nrm = np.linalg.norm(h)
            if nrm > 0:
                w[b, :, u] = np.conj(h) / nrm * math.sqrt(max(powers[u, b], 0.0))
    return w


def fixed_ula_optimize(geom: SystemGeometry, steps: int = 200,
                       restarts: int = 4, qos_weight: float = 0.0,
                       seed: int = 0, alpha: float = ULA_ALPHA) -> BaselineResult:
    """Conventional-array benchmark: matched-filter beams, optimized power split.

    Transmit directions stay fixed at the per-user matched filter (the
    "fixed" in CoMP-Fixed); the per-user power allocation at each BS is
    optimized by projected gradient with numerical gradients.
    """
    a = ula_effective_channel(geom, alpha)
    k = geom.n_users
    rng = np.random.default_rng(seed)

    def objective(powers):
        w = _ula_w_from_powers(a, powers)
        rep = sum_rate(a, BeamformingState(w), geom.noise_power, geom.rate_threshold)
        val = rep.sum_rate
        if qos_weight > 0.0:
            val -= qos_weight * float(np.sum(np.maximum(
                geom.rate_threshold - rep.per_user_rate, 0.0)))
        return val

    def project(powers):
        powers = np.maximum(powers, 0.0)
        for b in range(2):
            tot = powers[:, b].sum()
            if tot > geom.power_budget[b]:
                powers[:, b] *= geom.power_budget[b] / tot
        return powers

    best_p, best_val = None, -np.inf
    for r in range(restarts):
        if r == 0:
            powers = np.full((k, 2), 1.0 / k) * np.asarray(geom.power_budget)
        else:
            raw = rng.random((k, 2))
            powers = raw / raw.sum(axis=0, keepdims=True) * np.asarray(geom.power_budget)
        powers = project(powers)
        val = objective(powers)
        scale = 0.25
        stall = 0
        for _ in range(steps):
            grad = np.zeros_like(powers)
            h = 1e-4 * max(geom.power_budget)
            for i in range(k):
                for b in range(2):
                    up = powers.copy()
                    up[i, b] += h
                    dn = powers.copy()
                    dn[i, b] = max(dn[i, b] - h, 0.0)
                    grad[i, b] = (objective(project(up)) - objective(project(dn))) / (2 * h)
            gn = np.linalg.norm(grad)
            if gn < 1e-14:
                break
            step = grad / gn * max(geom.power_budget)
            improved = False
            s = scale
            for _ in range(20):
                cand = project(powers + s * step)
                v = objective(cand)
                if v > val + 1e-12:
                    powers, val = cand, v
                    scale = min(s * 2.0, 4.0)
                    improved = True
                    break
                s *= 0.5
            if not improved:
                stall += 1
                if stall >= 8:
                    break
            else:
                stall = 0
        if val > best_val:
            best_p, best_val = powers, val

    w = _ula_w_from_powers(a, best_p)
    report = sum_rate(a, BeamformingState(w), geom.noise_power, geom.rate_threshold)
    return BaselineResult(
        scheme="ula", sum_rate=report.sum_rate, report=report, w=w, x=None,
        qos_feasible=bool(np.all(report.feasible_qos)),
    )


def check_feasible(geom: SystemGeometry, result: BaselineResult) -> bool:
    """Power, spacing and range checks for a baseline solution."""
    _, power_ok = power_check(BeamformingState(result.w), geom.power_budget)
    if result.x is None:
        return power_ok
    state = PinchingState(result.x)
    return (power_ok and not spacing_violations(geom, state)
            and not range_violations(geom, state))
