"""Physical layout of the two-BS pinching-antenna system.

Two base stations feed parallel dielectric waveguides stretched along the
x-axis over a square service area.  Each waveguide carries a fixed number of
pinching antennas (PAs) whose x-positions are the placement variables of the
whole artifact.  This module owns the immutable geometry description plus the
placement feasibility checks (minimum PA spacing and waveguide operating
range).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


def dbm_to_watt(dbm: float) -> float:
    """Convert a dBm level to watts."""
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * np.log10(watt) + 30.0


@dataclass(frozen=True)
class SystemGeometry:
    """Immutable description of waveguides, users and link-budget constants.

    Distances are meters, powers watts.  Both BSs share the waveguide count
    ``n_waveguides``, PA count ``n_pas`` and span; they differ in height.
    ``y_offsets`` holds the y-coordinate of each waveguide line, shared by
    both BSs.
    """

    n_waveguides: int
    n_pas: int
    span: float
    heights: tuple[float, float]
    y_offsets: tuple[float, ...]
    users: np.ndarray          # (K, 3), z == 0
    wavelength: float
    n_eff: float
    min_spacing: float
    eta: float
    delta_eq: float
    noise_power: float
    power_budget: tuple[float, float]
    rate_threshold: float
    bs_count: int = 2
    feed_side: tuple[str, str] = ("left", "left")

    def __post_init__(self):
        if self.span <= 0:
            raise ValueError("waveguide span must be positive")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.n_eff < 1.0:
            raise ValueError("effective refractive index must be >= 1")
        if any(h <= 0 for h in self.heights):
            raise ValueError("BS heights must be positive")
        if self.n_waveguides < 1 or self.n_pas < 1:
            raise ValueError("need at least one waveguide and one PA")
        if not (0.0 < self.delta_eq <= 1.0 / self.n_pas + 1e-12):
            raise ValueError(
                f"delta_eq={self.delta_eq} outside (0, 1/{self.n_pas}]"
            )
        users = np.asarray(self.users, dtype=float)
        if users.ndim != 2 or users.shape[1] != 3 or users.shape[0] < 1:
            raise ValueError("users must be a (K, 3) array with K >= 1")
        if np.any(np.abs(users[:, 2]) > 0):
            raise ValueError("users must lie on the ground plane z = 0")
        if np.any(users[:, :2] < -1e-9) or np.any(users[:, :2] > self.span + 1e-9):
            raise ValueError("users must lie inside the service rectangle")
        object.__setattr__(self, "users", users)
        if len(self.y_offsets) != self.n_waveguides:
            raise ValueError("y_offsets length must equal the waveguide count")

    @property
    def n_users(self) -> int:
        return self.users.shape[0]

    @property
    def guided_wavelength(self) -> float:
        return self.wavelength / self.n_eff


@dataclass(frozen=True)
class PinchingState:
    """PA x-coordinates: array of shape (2, n_waveguides, n_pas).

    Values may transiently leave [0, span] during optimization; feasibility
    is judged by :func:`spacing_violations` and :func:`range_violations`.
    """

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 3 or x.shape[0] != 2:
            raise ValueError("pinching state must have shape (2, N, P)")
        object.__setattr__(self, "x", x)

    def copy(self) -> "PinchingState":
        return PinchingState(self.x.copy())


# Defaults that the source material leaves open.  min_spacing is the usual
# half-wavelength minimum-coupling heuristic; eta is the free-space reference
# gain at 1 m; n_eff a typical dielectric guide; bandwidth fixes the noise
# power from the -173 dBm/Hz density.
DEFAULTS = dict(
    n_waveguides=2,
    n_pas=4,
    span=80.0,
    heights=(10.0, 15.0),
    wavelength=0.01,
    n_eff=1.4,
    noise_density_dbm_hz=-173.0,
    bandwidth_hz=1e6,
    power_dbm=18.0,
    rate_threshold=0.2,
    n_users=2,
)


def default_y_offsets(span: float, n_waveguides: int) -> tuple[float, ...]:
    """Evenly spaced waveguide lines y = i*span/(N+1), i = 1..N."""
    return tuple(span * i / (n_waveguides + 1) for i in range(1, n_waveguides + 1))


def build_geometry(
    *,
    n_waveguides: int = 2,
    n_pas: int = 4,
    span: float = 80.0,
    heights=(10.0, 15.0),
    y_offsets=None,
    users=None,
    n_users: int = 2,
    seed: int = 0,
    wavelength: float = 0.01,
    n_eff: float = 1.4,
    min_spacing: float = None,
    eta: float = None,
    delta_eq: float = None,
    noise_density_dbm_hz: float = -173.0,
    bandwidth_hz: float = 1e6,
    power_dbm=(18.0, 18.0),
    rate_threshold: float = 0.2,
) -> SystemGeometry:
    """Assemble a validated :class:`SystemGeometry` from scalar settings.

    Users are taken verbatim when ``users`` is given, otherwise K=``n_users``
    positions are sampled uniformly over the span x span rectangle with the
    given seed (deterministic per seed).
    """
    if min_spacing is None:
        min_spacing = wavelength / 2.0
    if eta is None:
        eta = wavelength / (4.0 * np.pi)
    if delta_eq is None:
        delta_eq = 1.0 / n_pas
    if y_offsets is None:
        y_offsets = default_y_offsets(span, n_waveguides)
    if users is None:
        if n_users < 1:
            raise ValueError("need at least one user")
        rng = np.random.default_rng(seed)
        xy = rng.uniform(0.0, span, size=(n_users, 2))
        users = np.concatenate([xy, np.zeros((n_users, 1))], axis=1)
    if np.isscalar(power_dbm):
        power_dbm = (float(power_dbm), float(power_dbm))
    noise_power = dbm_to_watt(noise_density_dbm_hz) * bandwidth_hz
    return SystemGeometry(
        n_waveguides=int(n_waveguides),
        n_pas=int(n_pas),
        span=float(span),
        heights=(float(heights[0]), float(heights[1])),
        y_offsets=tuple(float(y) for y in y_offsets),
        users=users,
        wavelength=float(wavelength),
        n_eff=float(n_eff),
        min_spacing=float(min_spacing),
        eta=float(eta),
        delta_eq=float(delta_eq),
        noise_power=float(noise_power),
        power_budget=(dbm_to_watt(power_dbm[0]), dbm_to_watt(power_dbm[1])),
        rate_threshold=float(rate_threshold),
    )


def with_power_dbm(geom: SystemGeometry, power_dbm: float) -> SystemGeometry:
    """Copy of the geometry with both BS budgets set to the given dBm level."""
    p = dbm_to_watt(power_dbm)
    return replace(geom, power_budget=(p, p))


def with_rate_threshold(geom: SystemGeometry, r_th: float) -> SystemGeometry:
    return replace(geom, rate_threshold=float(r_th))


def pa_coordinates(geom: SystemGeometry, state: PinchingState, bs: int, waveguide: int, pa: int) -> np.ndarray:
    """3-vector [x, y_waveguide, height_bs] of one PA."""
    if not (0 <= bs < 2):
        raise IndexError(f"bs index {bs} out of range")
    if not (0 <= waveguide < geom.n_waveguides):
        raise IndexError(f"waveguide index {waveguide} out of range")
    if not (0 <= pa < geom.n_pas):
        raise IndexError(f"pa index {pa} out of range")
    return np.array([
        state.x[bs, waveguide, pa],
        geom.y_offsets[waveguide],
        geom.heights[bs],
    ])


def all_pa_coordinates(geom: SystemGeometry, state: PinchingState) -> np.ndarray:
    """(2, N, P, 3) array of every PA position."""
    out = np.empty((2, geom.n_waveguides, geom.n_pas, 3))
    out[..., 0] = state.x
    out[..., 1] = np.asarray(geom.y_offsets)[None, :, None]
    out[..., 2] = np.asarray(geom.heights)[:, None, None]
    return out


def spacing_violations(geom: SystemGeometry, state: PinchingState):
    """Unordered PA pairs closer than the minimum spacing.

    Returns a list of (bs, waveguide, p, p', deficit) with deficit =
    min_spacing - |x_p - x_p'| > 0.  Empty list iff the spacing constraint
    holds everywhere.
    """
    ds = geom.min_spacing
    out = []
    for b in range(2):
        for n in range(geom.n_waveguides):
            xs = state.x[b, n]
            for p in range(geom.n_pas):
                for q in range(p + 1, geom.n_pas):
                    gap = abs(xs[p] - xs[q])
                    if gap < ds:
                        out.append((b, n, p, q, ds - gap))
    return out


def range_violations(geom: SystemGeometry, state: PinchingState):
    """PAs lying outside the closed operating range [0, span].

    Returns a list of (bs, waveguide, p, overshoot) with overshoot = -x for
    x < 0 and x - span for x > span.
    """
    d = geom.span
    out = []
    for b in range(2):
        for n in range(geom.n_waveguides):
            xs = state.x[b, n]
            for p in range(geom.n_pas):
                x = xs[p]
                if x < 0.0:
                    out.append((b, n, p, -x))
                elif x > d:
                    out.append((b, n, p, x - d))
    return out


def clamp_to_range(geom: SystemGeometry, state: PinchingState) -> PinchingState:
    """Positions clipped into [0, span]."""
    return PinchingState(np.clip(state.x, 0.0, geom.span))


def respace_positions(geom: SystemGeometry, x: np.ndarray) -> np.ndarray:
    """Project raw positions onto the feasible set: inside [0, span], pairwise
    spacing at least min_spacing.

    Per waveguide: sort, sweep left-to-right pushing overlapping PAs apart,
    then sweep back from the right edge if the last PA overshot the span.
    """
    ds = geom.min_spacing
    span = geom.span
    out = np.empty_like(x)
    for b in range(2):
        for n in range(x.shape[1]):
            xs = np.sort(np.clip(x[b, n], 0.0, span))
            for p in range(1, xs.size):
                if xs[p] < xs[p - 1] + ds:
                    xs[p] = xs[p - 1] + ds
            if xs[-1] > span:
                xs[-1] = span
                for p in range(xs.size - 2, -1, -1):
                    if xs[p] > xs[p + 1] - ds:
                        xs[p] = xs[p + 1] - ds
            out[b, n] = xs
    return out
