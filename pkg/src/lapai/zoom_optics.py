"""Gaussian solution of the three-lens continuously variable beam expander.

The expander is a thin-lens train, light travelling in +z:

    collimated input -> L1 (compensator, f1 > 0) -> L2 (variator, f2 < 0)
                     -> L3 (fixed output lens, f3 > 0) -> collimated output

L1 and L2 act as one combined lens whose rear focal point is held on the
front focal point of L3, so the train stays afocal at every zoom position.
The spot magnification is ``M = f3 / f_comb``.  Because the combination has a
real intermediate focus the output beam is inverted: a ray entering at
height ``h`` leaves at ``-M * h``.

Zoom positions are parametrised by the variator magnification ``m2`` in
``[-sqrt(N), -1/sqrt(N)]`` with ``|f_comb| = f1 * |m2|``.  The compensator
magnification ``m1`` follows from the conserved quantity

    U(m1, m2) = f1 (1/m1 + m1) + f2 (1/m2 + m2) = C

which reduces, at each ``m2``, to ``m1**2 - b m1 + 1 = 0``.  Which root is
used is a bookkeeping choice (both give the same lens positions); when the
two roots coalesce at -1 the trajectory moves onto the other root so that
``m1`` stays smooth.

Displacements ``dx1``/``dx2`` are measured from the long-focus position and
counted positive toward the input side, i.e. ``z = z_long - dx``.
"""

from __future__ import annotations

import csv
import io
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

AFOCAL = math.inf
"""Returned by :func:`combined_focal_length` for a zero-power combination."""

AFOCAL_TOL = 1e-12  # mm, on f1 + f2 - d1
COALESCE_TOL = 1e-9  # on |b + 2|
CSV_HEADER = ("m2", "m1", "branch", "dx1_mm", "dx2_mm", "f_comb_mm", "M")

FIRST = "first"
SECOND = "second"


class ZoomError(ValueError):
    """Invalid zoom prescription or request."""


class InfeasibleZoomError(ZoomError):
    """No real Gaussian solution over part of the variator range."""

    def __init__(self, message: str, intervals: Sequence[tuple[float, float]] = ()):
        super().__init__(message)
        self.intervals = list(intervals)


class LensCollisionError(ZoomError):
    pass


@dataclass(frozen=True)
class ZoomConfig:
    """Lens prescription of the spot-size adjustable unit.

    ``m2_long`` must sit at the long-focus end of the variator range,
    ``-sqrt(N)``.  The L1-L2 spacing at long focus is not free: it follows
    from ``f1``, ``f2`` and ``m2_long`` (see :attr:`d1_long`).
    """

    f1: float
    f2: float
    f3: float
    N: float
    m2_long: float
    m1_long: float

    def __post_init__(self):
        for name in ("f1", "f2", "f3", "N", "m2_long", "m1_long"):
            if not math.isfinite(getattr(self, name)):
                raise ZoomError(f"{name} must be finite")
        if self.f1 <= 0:
            raise ZoomError(f"f1 must be positive (converging), got {self.f1}")
        if self.f2 >= 0:
            raise ZoomError(f"f2 must be negative (diverging), got {self.f2}")
        if self.f3 <= 0:
            raise ZoomError(f"f3 must be positive (converging), got {self.f3}")
        if self.N < 1:
            raise ZoomError(f"zoom ratio N must be >= 1, got {self.N}")
        if self.m2_long >= 0 or self.m1_long >= 0:
            raise ZoomError("m2_long and m1_long must be negative")
        if not math.isclose(self.m2_long, -math.sqrt(self.N), rel_tol=1e-9):
            raise ZoomError(
                f"m2_long={self.m2_long} is not the long-focus end -sqrt(N)={-math.sqrt(self.N)}"
            )
        if self.d1_long <= 0:
            raise ZoomError(f"L1-L2 spacing at long focus is {self.d1_long:.6g} mm (must be > 0)")

    @property
    def d1_long(self) -> float:
        """L1-L2 spacing at long focus (mm)."""
        return self.f1 + self.f2 + self.f2 / self.m2_long

    @property
    def d2_long(self) -> float:
        """L2-L3 spacing at long focus (mm)."""
        return self.f3 + self.f2 + self.f2 * self.m2_long

    @property
    def b_long(self) -> float:
        return self.m1_long + 1.0 / self.m1_long

    @property
    def conserved_C(self) -> float:
        return conserved_quantity(self, self.m1_long, self.m2_long)

    @property
    def solvable(self) -> bool:
        return not infeasible_intervals(self)


@dataclass(frozen=True)
class ZoomState:
    m2: float
    m1: float
    dx1: float
    dx2: float
    f_comb: float
    M: float
    branch: str
    b: float
    d1: float
    d2: float


@dataclass(frozen=True)
class ZoomTrajectory:
    config: ZoomConfig
    states: tuple[ZoomState, ...]
    conserved_C: float
    switch_index: Optional[int] = None

    @property
    def M_min(self) -> float:
        return min(s.M for s in self.states)

    @property
    def M_max(self) -> float:
        return max(s.M for s in self.states)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.states], dtype=float)


@dataclass(frozen=True)
class ParaxialRay:
    height: float
    slope: float

    def __post_init__(self):
        if not (math.isfinite(self.height) and math.isfinite(self.slope)):
            raise ValueError(f"non-finite ray ({self.height}, {self.slope})")


@dataclass
class VerificationReport:
    max_slope: float = 0.0
    max_height_error: float = 0.0
    max_conservation: float = 0.0
    linearity_residual: float = 0.0
    max_vieta: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


# ---------------------------------------------------------------------------
# closed-form relations


def combined_focal_length(f1: float, f2: float, d1: float) -> float:
    """Focal length of two thin lenses ``d1`` apart; :data:`AFOCAL` if zero power."""
    if f1 == 0 or f2 == 0:
        raise ZoomError("focal lengths must be nonzero")
    denom = f1 + f2 - d1
    if abs(denom) < AFOCAL_TOL:
        return AFOCAL
    return f1 * f2 / denom


def expansion_ratio(f3: float, f_comb: float) -> float:
    if not math.isfinite(f_comb) or f_comb == 0:
        raise ZoomError("degenerate intermediate telescope")
    return f3 / f_comb


def variator_range(N: float) -> tuple[float, float]:
    if N < 1:
        raise ZoomError(f"zoom ratio N must be >= 1, got {N}")
    r = math.sqrt(N)
    return (-r, -1.0 / r)


def variator_displacement(f2: float, m2: float, m2_long: float) -> float:
    """Variator shift from long focus; linear in ``m2``."""
    return f2 * (m2 - m2_long)


def conserved_quantity(config: ZoomConfig, m1: float, m2: float) -> float:
    return config.f1 * (1.0 / m1 + m1) + config.f2 * (1.0 / m2 + m2)


def compensation_coefficient(config: ZoomConfig, m2: float) -> float:
    """Linear coefficient ``b`` of the compensator quadratic at variator magnification ``m2``."""
    if m2 == 0:
        raise ZoomError("m2 = 0 has no conjugate")
    m2l = config.m2_long
    return -(config.f2 / config.f1) * (1.0 / m2 - 1.0 / m2l + m2 - m2l) + config.b_long


def compensator_roots(b: float) -> tuple[float, float]:
    """Both real roots of ``m**2 - b*m + 1 = 0``, larger first.

    Raises:
        ZoomError: if ``|b| < 2`` (beyond the coalescence tolerance).
    """
    disc = b * b - 4.0
    if disc < 0:
        if abs(abs(b) - 2.0) < COALESCE_TOL:
            disc = 0.0
        else:
            raise ZoomError(f"no real Gaussian solution at this zoom position (b={b:.12g})")
    # larger-magnitude root first, the other from the unit product
    big = 0.5 * (b + math.copysign(math.sqrt(disc), b))
    small = 1.0 / big
    return (big, small) if big >= small else (small, big)


def compensator_displacement(config: ZoomConfig, b: float) -> float:
    """Compensator shift from long focus for coefficient ``b``.

    The L1 position only depends on ``m1 + 1/m1 = b`` so both roots give the
    same shift.
    """
    return config.f1 * (config.b_long - b)


def coalescing_m1_long(f1: float, f2: float, N: float) -> float:
    """``m1_long`` for which the compensator roots meet at -1 exactly when ``m2 = -1``.

    This is the prescription where the trajectory changes root branch in the
    middle of the zoom range.
    """
    m2l = -math.sqrt(N)
    b_long = -2.0 + (f2 / f1) * (-2.0 - (m2l + 1.0 / m2l))
    if b_long > -2.0:
        raise ZoomError("no negative coalescing solution for this prescription")
    return min(compensator_roots(b_long))


def infeasible_intervals(config: ZoomConfig, n_scan: int = 4001) -> list[tuple[float, float]]:
    """Sub-intervals of the variator range where ``|b| < 2``."""
    lo, hi = variator_range(config.N)
    m2 = np.linspace(lo, hi, n_scan)
    if lo < -1.0 < hi:
        m2 = np.sort(np.append(m2, -1.0))
    b = -(config.f2 / config.f1) * (1.0 / m2 - 1.0 / config.m2_long + m2 - config.m2_long) + config.b_long
    bad = np.abs(b) < 2.0 - COALESCE_TOL
    out = []
    i = 0
    while i < len(m2):
        if bad[i]:
            j = i
            while j + 1 < len(m2) and bad[j + 1]:
                j += 1
            out.append((float(m2[i]), float(m2[j])))
            i = j + 1
        else:
            i += 1
    return out


# ---------------------------------------------------------------------------
# trajectory


def _root_on_branch(b: float, branch: str) -> float:
    first, second = compensator_roots(b)
    return first if branch == FIRST else second


def _other(branch: str) -> str:
    return SECOND if branch == FIRST else FIRST


def _start_branch(config: ZoomConfig) -> str:
    first, second = compensator_roots(config.b_long)
    m1l = config.m1_long
    return FIRST if abs(first - m1l) <= abs(second - m1l) else SECOND


def state_at(config: ZoomConfig, m2: float, branch: str) -> ZoomState:
    """Zoom state at variator magnification ``m2`` on the given root branch."""
    b = compensation_coefficient(config, m2)
    m1 = _root_on_branch(b, branch)
    dx1 = compensator_displacement(config, b)
    dx2 = variator_displacement(config.f2, m2, config.m2_long)
    d1 = config.d1_long - dx2 + dx1
    d2 = config.d2_long + dx2
    f_comb = combined_focal_length(config.f1, config.f2, d1)
    M = expansion_ratio(config.f3, f_comb)
    return ZoomState(m2=m2, m1=m1, dx1=dx1, dx2=dx2, f_comb=f_comb, M=M, branch=branch, b=b, d1=d1, d2=d2)


def _coalescence_point(config: ZoomConfig) -> Optional[float]:
    # b is affine in m2 + 1/m2, whose only stationary point on m2 < 0 is -1;
    # a tangential touch of |b| = 2 can only happen there.
    lo, hi = variator_range(config.N)
    if not (lo < -1.0 < hi):
        return None
    b = compensation_coefficient(config, -1.0)
    if abs(b + 2.0) < COALESCE_TOL:
        return -1.0
    return None


def solve_trajectory(config: ZoomConfig, n_samples: int = 200) -> ZoomTrajectory:
    """Sample the Gaussian solution uniformly in ``m2`` from long to short focus.

    Raises:
        InfeasibleZoomError: if any part of the range has ``|b| < 2``.
    """
    if n_samples < 2:
        raise ZoomError("n_samples must be >= 2")
    bad = infeasible_intervals(config)
    if bad:
        spans = ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in bad)
        raise InfeasibleZoomError(f"no real Gaussian solution for m2 in {spans}", bad)

    lo, hi = variator_range(config.N)
    if lo == hi:
        m2s = np.array([lo])
    else:
        m2s = np.linspace(lo, hi, n_samples)
        m2s[0], m2s[-1] = lo, hi

    branch = _start_branch(config)
    switch_at = _coalescence_point(config)
    switch_index = None
    states = []
    for i, m2 in enumerate(m2s):
        if switch_at is not None and switch_index is None and m2 >= switch_at:
            switch_index = i
            branch = _other(branch)
        states.append(state_at(config, float(m2), branch))
    return ZoomTrajectory(config, tuple(states), config.conserved_C, switch_index)


# ---------------------------------------------------------------------------
# paraxial verification


def lens_positions(config: ZoomConfig, state: ZoomState) -> tuple[float, float, float]:
    """Axial positions (mm) of L1, L2, L3 with L1 at 0 in the long-focus state."""
    z1 = -state.dx1
    z2 = config.d1_long - state.dx2
    z3 = config.d1_long + config.d2_long
    return z1, z2, z3


def _thin_lens(f: float) -> np.ndarray:
    return np.array([[1.0, 0.0], [-1.0 / f, 1.0]])


def _gap(d: float) -> np.ndarray:
    return np.array([[1.0, d], [0.0, 1.0]])


def system_matrix(config: ZoomConfig, state: ZoomState) -> np.ndarray:
    z1, z2, z3 = lens_positions(config, state)
    g1, g2 = z2 - z1, z3 - z2
    if g1 < 0 or g2 < 0:
        raise LensCollisionError(f"lens collision: gaps L1-L2={g1:.6g} mm, L2-L3={g2:.6g} mm")
    return _thin_lens(config.f3) @ _gap(g2) @ _thin_lens(config.f2) @ _gap(g1) @ _thin_lens(config.f1)


def ray_trace(config: ZoomConfig, state: ZoomState, ray: ParaxialRay) -> ParaxialRay:
    """Trace a paraxial ray from just before L1 to just after L3."""
    h, u = system_matrix(config, state) @ np.array([ray.height, ray.slope])
    return ParaxialRay(float(h), float(u))


def afocality_residual(config: ZoomConfig, state: ZoomState) -> float:
    """|Optical power| (1/mm) of the three-lens system in exact rational arithmetic.

    The float inputs are taken at face value, so a state whose spacings are
    exactly afocal reports exactly zero.
    """
    z1, z2, z3 = lens_positions(config, state)
    one = Fraction(1)
    h, u = one, Fraction(0)
    for f, gap in ((config.f1, z2 - z1), (config.f2, z3 - z2), (config.f3, None)):
        u -= h / Fraction(f)
        if gap is not None:
            h += Fraction(gap) * u
    return abs(float(u))


def verify_trajectory(traj: ZoomTrajectory, heights: Sequence[float] = (0.1, 1.5, 3.0)) -> VerificationReport:
    """Run the invariant suite over every state of a solved trajectory."""
    cfg = traj.config
    rep = VerificationReport()
    for i, s in enumerate(traj.states):
        for h in heights:
            out = ray_trace(cfg, s, ParaxialRay(h, 0.0))
            rep.max_slope = max(rep.max_slope, abs(out.slope))
            # inverting expander: exit height is -M * h
            rep.max_height_error = max(rep.max_height_error, abs(-out.height / h - s.M) / s.M)
        U = conserved_quantity(cfg, s.m1, s.m2)
        rep.max_conservation = max(rep.max_conservation, abs(U - traj.conserved_C) / abs(traj.conserved_C))
        rep.max_vieta = max(rep.max_vieta, abs(s.m1 * (s.b - s.m1) - 1.0))
    m2 = traj.column("m2")
    dx2 = traj.column("dx2")
    if len(m2) >= 3:
        coef = np.polyfit(m2, dx2, 1)
        rep.linearity_residual = float(np.max(np.abs(np.polyval(coef, m2) - dx2)))
    if rep.max_slope >= 1e-9:
        rep.failures.append(f"afocality: max |slope| {rep.max_slope:.3e} rad")
    if rep.max_height_error >= 1e-6:
        rep.failures.append(f"height ratio: max rel error {rep.max_height_error:.3e}")
    if rep.max_conservation >= 1e-9:
        rep.failures.append(f"conservation: max rel residual {rep.max_conservation:.3e}")
    if rep.linearity_residual >= 1e-12 * max(1.0, float(np.max(np.abs(dx2)))):
        rep.failures.append(f"variator linearity: residual {rep.linearity_residual:.3e} mm")
    return rep


# ---------------------------------------------------------------------------
# beam expansion


def state_for_expansion(traj: ZoomTrajectory, M_target: float) -> ZoomState:
    """Zoom state whose magnification equals ``M_target``.

    The bracketing pair of samples is located first, then ``m2`` is refined
    inside that bracket.
    """
    lo, hi = traj.M_min, traj.M_max
    if not (lo - 1e-12 * lo <= M_target <= hi + 1e-12 * hi):
        raise ZoomError(f"M={M_target} outside achievable range [{lo:.6g}, {hi:.6g}]")
    cfg = traj.config
    states = traj.states
    if len(states) == 1:
        return states[0]
    Ms = traj.column("M")
    k = int(np.searchsorted(Ms, M_target))
    k = min(max(k, 1), len(states) - 1)
    a, b = states[k - 1], states[k]
    if abs(a.M - M_target) <= 1e-12 * M_target:
        return a
    if abs(b.M - M_target) <= 1e-12 * M_target:
        return b

    def branch_for(m2: float) -> str:
        return a.branch if abs(m2 - a.m2) <= abs(m2 - b.m2) else b.branch

    m2 = brentq(
        lambda x: state_at(cfg, x, branch_for(x)).M - M_target, a.m2, b.m2, xtol=1e-15, rtol=1e-15
    )
    return state_at(cfg, m2, branch_for(m2))


def beam_expand(traj: ZoomTrajectory, input_diameter: float, M_target: float) -> float:
    """Output beam diameter (mm) for a collimated input at magnification ``M_target``."""
    if input_diameter <= 0:
        raise ZoomError("input diameter must be positive")
    state = state_for_expansion(traj, M_target)
    if abs(state.M - M_target) > 1e-6 * M_target:
        raise ZoomError(f"could not reach M={M_target} (got {state.M})")
    return input_diameter * state.M


def trajectory_csv(traj: ZoomTrajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in traj.states:
        w.writerow(
            [f"{s.m2:.9g}", f"{s.m1:.9g}", s.branch, f"{s.dx1:.9g}", f"{s.dx2:.9g}", f"{s.f_comb:.9g}", f"{s.M:.9g}"]
        )
    return buf.getvalue()


DEMO_CONFIG = ZoomConfig(f1=100.0, f2=-50.0, f3=240.0, N=4.0, m2_long=-2.0, m1_long=-3.0)
