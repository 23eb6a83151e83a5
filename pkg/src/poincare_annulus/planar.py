"""Planar restrictions, projected comparison systems and limit cycles.

Orbits in the (m, s) plane are traced by :func:`trace`, which handles both a
single smooth field and a field glued across the tangency curve
m = kappa (1 - s)(s - tau). Glued orbits are integrated piecewise: each piece
stops on the curve and the next one restarts with the field of the side the
orbit enters. Integration runs in (log m, s) since orbits pass within 1e-40
of the s-axis; everything returned is in (m, s).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import shapely
from scipy.optimize import brentq

from .integrator import MaxStepsExceeded, StepSizeUnderflow, Trajectory, integrate
from .model import Params, plane_events, plane_rhs

__all__ = [
    "PlanarSystem",
    "PlaneFlow",
    "LevelSection",
    "CurveSection",
    "Crossing",
    "Orbit",
    "LimitCycle",
    "LienardReport",
    "CycleNotFound",
    "NonConvergence",
    "classify_planar_equilibrium",
    "lienard_audit",
    "trace",
    "return_map",
    "find_limit_cycle",
    "cycle_tangency_crossings",
]

RTOL = 1e-10
ATOL = 1e-12
SNAP = 1e-12  # |g| below this counts as "on the curve" when choosing a side


class CycleNotFound(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    pass


def classify_planar_equilibrium(a: float, lam: float) -> str:
    """Stability of P((1-lam)(lam+a), lam) for the planar system."""
    if not (a > 0 and 0 < lam < 1):
        raise ValueError("need a > 0 and 0 < lambda < 1")
    return "UnstableFocusNode" if lam < (1.0 - a) / 2.0 else "StableFocusNode"


@dataclass(frozen=True)
class PlanarSystem:
    """x' = phi(s) x, s' = h(s) - psi(s) x with phi = (s-lam)/(s+a), psi = s/(s+a).

    ``form`` is "comparison" (x is the total density m with the fraction
    frozen at 1 or 0) or "restriction" (the other predator is absent). The
    two give the same field; the tag records where it came from.
    """

    a: float
    lam: float
    form: str = "comparison"
    index: int = 1
    scaled: bool = False

    def __post_init__(self):
        if self.form not in ("comparison", "restriction"):
            raise ValueError(f"unknown form {self.form!r}")
        if not (self.a > 0 and self.lam > 0):
            raise ValueError("a and lambda must be positive")

    @classmethod
    def comparison(cls, p: Params, i: int, scaled: bool = False) -> "PlanarSystem":
        a, lam = p.pair(i)
        return cls(a, lam, "comparison", i, scaled)

    @classmethod
    def restriction(cls, p: Params, i: int, scaled: bool = False) -> "PlanarSystem":
        a, lam = p.pair(i)
        return cls(a, lam, "restriction", i, scaled)

    @property
    def equilibrium(self) -> tuple[float, float]:
        return (1.0 - self.lam) * (self.lam + self.a), self.lam

    @property
    def stability(self) -> str:
        return classify_planar_equilibrium(self.a, self.lam)

    def field(self, pt) -> np.ndarray:
        x, s = pt
        out = np.array([(s - self.lam) / (s + self.a) * x, s * (1.0 - s) - s / (s + self.a) * x])
        return out * (s + self.a) if self.scaled else out

    # Lienard-form accessors: F = h/psi and phi/psi
    def F(self, s):
        return (1.0 - s) * (s + self.a)

    def dF(self, s):
        return 1.0 - self.a - 2.0 * s

    def phi_ratio(self, s):
        return (s - self.lam) / s


@dataclass(frozen=True)
class LienardReport:
    max_violation: dict[str, float]
    sign_condition: bool
    grid_n: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.sign_condition and all(v <= self.tol for v in self.max_violation.values())


def lienard_audit(sys: PlanarSystem, grid_n: int = 1000, tol: float = 1e-9) -> LienardReport:
    """Sample F'(s)/phi(s) on (0, lam) and (lam, 1) and measure how much it ever increases.

    Violations are relative to the largest sampled magnitude on the interval.
    """
    if grid_n < 100:
        raise ValueError("grid_n must be at least 100")
    gap = 1e-6
    viol = {}
    sign_ok = True
    for name, lo, hi in (("below", gap, sys.lam - gap), ("above", sys.lam + gap, 1.0 - gap)):
        s = np.linspace(lo, hi, grid_n)
        r = sys.dF(s) / sys.phi_ratio(s)
        rise = np.diff(r)
        viol[name] = float(max(rise.max(), 0.0) / max(np.abs(r).max(), 1.0))
        sign_ok &= bool(np.all((s - sys.lam) * sys.phi_ratio(s) > 0))
    return LienardReport(viol, sign_ok, grid_n, tol)


# ---------------------------------------------------------------------------
# orbit tracing


@dataclass(frozen=True)
class PlaneFlow:
    """A planar field, possibly glued across the tangency curve.

    ``outside`` acts where m > m*(s) and ``inside`` where m < m*(s). ``sign``
    of -1 traces the reversed field.
    """

    outside: PlanarSystem
    inside: PlanarSystem
    kappa: float
    tau: float
    sign: float = 1.0

    @classmethod
    def single(cls, sys: PlanarSystem, kappa: float = 0.0, tau: float = 0.0) -> "PlaneFlow":
        return cls(sys, sys, kappa, tau)

    @property
    def glued(self) -> bool:
        return (self.outside.a, self.outside.lam) != (self.inside.a, self.inside.lam)

    def reversed(self) -> "PlaneFlow":
        return replace(self, sign=-self.sign)

    def system(self, side: int) -> PlanarSystem:
        return self.outside if side > 0 else self.inside

    def mstar(self, s):
        return self.kappa * (1.0 - s) * (s - self.tau)

    def g(self, m, s):
        return m - self.mstar(s)

    def grad_g(self, s) -> np.ndarray:
        return np.array([1.0, -self.kappa * (1.0 + self.tau - 2.0 * s)])

    def velocity(self, side: int, pt) -> np.ndarray:
        return self.sign * self.system(side).field(pt)

    def args(self, side: int, s_level: float = -1.0) -> np.ndarray:
        sys = self.system(side)
        return np.array([sys.a, sys.lam, self.kappa, self.tau, s_level, float(sys.scaled), self.sign])

    def entry_side(self, pt) -> int:
        """Side an orbit through ``pt`` moves into; 0 when it slides along the curve.

        Off the curve this is just the side of the point.
        """
        m, s = pt
        if not self.glued:
            return 1
        gv = self.g(m, s)
        if abs(gv) > SNAP * max(1.0, abs(m)):
            return 1 if gv > 0 else -1
        n = self.grad_g(s)
        out_rate = n @ self.velocity(1, pt)
        in_rate = n @ self.velocity(-1, pt)
        if out_rate > 0:
            # both fields leaving the curve (repelling arc) is resolved outward
            return 1
        if in_rate < 0:
            return -1
        return 0

    def rate(self, side: int, pt) -> float:
        """Rate of change of m - m*(s) under the field of ``side``."""
        return float(self.grad_g(pt[1]) @ self.velocity(side, pt))


@dataclass(frozen=True)
class LevelSection:
    """The line s = level, crossed with the sign of s' equal to ``direction``."""

    level: float
    direction: int = 1

    def flipped(self) -> "LevelSection":
        return replace(self, direction=-self.direction)

    def point(self, x: float) -> np.ndarray:
        return np.array([x, self.level])

    def coord(self, pt) -> float:
        return float(pt[0])


@dataclass(frozen=True)
class CurveSection:
    """The arc of the tangency curve with s in (s_lo, s_hi); the coordinate is s."""

    s_lo: float
    s_hi: float = 1.0
    kappa: float = 0.0
    tau: float = 0.0

    def flipped(self) -> "CurveSection":
        return self

    def point(self, x: float) -> np.ndarray:
        return np.array([self.kappa * (1.0 - x) * (x - self.tau), x])

    def coord(self, pt) -> float:
        return float(pt[1])

    def contains(self, s: float) -> bool:
        return self.s_lo < s < self.s_hi


def to_ms(y: np.ndarray) -> np.ndarray:
    """(log m, s) integration states to (m, s)."""
    out = np.array(y, dtype=float)
    out[..., 0] = np.exp(out[..., 0])
    return out


@dataclass(frozen=True)
class Crossing:
    t: float
    m: float
    s: float
    direction: int  # +1 when leaving the inside region
    tangential: bool = False


@dataclass
class Orbit:
    """Piecewise-traced orbit. Times are cumulative across pieces."""

    pieces: list[Trajectory] = field(default_factory=list)
    offsets: list[float] = field(default_factory=list)
    sides: list[int] = field(default_factory=list)
    crossings: list[Crossing] = field(default_factory=list)
    hits: list[np.ndarray] = field(default_factory=list)
    hit_times: list[float] = field(default_factory=list)
    reason: str = ""

    @property
    def t_final(self) -> float:
        if not self.pieces:
            return 0.0
        return self.offsets[-1] + self.pieces[-1].t_final - self.pieces[-1].t[0]

    @property
    def y_final(self) -> np.ndarray:
        return to_ms(self.pieces[-1].y_final)

    def polyline(self, max_spacing: float = 1e-3, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
        """Times and points resolving the orbit to ``tol`` in (m, s).

        Each step is refined until sub-chords are below ``max_spacing`` and
        log m moves by at most 0.25 between samples; a single step in log m
        can turn the corner at the origin, which a straight chord would cut.
        The result is thinned by Douglas-Peucker at ``tol``.
        """
        ts, ys = [], []
        for tr, off in zip(self.pieces, self.offsets):
            if len(tr) == 0:
                continue
            ms = to_ms(tr.y)
            chord = np.hypot(*np.diff(ms, axis=0).T)
            dlog = np.abs(np.diff(tr.y[:, 0]))
            need = np.clip(np.ceil(np.maximum(chord / max_spacing, dlog / 0.25)), 1, 2000).astype(int)
            parts_t, parts_y = [tr.t[:1]], [tr.y[:1]]
            for n in np.unique(need):
                t, y = tr.sample(int(n), steps=np.flatnonzero(need == n))
                parts_t.append(t)
                parts_y.append(y)
            t, y = np.concatenate(parts_t), np.concatenate(parts_y)
            order = np.argsort(t * np.sign(tr.h[0]), kind="stable")
            ts.append(t[order] - tr.t[0] + off)
            ys.append(to_ms(y[order]))
        if not ts:
            return np.zeros(0), np.zeros((0, 2))
        t, y = np.concatenate(ts), np.concatenate(ys)
        keep = _simplify(y, tol)
        return t[keep], y[keep]


def _simplify(pts: np.ndarray, tol: float) -> np.ndarray:
    """Indices kept by Douglas-Peucker simplification of a polyline."""
    if len(pts) < 3:
        return np.arange(len(pts))
    simple = shapely.simplify(shapely.linestrings(pts), tol, preserve_topology=False)
    coords = shapely.get_coordinates(simple)
    # simplified vertices are input points; repeated coordinates are all kept
    row = np.dtype((np.void, 16))
    mask = np.isin(np.ascontiguousarray(pts).view(row).ravel(), np.ascontiguousarray(coords).view(row).ravel())
    mask[[0, -1]] = True
    return np.flatnonzero(mask)


def trace(
    flow: PlaneFlow,
    y0,
    t_max: float,
    *,
    section: LevelSection | CurveSection | None = None,
    n_hits: int = 1,
    stop_crossing: Callable[[Crossing, "Orbit"], bool] | None = None,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_pieces: int = 100_000,
    record: bool = True,
    initial_side: int | None = None,
) -> Orbit:
    """Trace an orbit of ``flow`` for at most ``t_max`` time units.

    The run ends after ``n_hits`` section hits, when ``stop_crossing(c, orbit)``
    returns true for a curve crossing ``c``, when the orbit starts sliding along
    the curve, or at ``t_max``. ``Orbit.reason`` says which.
    """
    y0 = np.asarray(y0, dtype=float)
    if not y0[0] > 0:
        raise ValueError("trace needs m > 0")
    side = initial_side if initial_side is not None else flow.entry_side(y0)
    y = np.array([np.log(y0[0]), y0[1]])
    orbit = Orbit()
    if side == 0:
        orbit.reason = "sliding"
        return orbit
    level = section.level if isinstance(section, LevelSection) else -1.0
    sec_dir = section.direction if isinstance(section, LevelSection) else 0
    t = 0.0
    while len(orbit.pieces) < max_pieces:
        remaining = t_max - t
        if remaining <= 0:
            orbit.reason = "time"
            return orbit
        # after crossing into one side the next crossing must go the other way
        curve_dir = -side if flow.glued else 0
        need = n_hits - len(orbit.hits)
        terminal = [1 if flow.glued else 0, need if isinstance(section, LevelSection) else 0]
        try:
            tr = integrate(
                plane_rhs, y, (0.0, remaining), rtol=rtol, atol=atol, args=flow.args(side, level),
                events=plane_events, vector_events=True, directions=[curve_dir, sec_dir],
                terminal=terminal, record=record,
            )
        except (StepSizeUnderflow, MaxStepsExceeded) as exc:
            orbit.reason = f"failure: {exc}"
            return orbit
        orbit.pieces.append(tr)
        orbit.offsets.append(t)
        orbit.sides.append(side)
        crossed = None
        for ev in tr.events:
            if ev.event_id == 1 and not ev.tangential:
                orbit.hits.append(to_ms(ev.state))
                orbit.hit_times.append(t + ev.t)
            elif ev.event_id == 0:
                c = Crossing(t + ev.t, float(np.exp(ev.state[0])), float(ev.state[1]), ev.direction,
                             ev.tangential)
                last_state = ev.state
                if not flow.glued:
                    orbit.crossings.append(c)
                elif not ev.tangential:
                    crossed = c
        t += tr.t_final
        if len(orbit.hits) >= n_hits and isinstance(section, LevelSection):
            orbit.reason = "section"
            return orbit
        if crossed is None:
            orbit.reason = "time" if t >= t_max * (1 - 1e-14) else "stopped"
            return orbit
        orbit.crossings.append(crossed)
        if isinstance(section, CurveSection) and section.contains(crossed.s):
            orbit.hits.append(np.array([crossed.m, crossed.s]))
            orbit.hit_times.append(crossed.t)
            if len(orbit.hits) >= n_hits:
                orbit.reason = "section"
                return orbit
        if stop_crossing is not None and stop_crossing(crossed, orbit):
            orbit.reason = "crossing"
            return orbit
        y = last_state.copy()
        side = crossed.direction
        if side * flow.rate(side, to_ms(y)) <= 0:
            # the field on the far side pushes straight back: a sliding arc
            orbit.reason = "sliding"
            return orbit
    orbit.reason = "pieces"
    return orbit


def return_map(flow: PlaneFlow, section, x: float, t_max: float = 5e3, **kw) -> tuple[float, Orbit]:
    """Section coordinate of the first return of the orbit through ``section.point(x)``."""
    orbit = trace(flow, section.point(x), t_max, section=section, n_hits=1, **kw)
    if orbit.reason != "section":
        raise CycleNotFound(f"no return to the section from x={x:.9g} ({orbit.reason})")
    return section.coord(orbit.hits[0]), orbit


@dataclass
class LimitCycle:
    period: float
    anchor: np.ndarray
    t: np.ndarray
    polyline: np.ndarray
    stability: str
    multiplier: float
    residual: float
    orbit: Orbit = field(repr=False, default=None)
    flow: PlaneFlow = field(repr=False, default=None)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "m", "s"])
            for t, (m, s) in zip(self.t, self.polyline):
                w.writerow([repr(float(t)), repr(float(m)), repr(float(s))])

    def summary(self) -> dict:
        return {
            "period": self.period,
            "anchor": [float(v) for v in self.anchor],
            "stability": self.stability,
            "multiplier": self.multiplier,
            "residual": self.residual,
            "crossings": cycle_tangency_crossings(self),
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def _default_section(flow: PlaneFlow):
    if flow.glued:
        lam = max(flow.outside.lam, flow.inside.lam)
        return CurveSection(lam, 1.0, flow.kappa, flow.tau)
    return LevelSection(flow.outside.lam, 1)


def _fixed_point(P: Callable[[float], float], x0: float, lo: float, hi: float,
                 cauchy: float, max_iter: int) -> float:
    """Fixed point of a 1-D return map: plain iteration, then secant polish."""
    x = x0
    px = P(x)
    hist = [x, px]
    for _ in range(max_iter):
        if abs(px - x) < 1e-5 * abs(x):
            break
        x, px = px, P(px)
        hist.append(px)
        if not (lo < px < hi):
            raise CycleNotFound(f"iterates left the section interval ({px:.6g})")
        # speed up slow geometric convergence with Aitken's delta-squared
        if len(hist) >= 3:
            a, b, c = hist[-3:]
            den = c - 2 * b + a
            if den != 0 and abs(c - b) < abs(b - a):
                z = c - (c - b) ** 2 / den
                if lo < z < hi:
                    x, px = z, P(z)
                    hist = [x, px]
    else:
        raise NonConvergence("return-map iterates did not settle")
    # secant on r(x) = P(x) - x
    x1 = px
    r0 = px - x
    r1 = P(x1) - x1
    for _ in range(60):
        if abs(r1) < cauchy:
            return x1
        if r1 == r0:
            break
        x0_, x1 = x1, x1 - r1 * (x1 - x) / (r1 - r0)
        x, r0 = x0_, r1
        if not (lo < x1 < hi):
            raise CycleNotFound("return map has no fixed point inside the section interval")
        r1 = P(x1) - x1
    if abs(r1) < cauchy:
        return x1
    raise NonConvergence(f"return-map residual stuck at {abs(r1):.3g}")


def find_limit_cycle(
    target: PlanarSystem | PlaneFlow,
    mode: str = "stable",
    *,
    section=None,
    start: float | None = None,
    cauchy: float = 1e-9,
    max_iter: int = 500,
    t_max: float = 5e3,
    rtol: float = RTOL,
    atol: float = ATOL,
    stop_crossing: Callable[[Crossing, "Orbit"], bool] | None = None,
) -> LimitCycle:
    """Locate a stable or unstable cycle as a fixed point of a section return map.

    Unstable cycles are found as stable cycles of the reversed field. For a
    planar system the section is s = lam crossed upward and the default start
    is halfway between the equilibrium and the m-axis; for a glued flow it is
    the upper arc of the tangency curve.
    """
    if mode not in ("stable", "unstable"):
        raise ValueError("mode must be 'stable' or 'unstable'")
    flow = PlaneFlow.single(target) if isinstance(target, PlanarSystem) else target
    sec = section or _default_section(flow)
    if isinstance(sec, LevelSection):
        m_eq = flow.outside.equilibrium[0] if not flow.glued else np.inf
        # forward s' > 0 on s = lam left of the equilibrium, s' < 0 right of it
        left = sec.direction * flow.sign > 0
        lo, hi = (0.0, m_eq) if left else (m_eq, np.inf)
        x0 = start if start is not None else (0.5 * m_eq if left else 2.0 * m_eq)
    else:
        lo, hi = sec.s_lo, sec.s_hi
        x0 = start if start is not None else 0.5 * (lo + hi)
    traced = flow if mode == "stable" else flow.reversed()
    tsec = sec if mode == "stable" else sec.flipped()
    kw = dict(rtol=rtol, atol=atol, stop_crossing=stop_crossing)

    def P(x):
        return return_map(traced, tsec, x, t_max, **kw)[0]

    xs = _fixed_point(P, x0, lo, hi, cauchy, max_iter)
    if isinstance(sec, LevelSection) and abs(xs - m_eq) < 1e-6 * max(1.0, m_eq):
        raise CycleNotFound("return map converges to the equilibrium")
    d = min(1e-6 * max(1.0, abs(xs)), 1e-3 * (xs - lo), 1e-3 * (hi - xs))
    mult = (P(xs + d) - P(xs - d)) / (2 * d)
    # multiplier of the cycle in forward time
    mult_fwd = mult if mode == "stable" else 1.0 / mult
    x_ret, orbit = return_map(traced, tsec, xs, t_max, **kw)
    t, poly = orbit.polyline()
    if mode == "unstable":
        t = orbit.t_final - t[::-1]
        poly = poly[::-1]
    stability = "stable" if abs(mult_fwd) < 1 else "unstable"
    return LimitCycle(
        period=orbit.hit_times[0], anchor=tsec.point(xs), t=t, polyline=poly,
        stability=stability, multiplier=float(mult_fwd), residual=abs(x_ret - xs),
        orbit=orbit, flow=traced,
    )


def cycle_tangency_crossings(cycle: LimitCycle, mstar: Callable | None = None) -> list[float]:
    """s-values where one period of the cycle meets the tangency curve, largest first.

    Without ``mstar`` the curve of the cycle's flow is used and the crossings
    are the event roots found during integration. With a custom ``mstar`` the
    roots of m - mstar(s) are bracketed on the polyline and refined on the
    dense output.
    """
    orbit = cycle.orbit
    if mstar is None:
        return sorted((c.s for c in orbit.crossings), reverse=True)
    out = []
    for tr in orbit.pieces:
        if len(tr) == 0:
            continue
        tt, yy = tr.sample(8)
        yy = to_ms(yy)
        g = yy[:, 0] - mstar(yy[:, 1])
        idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
        for i in idx:
            root = brentq(lambda u: (lambda z: np.exp(z[0]) - mstar(z[1]))(tr(u)), tt[i], tt[i + 1],
                          xtol=1e-13)
            out.append(float(tr(root)[1]))
    return sorted(out, reverse=True)
