"""Glued inner/outer systems and the Poincare annulus built from them.

The inner system uses comparison field 1 outside the tangency curve and
comparison field 2 inside it; the outer system does the reverse. Segment A is
the arc of the curve between the comparison equilibria, s in [lambda2, lambda1].
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import Polygon
from shapely.validation import make_valid

from .model import Params, RationalFamily, State, derived, eval_field, scalar_fields
from .planar import (
    CurveSection,
    CycleNotFound,
    LevelSection,
    LimitCycle,
    NonConvergence,
    Orbit,
    PlanarSystem,
    PlaneFlow,
    cycle_tangency_crossings,
    find_limit_cycle,
    to_ms,
    trace,
)

__all__ = [
    "GluedSystem",
    "SegmentA",
    "AnnulusGeometry",
    "Classification",
    "OuterBoundary",
    "InnerBoundary",
    "NotCorrectEvidence",
    "BoundSigns",
    "NoCrossing",
    "bound_signs",
    "glued_field",
    "build_outer_boundary",
    "max_outward_flux",
    "build_inner_boundary",
    "inner_cycles",
    "classify",
    "build_annulus",
]

SEPARATRIX_OFFSET = 1e-7
PROXIMITY_TOL = 1e-4


class NoCrossing(RuntimeError):
    """The separatrix did not return to the tangency curve."""


# ---------------------------------------------------------------------------
# scalar products with the normal fields


@dataclass(frozen=True)
class BoundSigns:
    raw: tuple[float, float]
    closed: tuple[float, float]


def bound_signs(p: Params, pt) -> BoundSigns:
    """<n_i, F> from the normal fields (-H_i, -H_i, m phi_i), and their closed forms."""
    x1, x2, s = pt
    fam = RationalFamily(p)
    sf = scalar_fields(p)
    m = x1 + x2
    F = eval_field(p, State(x1, x2, s), fam)
    raw = []
    for i in (1, 2):
        hi = sf.H_i(i, m, s)
        raw.append(float(np.dot([-hi, -hi, m * fam.phi(i, s)], F)))
    l = sf.l(m, s)
    return BoundSigns((raw[0], raw[1]), (float(-l * x2), float(l * x1)))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GluedSystem:
    kind: str
    params: Params

    def __post_init__(self):
        if self.kind not in ("inner", "outer"):
            raise ValueError("kind must be 'inner' or 'outer'")

    @property
    def flow(self) -> PlaneFlow:
        d = derived(self.params)
        c1 = PlanarSystem.comparison(self.params, 1)
        c2 = PlanarSystem.comparison(self.params, 2)
        if self.kind == "inner":
            return PlaneFlow(c1, c2, d.kappa, d.tau)
        return PlaneFlow(c2, c1, d.kappa, d.tau)

    def region(self, m, s):
        """+1 outside the tangency curve, -1 inside, 0 on it."""
        return scalar_fields(self.params).region(m, s)

    def comparison_index(self, m, s) -> int:
        outside = self.region(m, s) > 0
        if self.kind == "inner":
            return 1 if outside else 2
        return 2 if outside else 1


def glued_field(g: GluedSystem, pt) -> np.ndarray:
    """Field of the glued system; on the curve the inside field is returned."""
    m, s = pt
    if m < 0 or s < 0:
        raise ValueError("m and s must be nonnegative")
    side = 1 if g.region(m, s) > 0 else -1
    return g.flow.system(side).field(pt)


@dataclass(frozen=True)
class SegmentA:
    o2: tuple[float, float]
    o1: tuple[float, float]
    kappa: float
    tau: float
    tol: float = PROXIMITY_TOL

    @classmethod
    def of(cls, p: Params, tol: float = PROXIMITY_TOL) -> "SegmentA":
        sf = scalar_fields(p)
        d = sf.derived
        return cls((float(sf.m_star(p.lambda2)), p.lambda2), (float(sf.m_star(p.lambda1)), p.lambda1),
                   d.kappa, d.tau, tol)

    def points(self, n: int = 20001) -> np.ndarray:
        s = np.linspace(self.o2[1], self.o1[1], n)
        return np.column_stack([self.kappa * (1 - s) * (s - self.tau), s])

    def contains_s(self, s: float) -> bool:
        return self.o2[1] <= s <= self.o1[1]

    def distance(self, pts) -> np.ndarray:
        d, _ = cKDTree(self.points()).query(np.atleast_2d(pts))
        return d

    def orbit_distance(self, orbit: Orbit) -> float:
        """Smallest distance from an orbit to the segment.

        Steps that come within 5e-3 are resampled finely, so the result is
        accurate to about the arc sampling (1e-5).
        """
        tree = cKDTree(self.points())
        best = np.inf
        for tr in orbit.pieces:
            if len(tr) == 0:
                continue
            _, y = tr.sample(4)
            d, _ = tree.query(to_ms(y))
            best = min(best, float(d.min()))
            per_step = np.minimum.reduceat(d[1:], np.arange(0, len(d) - 1, 4))
            near = np.nonzero(per_step < 5e-3)[0]
            if len(near):
                _, yf = tr.sample(256, steps=near)
                best = min(best, float(tree.query(to_ms(yf))[0].min()))
        return best


# ---------------------------------------------------------------------------
# boundaries


@dataclass
class OuterBoundary:
    polyline: np.ndarray
    saddle: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    l1_below_segment: bool
    orbit: Orbit = field(repr=False)
    kind: str = "outer"


@dataclass
class NotCorrectEvidence:
    reason: str
    min_distance: float
    contact: np.ndarray | None = None
    orbit: Orbit | None = field(repr=False, default=None)


@dataclass
class InnerBoundary:
    cycle: LimitCycle
    M: np.ndarray
    min_distance: float
    orbit: Orbit = field(repr=False)


def _unstable_seed(p: Params, flow: PlaneFlow) -> np.ndarray:
    """Point just off the saddle (m, s) = (0, 1) on its unstable manifold.

    Both comparison fields have a saddle there with unstable eigenvector
    (1, -1/(2 + a - lambda)); the one whose displaced point lies in the
    region where that field acts is used.
    """
    for side in (1, -1):
        sys = flow.system(side)
        v = np.array([1.0, -1.0 / (2.0 + sys.a - sys.lam)])
        y0 = np.array([0.0, 1.0]) + SEPARATRIX_OFFSET * v
        if np.sign(flow.g(*y0)) == side:
            return y0
    raise NoCrossing("no comparison field has an unstable direction into its own region at (0, 1)")


def build_outer_boundary(p: Params, *, t_max: float = 5e3, rtol: float = 1e-10,
                         atol: float = 1e-12, kind: str = "outer") -> OuterBoundary:
    """Separatrix of the saddle (0, 1) under the outer system, closed along the curve.

    L1 is the first tangency-curve crossing after the orbit passes s = lambda1
    downward and L2 the next one. The boundary is the orbit from the saddle
    to L2 followed by the curve from L2 back to the saddle, where m*(1) = 0.
    ``kind="inner"`` runs the same construction on the inner system, which is
    only useful as a negative control.
    """
    g = GluedSystem(kind, p)
    flow = g.flow
    y0 = _unstable_seed(p, flow)

    def done(c, orbit):
        if not orbit.hits:
            return False
        return sum(1 for x in orbit.crossings if x.t > orbit.hit_times[0]) >= 2

    orbit = trace(flow, y0, t_max, section=LevelSection(p.lambda1, -1), n_hits=10**9,
                  stop_crossing=done, rtol=rtol, atol=atol)
    if orbit.reason != "crossing":
        raise NoCrossing(f"separatrix did not reach L2 ({orbit.reason})")
    after = [c for c in orbit.crossings if c.t > orbit.hit_times[0]]
    L1, L2 = after[0], after[1]
    _, pts = orbit.polyline()
    s_arc = np.linspace(L2.s, 1.0, max(int((1.0 - L2.s) / 1e-3), 2))
    arc = np.column_stack([flow.mstar(s_arc), s_arc])
    poly = np.vstack([[[0.0, 1.0]], pts, arc[1:]])
    return OuterBoundary(
        polyline=poly, saddle=np.array([0.0, 1.0]),
        L1=np.array([L1.m, L1.s]), L2=np.array([L2.m, L2.s]),
        l1_below_segment=L1.s < p.lambda2, orbit=orbit, kind=kind,
    )


def max_outward_flux(p: Params, boundary: OuterBoundary, xis=(0.0, 0.25, 0.5, 0.75, 1.0),
                     n_per_step: int = 2) -> float:
    """Largest outward normal component of the full field along the boundary orbit.

    Points of the orbit arc are lifted to each fraction in ``xis``; the field
    of system (m, xi, s) projected to (m, s) is dotted with the unit normal on
    the left of the arc, which points out of the region because the flow turns
    clockwise. A value at or below zero means no lifted orbit can leave.
    """
    fam = RationalFamily(p)
    flow = GluedSystem(boundary.kind, p).flow
    xi = np.asarray(xis, dtype=float)[None, :]
    worst = -np.inf
    for tr, side in zip(boundary.orbit.pieces, boundary.orbit.sides):
        if len(tr) == 0:
            continue
        _, y = tr.sample(n_per_step)
        m, s = to_ms(y).T
        sys = flow.system(side)
        v = np.column_stack([(s - sys.lam) / (s + sys.a) * m, s * (1 - s) - s / (s + sys.a) * m])
        norm = np.hypot(v[:, 0], v[:, 1])
        ok = norm > 0
        n = np.column_stack([-v[:, 1], v[:, 0]])[ok] / norm[ok, None]
        m, s = m[ok, None], s[ok, None]
        dm = m * (xi * fam.phi(1, s) + (1 - xi) * fam.phi(2, s))
        ds = fam.h(s) - m * (xi * fam.psi(1, s) + (1 - xi) * fam.psi(2, s))
        flux = dm * n[:, :1] + ds * n[:, 1:]
        if flux.size:
            worst = max(worst, float(flux.max()))
    return worst


def _start_point_M(p: Params) -> np.ndarray:
    """Top tangency-curve crossing of the comparison-2 cycle.

    Orbits of comparison system 2 spiralling out from its equilibrium cross
    the curve ever higher and accumulate on this point.
    """
    d = derived(p)
    sys2 = PlanarSystem.comparison(p, 2)
    # the upward crossing of s = lambda2 lies almost on the s-axis; the
    # downward one is far better conditioned
    cyc = find_limit_cycle(PlaneFlow.single(sys2, d.kappa, d.tau), "stable",
                           section=LevelSection(p.lambda2, -1))
    # near the saddle (0, 1) the cycle crosses with a tiny absolute slope,
    # so grazing-flagged roots count too
    crossings = [(c.s, c.m) for c in cyc.orbit.crossings]
    if not crossings:
        raise CycleNotFound("comparison-2 cycle does not meet the tangency curve")
    s, m = max(crossings)
    return np.array([m, s])


def build_inner_boundary(p: Params, *, tol: float = PROXIMITY_TOL, max_turns: int = 500,
                         t_max: float = 2e4) -> InnerBoundary | NotCorrectEvidence:
    """Follow the inner system from M until it settles on a cycle or touches segment A."""
    seg = SegmentA.of(p, tol)
    flow = GluedSystem("inner", p).flow
    try:
        M = _start_point_M(p)
    except (CycleNotFound, NonConvergence) as exc:
        return NotCorrectEvidence(f"no start point: {exc}", np.nan)

    state = {"contact": None, "settled": False}

    def stop(c, orbit):
        if seg.contains_s(c.s):
            state["contact"] = np.array([c.m, c.s])
            return True
        h = orbit.hits
        if len(h) >= 3 and abs(h[-1][1] - h[-2][1]) < 1e-7:
            state["settled"] = True
            return True
        return False

    sec = CurveSection(p.lambda1, 1.0, flow.kappa, flow.tau)
    orbit = trace(flow, M, t_max, section=sec, n_hits=max_turns, stop_crossing=stop,
                  initial_side=flow.entry_side(M))
    if state["contact"] is not None or orbit.reason == "sliding":
        contact = state["contact"] if state["contact"] is not None else orbit.y_final
        return NotCorrectEvidence("orbit of M reaches segment A", 0.0, contact, orbit)
    dist = seg.orbit_distance(orbit)
    if dist < tol:
        return NotCorrectEvidence("orbit of M comes within tolerance of segment A", dist, None, orbit)
    if not (state["settled"] or orbit.reason == "section"):
        raise NonConvergence(f"orbit of M neither settled nor reached segment A ({orbit.reason})")
    try:
        cyc = find_limit_cycle(flow, "stable", section=sec, start=float(orbit.hits[-1][1]))
    except (CycleNotFound, NonConvergence) as exc:
        return NotCorrectEvidence(f"inner cycle not located: {exc}", dist, None, orbit)
    dist = min(dist, seg.orbit_distance(cyc.orbit))
    if dist < tol:
        return NotCorrectEvidence("inner cycle within tolerance of segment A", dist, None, orbit)
    return InnerBoundary(cyc, M, dist, orbit)


def inner_cycles(p: Params) -> tuple[LimitCycle, LimitCycle]:
    """Stable and unstable cycles of the inner system.

    The unstable search starts halfway between the top of segment A and the
    stable cycle's upper crossing.
    """
    flow = GluedSystem("inner", p).flow
    sec = CurveSection(p.lambda1, 1.0, flow.kappa, flow.tau)
    stable = find_limit_cycle(flow, "stable", section=sec, start=0.5 * (p.lambda1 + 1.0))
    top = cycle_tangency_crossings(stable)[0]
    unstable = find_limit_cycle(flow, "unstable", section=sec, start=0.5 * (p.lambda1 + top))
    return stable, unstable


# ---------------------------------------------------------------------------


@dataclass
class AnnulusGeometry:
    params: Params
    outer: np.ndarray
    inner: np.ndarray | None
    L1: np.ndarray
    L2: np.ndarray
    saddle: np.ndarray
    segment: SegmentA
    M: np.ndarray | None = None
    _region: object = field(default=None, repr=False)

    def region(self):
        """The (m, s) region between the boundaries as a shapely geometry.

        The separatrix returns to L2 alongside its own first arc; the thin
        sliver this creates is dropped by keeping the largest polygon.
        """
        if self._region is None:
            geom = make_valid(Polygon(self.outer))
            polys = [g for g in getattr(geom, "geoms", [geom]) if isinstance(g, Polygon)]
            reg = max(polys, key=lambda g: g.area)
            if self.inner is not None:
                reg = reg.difference(make_valid(Polygon(self.inner)))
            self._region = reg
        return self._region

    def contains(self, m, s, tol: float = 0.0) -> np.ndarray:
        reg = self.region()
        if tol > 0:
            reg = reg.buffer(tol)
        return shapely.contains_xy(reg, np.asarray(m, dtype=float), np.asarray(s, dtype=float))

    def section_intervals(self, eps: float) -> list[tuple[float, float]]:
        """m-intervals where the line s = eps cuts the annulus, left to right."""
        from shapely.geometry import LineString

        m_hi = float(np.max(self.outer[:, 0])) + 1.0
        cut = self.region().intersection(LineString([(-1.0, eps), (m_hi, eps)]))
        parts = [g for g in getattr(cut, "geoms", [cut]) if g.length > 0]
        return sorted((g.bounds[0], g.bounds[2]) for g in parts)

    def to_csv(self, directory: str | Path) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, poly in (("outer_boundary", self.outer), ("inner_boundary", self.inner)):
            if poly is None:
                continue
            path = out / f"{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["m", "s"])
                w.writerows((repr(float(a)), repr(float(b))) for a, b in poly)
            written.append(path)
        path = out / "markers.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "m", "s"])
            marks = {"O1": self.segment.o1, "O2": self.segment.o2, "L1": self.L1, "L2": self.L2,
                     "saddle": self.saddle}
            if self.M is not None:
                marks["M"] = self.M
            for k, (a, b) in marks.items():
                w.writerow([k, repr(float(a)), repr(float(b))])
        written.append(path)
        return written


@dataclass
class Classification:
    verdict: str
    evidence: dict
    geometry: AnnulusGeometry | None = field(default=None, repr=False)
    inner: InnerBoundary | NotCorrectEvidence | None = field(default=None, repr=False)

    @property
    def correct(self) -> bool:
        return self.verdict == "CorrectlyDefined"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "evidence": self.evidence}


def classify(p: Params, *, tol: float = PROXIMITY_TOL) -> Classification:
    """CorrectlyDefined when both boundaries can be built and the inner one avoids segment A."""
    seg = SegmentA.of(p, tol)
    try:
        outer = build_outer_boundary(p)
    except (NoCrossing, NonConvergence, CycleNotFound) as exc:
        return Classification("NotCorrect", {"tag": "outer", "detail": str(exc)})
    try:
        inner = build_inner_boundary(p, tol=tol)
    except NonConvergence as exc:
        return Classification("NotCorrect", {"tag": "inner", "detail": str(exc)})
    geom_kw = dict(params=p, outer=outer.polyline, L1=outer.L1, L2=outer.L2, saddle=outer.saddle,
                   segment=seg)
    if isinstance(inner, NotCorrectEvidence):
        ev = {"tag": "segment", "detail": inner.reason, "min_distance": inner.min_distance}
        if inner.contact is not None:
            ev["contact"] = [float(v) for v in inner.contact]
        geom = AnnulusGeometry(inner=None, **geom_kw)
        return Classification("NotCorrect", ev, geom, inner)
    cyc = inner.cycle
    ev = {
        "tag": "cycle",
        "min_distance": inner.min_distance,
        "period": cyc.period,
        "multiplier": cyc.multiplier,
        "crossings": cycle_tangency_crossings(cyc),
        "L1": [float(v) for v in outer.L1],
        "L2": [float(v) for v in outer.L2],
        "l1_below_segment": outer.l1_below_segment,
    }
    geom = AnnulusGeometry(inner=cyc.polyline, M=inner.M, **geom_kw)
    return Classification("CorrectlyDefined", ev, geom, inner)


def build_annulus(p: Params, tol: float = PROXIMITY_TOL) -> AnnulusGeometry:
    c = classify(p, tol=tol)
    if not c.correct:
        raise ValueError(f"annulus is not correctly defined: {c.evidence}")
    return c.geometry
