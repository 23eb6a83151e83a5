"""Return map on the plane s = eps, attractor sampling and the lambda2 sweep.

The full system is integrated in (log m, w, log s) with w the log-odds of
the fraction xi. Orbits in the annulus pass close to the saddles at s = 0
and s = 1 on the m = 0 axis, where m and s drop below 1e-20, and xi may
decay by many orders of magnitude per return; in these coordinates the
passages are plain drifts and w' = phi1 - phi2 does not depend on xi at all.
The planes xi = 0 and xi = 1 are integrated as their own invariant systems.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .annulus import AnnulusGeometry, classify
from .integrator import IntegrationError, integrate, rhs
from .model import BASE_PARAMS, NonPositiveResult, Params, derived, iso_tangency_a

__all__ = [
    "SectionConfig",
    "ModelMapParams",
    "BifurcationRecord",
    "EscapedAnnulus",
    "NoReturn",
    "InvalidSection",
    "ModelMapPole",
    "section_map",
    "attractor_sample",
    "bifurcation_sweep",
    "count_clusters",
    "invariance_check",
    "InvarianceReport",
    "detect_period",
    "model_map",
    "model_map_orbit",
    "model_map_sweep",
    "write_sweep_csv",
    "read_sweep_csv",
]

RTOL = 1e-10
# log s hovers near 0 by 1e-20 at the saddle s = 1, so it is held to relative accuracy
ATOL = (1e-12, 1e-12, 1e-30)
CLUSTER_TOL = 1e-4


class EscapedAnnulus(RuntimeError):
    def __init__(self, message: str, location):
        super().__init__(message)
        self.location = location


class NoReturn(RuntimeError):
    pass


class InvalidSection(ValueError):
    pass


class ModelMapPole(ZeroDivisionError):
    pass


@rhs
def log_transformed_rhs(t, y, args):
    # state (log m, w, log s) with w = log(xi / (1 - xi));
    # args = [a1, a2, lambda1, lambda2, log eps, sign, edge]
    # edge = +1 or -1 pins xi to 1 or 0 (the invariant coordinate planes)
    a1, a2, l1, l2 = args[0], args[1], args[2], args[3]
    m, s = math.exp(y[0]), math.exp(y[2])
    if args[6] > 0:
        xi, eta = 1.0, 0.0
    elif args[6] < 0:
        xi, eta = 0.0, 1.0
    elif y[1] < 0:
        e = math.exp(y[1])
        xi, eta = e / (1.0 + e), 1.0 / (1.0 + e)
    else:
        e = math.exp(-y[1])
        xi, eta = 1.0 / (1.0 + e), e / (1.0 + e)
    ph1 = (s - l1) / (s + a1)
    ph2 = (s - l2) / (s + a2)
    c = args[5]
    out = np.empty(3)
    out[0] = c * (ph1 * xi + ph2 * eta)
    out[1] = c * (ph1 - ph2) if args[6] == 0.0 else 0.0
    # 1 - s via expm1 keeps the offset from the saddle at s = 1 when it is tiny
    out[2] = c * (-math.expm1(y[2]) - (xi / (s + a1) + eta / (s + a2)) * m)
    return out


@rhs
def level_event(t, y, args):
    out = np.empty(1)
    out[0] = y[2] - args[4]
    return out


@dataclass(frozen=True)
class SectionConfig:
    """Plane s = epsilon, crossed with s' of sign ``direction``, on one rectangle.

    ``m_range`` is filled in by :meth:`validated` from the annulus geometry.
    """

    epsilon: float = 0.1
    rectangle: str = "outer"
    direction: int = 0
    m_range: tuple[float, float] | None = None
    rtol: float = RTOL
    atol: tuple[float, float, float] = ATOL
    t_max: float = 5e3

    def validated(self, geom: AnnulusGeometry, p: Params) -> "SectionConfig":
        """Check the plane cuts the annulus in exactly two intervals and pick one.

        The outer rectangle is the one at larger m. Without an explicit
        direction the sign of s' at the rectangle's midpoint is used.
        """
        if not 0 < self.epsilon < 1:
            raise InvalidSection("epsilon must lie in (0, 1)")
        parts = geom.section_intervals(self.epsilon)
        if len(parts) != 2:
            raise InvalidSection(f"s = {self.epsilon:g} cuts the annulus in {len(parts)} pieces, not 2")
        if self.rectangle not in ("inner", "outer"):
            raise InvalidSection("rectangle must be 'inner' or 'outer'")
        lo, hi = parts[1] if self.rectangle == "outer" else parts[0]
        direction = self.direction
        if direction == 0:
            mid = 0.5 * (lo + hi)
            s = self.epsilon
            # both comparison fields agree in sign away from the isoclines
            sdot = s * (1 - s) - s / (s + p.a1) * mid
            direction = 1 if sdot > 0 else -1
        return SectionConfig(self.epsilon, self.rectangle, direction, (lo, hi), self.rtol, self.atol, self.t_max)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "rectangle": self.rectangle, "direction": self.direction,
                "m_range": list(self.m_range) if self.m_range else None}


def _args(p: Params, eps: float, sign: float = 1.0, edge: float = 0.0) -> np.ndarray:
    return np.array([p.a1, p.a2, p.lambda1, p.lambda2, math.log(eps), sign, edge])


def _logit(xi: float) -> tuple[float, float]:
    """(w, edge) for a fraction in [0, 1]."""
    if xi == 1.0:
        return 0.0, 1.0
    if xi == 0.0:
        return 0.0, -1.0
    if not 0.0 < xi < 1.0:
        raise ValueError("xi must lie in [0, 1]")
    return math.log(xi) - math.log1p(-xi), 0.0


def _expit(w: float, edge: float) -> float:
    if edge != 0.0:
        return 1.0 if edge > 0 else 0.0
    return 1.0 / (1.0 + math.exp(-w)) if w >= 0 else math.exp(w) / (1.0 + math.exp(w))


def _integrate_hits(p: Params, cfg: SectionConfig, m: float, xi: float, n: int, sign: float = 1.0):
    if m <= 0:
        raise ValueError("m must be positive")
    w, edge = _logit(xi)
    y0 = np.array([math.log(m), w, math.log(cfg.epsilon)])
    direction = cfg.direction * int(sign)
    try:
        tr = integrate(
            log_transformed_rhs, y0, (0.0, cfg.t_max * max(n, 1)), rtol=cfg.rtol, atol=cfg.atol,
            args=_args(p, cfg.epsilon, sign, edge), events=level_event, vector_events=True,
            directions=[direction], terminal=[n], record=False, max_steps=10**9,
        )
    except IntegrationError as exc:
        raise NoReturn(str(exc)) from exc
    hits = [e for e in tr.events if not e.tangential]
    if len(hits) < n:
        raise NoReturn(f"only {len(hits)} of {n} returns within t = {cfg.t_max * max(n, 1):g}")
    return [(math.exp(e.state[0]), _expit(e.state[1], edge), math.exp(e.state[2])) for e in hits]


def _check_inside(cfg: SectionConfig, m: float, xi: float, slack: float = 1e-6) -> None:
    if cfg.m_range is None:
        return
    lo, hi = cfg.m_range
    if not (lo - slack <= m <= hi + slack) or not (0.0 <= xi <= 1.0):
        raise EscapedAnnulus(f"return ({m:.9g}, {xi:.9g}) left the rectangle [{lo:.6g}, {hi:.6g}]", (m, xi))


def section_map(p: Params, cfg: SectionConfig, pt) -> tuple[float, float]:
    """Next same-direction crossing of s = epsilon, as (m, xi)."""
    m, xi = pt
    if cfg.direction == 0:
        raise InvalidSection("section direction unset; call SectionConfig.validated first")
    m1, xi1, _ = _integrate_hits(p, cfg, m, xi, 1)[0]
    _check_inside(cfg, m1, xi1)
    return m1, xi1


def section_map_inverse(p: Params, cfg: SectionConfig, pt) -> tuple[float, float]:
    """Previous crossing, by integrating the reversed field."""
    m0, xi0, _ = _integrate_hits(p, cfg, pt[0], pt[1], 1, sign=-1.0)[0]
    return m0, xi0


def attractor_sample(p: Params, cfg: SectionConfig, burn_in: int = 500, n: int = 200,
                     start=None) -> np.ndarray:
    """(m, xi) at n section hits after discarding burn_in of them; shape (n, 2)."""
    if n == 0:
        return np.zeros((0, 2))
    if cfg.direction == 0:
        raise InvalidSection("section direction unset; call SectionConfig.validated first")
    if start is None:
        lo, hi = cfg.m_range
        start = (0.5 * (lo + hi), 0.5)
    hits = _integrate_hits(p, cfg, start[0], start[1], burn_in + n)
    out = np.array([h[:2] for h in hits[burn_in:]])
    for m, xi in out:
        _check_inside(cfg, m, xi)
    return out


@dataclass
class InvarianceReport:
    starts: np.ndarray
    escaped: list[int]
    worst: float  # largest distance outside the region, 0 when all within 1e-9

    @property
    def passed(self) -> bool:
        return not self.escaped


def sample_region(geom: AnnulusGeometry, n: int, rng: np.random.Generator, margin: float = 1e-3) -> np.ndarray:
    """n points drawn uniformly from the annulus region shrunk by ``margin``."""
    import shapely

    reg = geom.region().buffer(-margin)
    x0, y0, x1, y1 = reg.bounds
    out = []
    while len(out) < n:
        cand = rng.uniform((x0, y0), (x1, y1), size=(4 * n, 2))
        ok = shapely.contains_xy(reg, cand[:, 0], cand[:, 1])
        out.extend(cand[ok][: n - len(out)])
    return np.array(out)


def invariance_check(p: Params, geom: AnnulusGeometry, n: int = 100, t_end: float = 500.0, *,
                     seed: int = 0, tol: float = 1e-6, rtol: float = RTOL) -> InvarianceReport:
    """Integrate the 3-D system from n random annulus points with random xi and
    test that the (m, s) projection stays in the region up to ``tol``."""
    import shapely

    rng = np.random.default_rng(seed)
    pts = sample_region(geom, n, rng)
    xis = rng.uniform(0.0, 1.0, n)
    reg = geom.region()
    # points within 1e-9 of the region are counted as inside without measuring;
    # orbits run within 1e-20 of the axes, where the boundary is only that precise
    near = reg.buffer(1e-9)
    shapely.prepare(near)
    args = _args(p, 0.5)
    escaped, worst = [], 0.0
    for k, ((m, s), xi) in enumerate(zip(pts, xis)):
        w, edge = _logit(float(xi))
        y0 = np.array([math.log(m), w, math.log(s)])
        tr = integrate(log_transformed_rhs, y0, (0.0, t_end), rtol=rtol, atol=ATOL, args=args,
                       max_steps=10**7)
        _, y = tr.sample(4)
        ms, ss = np.exp(y[:, 0]), np.exp(y[:, 2])
        bad = np.flatnonzero(~shapely.contains_xy(near, ms, ss))
        if len(bad):
            d = float(shapely.distance(reg, shapely.points(ms[bad], ss[bad])).max())
            worst = max(worst, d)
            if d > tol:
                escaped.append(k)
    return InvarianceReport(np.column_stack([pts, xis]), escaped, worst)


def count_clusters(values: Iterable[float], tol: float = CLUSTER_TOL) -> int:
    """Number of groups in the sorted values separated by gaps larger than tol."""
    v = np.sort(np.asarray(list(values), dtype=float))
    if v.size == 0:
        return 0
    return int(np.sum(np.diff(v) > tol)) + 1


def detect_period(values: Sequence[float], tol: float = 1e-6, max_period: int = 64) -> int | None:
    """Smallest p with |x[i+p] - x[i]| < tol along the whole sequence, else None."""
    x = np.asarray(values, dtype=float)
    for q in range(1, min(max_period, len(x) // 2) + 1):
        if np.all(np.abs(x[q:] - x[:-q]) < tol):
            return q
    return None


# ---------------------------------------------------------------------------
# sweep


@dataclass
class BifurcationRecord:
    nu: float
    lambda2: float
    a2: float
    verdict: str
    xi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    error: str = ""

    @property
    def clusters(self) -> int:
        return count_clusters(self.xi)

    @property
    def period(self) -> int | None:
        return detect_period(self.xi) if len(self.xi) else None


def sweep_params(base: Params, nu: float) -> Params:
    """lambda2 = 0.01 nu with a2 chosen to keep the tangency curve of ``base``."""
    d = derived(base)
    lam2 = 0.01 * nu
    return base.with_(lambda2=lam2, a2=iso_tangency_a(lam2, d.kappa, d.tau))


def _sweep_point(task) -> BifurcationRecord:
    base, nu, cfg, burn_in, n = task
    lam2 = 0.01 * nu
    try:
        p = sweep_params(base, nu)
    except NonPositiveResult as exc:
        return BifurcationRecord(nu, lam2, float("nan"), "Invalid", error=str(exc))
    try:
        c = classify(p)
    except Exception as exc:  # a failed construction is a per-point outcome
        return BifurcationRecord(nu, lam2, p.a2, "NotCorrect", error=f"{type(exc).__name__}: {exc}")
    rec = BifurcationRecord(nu, lam2, p.a2, c.verdict)
    if not c.correct:
        rec.error = str(c.evidence.get("detail", ""))
        return rec
    try:
        vcfg = cfg.validated(c.geometry, p)
        s = attractor_sample(p, vcfg, burn_in, n)
    except (InvalidSection, NoReturn, EscapedAnnulus) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.m, rec.xi = s[:, 0], s[:, 1]
    return rec


def bifurcation_sweep(
    base: Params = BASE_PARAMS,
    nu_range: tuple[float, float] = (1.0, 5.0),
    steps: int = 50,
    cfg: SectionConfig = SectionConfig(),
    *,
    burn_in: int = 500,
    n: int = 200,
    jobs: int = 1,
    done: dict[float, BifurcationRecord] | None = None,
    progress=None,
) -> list[BifurcationRecord]:
    """One record per nu on an even grid; output order follows nu.

    ``done`` maps nu to records from an earlier run that are reused as is.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    nus = np.linspace(nu_range[0], nu_range[1], steps) if steps > 1 else np.array([nu_range[0]])
    done = done or {}
    todo = [float(v) for v in nus if round(float(v), 12) not in done]
    tasks = [(base, v, cfg, burn_in, n) for v in todo]
    results: dict[float, BifurcationRecord] = {round(k, 12): r for k, r in done.items()}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for rec in ex.map(_sweep_point, tasks):
                results[round(rec.nu, 12)] = rec
                if progress:
                    progress(rec)
    else:
        for t in tasks:
            rec = _sweep_point(t)
            results[round(rec.nu, 12)] = rec
            if progress:
                progress(rec)
    return [results[round(float(v), 12)] for v in nus]


SWEEP_COLUMNS = ["nu", "lambda2", "a2", "verdict", "xi_sample", "m_sample", "error"]


def write_sweep_csv(records: Sequence[BifurcationRecord], path: str | Path, header: Sequence[str] = ()) -> None:
    """One row per sample; records without samples get a single row with empty sample fields."""
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in records:
            base = [repr(r.nu), repr(r.lambda2), repr(r.a2), r.verdict]
            if len(r.xi) == 0:
                w.writerow(base + ["", "", r.error])
            for xi, m in zip(r.xi, r.m):
                w.writerow(base + [repr(float(xi)), repr(float(m)), r.error])


def read_sweep_csv(path: str | Path) -> dict[float, BifurcationRecord]:
    recs: dict[float, BifurcationRecord] = {}
    rows: dict[float, list] = {}
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        for row in csv.DictReader(lines):
            nu = float(row["nu"])
            if nu not in recs:
                recs[nu] = BifurcationRecord(nu, float(row["lambda2"]), float(row["a2"]), row["verdict"],
                                             error=row.get("error", ""))
                rows[nu] = []
            if row["xi_sample"]:
                rows[nu].append((float(row["xi_sample"]), float(row["m_sample"])))
    for nu, r in recs.items():
        if rows[nu]:
            arr = np.array(rows[nu])
            r.xi, r.m = arr[:, 0], arr[:, 1]
    return recs


# ---------------------------------------------------------------------------
# one-dimensional model map f(v) = beta + v - (k1 + k2 e^v) / (1 + v) u


@dataclass(frozen=True)
class ModelMapParams:
    beta: float
    u: float
    k1: float
    k2: float

    def __post_init__(self):
        for k in ("beta", "u", "k1", "k2"):
            if not math.isfinite(getattr(self, k)):
                raise ValueError(f"{k} must be finite")


def model_map(mp: ModelMapParams, v: float) -> float:
    if v == -1.0:
        raise ModelMapPole("f has a pole at v = -1")
    if mp.u == 0.0:
        return mp.beta + v
    return mp.beta + v - (mp.k1 + mp.k2 * math.exp(v)) / (1.0 + v) * mp.u


def model_map_orbit(mp: ModelMapParams, v0: float, burn_in: int, n: int) -> np.ndarray:
    v = v0
    for _ in range(burn_in):
        v = model_map(mp, v)
    out = np.empty(n)
    for i in range(n):
        v = model_map(mp, v)
        out[i] = v
    return out


def model_map_sweep(mp: ModelMapParams, betas: Sequence[float], v0: float = 0.0,
                    burn_in: int = 2000, n: int = 128) -> list[tuple[float, np.ndarray, int | None]]:
    """(beta, post-transient orbit, detected period) for each beta."""
    out = []
    for b in betas:
        q = ModelMapParams(float(b), mp.u, mp.k1, mp.k2)
        try:
            orbit = model_map_orbit(q, v0, burn_in, n)
        except (ModelMapPole, OverflowError):
            out.append((float(b), np.zeros(0), None))
            continue
        out.append((float(b), orbit, detect_period(orbit) if np.all(np.isfinite(orbit)) else None))
    return out
