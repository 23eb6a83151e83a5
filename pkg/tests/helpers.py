"""Shared generators and invariant suites for the test modules."""

import numpy as np

from poincare_annulus.annulus import bound_signs
from poincare_annulus.model import (
    BASE_PARAMS,
    Params,
    RationalFamily,
    audit_assumptions,
    eval_field,
    scalar_fields,
)
from poincare_annulus.planar import PlanarSystem


def random_valid_params(rng: np.random.Generator, n: int) -> list[Params]:
    """n parameter sets that pass every assumption check."""
    out = []
    while len(out) < n:
        l1 = rng.uniform(0.02, 0.9)
        l2 = rng.uniform(0.01, 0.95) * l1
        a1 = rng.uniform(0.005, 1.0)
        a2 = rng.uniform(0.01, 0.99) * a1
        if l1 - l2 < 1e-3 or a2 < 1e-4:
            continue
        p = Params(a1, a2, l1, l2)
        if audit_assumptions(p).all_passed:
            out.append(p)
    return out


def bound_sign_random_suite(p: Params = BASE_PARAMS, n: int = 1000, seed: int = 0) -> list[str]:
    """Sign checks of the two scalar products at n random octant points.

    Outside the tangency curve (m > m*) the first product is positive and the
    second negative when both predators are present; inside the signs flip.
    The products from the normal fields must match their closed forms,
    relative to |n| |F| since the dot product cancels near the curve.
    """
    rng = np.random.default_rng(seed)
    sf = scalar_fields(p)
    fam = RationalFamily(p)
    problems = []
    for _ in range(n):
        s = rng.uniform(1e-3, 1.0)
        x1, x2 = rng.uniform(1e-4, 0.5, 2)
        sg = bound_signs(p, (x1, x2, s))
        m = x1 + x2
        F = np.linalg.norm(eval_field(p, (x1, x2, s)))
        scale = max(np.hypot(np.sqrt(2) * sf.H_i(i, m, s), m * fam.phi(i, s)) for i in (1, 2)) * F
        if max(abs(a - b) for a, b in zip(sg.raw, sg.closed)) > 1e-12 * scale:
            problems.append(f"closed form mismatch at {(x1, x2, s)}")
        g = x1 + x2 - float(sf.m_star(s))
        if abs(g) < 1e-9:
            continue
        want = (1, -1) if g > 0 else (-1, 1)
        if (np.sign(sg.raw[0]), np.sign(sg.raw[1])) != want:
            problems.append(f"sign {np.sign(sg.raw)} at {(x1, x2, s)}, expected {want}")
    return problems


def bound_sign_curve_suite(p: Params = BASE_PARAMS, n: int = 200) -> list[str]:
    """Both products vanish on the tangency curve and the first one when x2 = 0."""
    sf = scalar_fields(p)
    problems = []
    d = sf.derived
    for s in np.linspace(d.tau, 1.0, n + 2)[1:-1]:
        m = float(sf.m_star(s))
        for xi in (0.2, 0.5, 0.9):
            sg = bound_signs(p, (xi * m, (1 - xi) * m, s))
            if max(abs(v) for v in sg.raw) > 1e-12:
                problems.append(f"nonzero product {sg.raw} on the curve at s={s}")
    for s in (0.05, 0.3, 0.7):
        if abs(bound_signs(p, (0.2, 0.0, s)).raw[0]) > 1e-12:
            problems.append(f"first product nonzero with x2 = 0 at s={s}")
    return problems


def collinearity_suite(p: Params = BASE_PARAMS, n: int = 1000) -> list[str]:
    """Cross product of the comparison fields on the curve, relative to their sizes."""
    sf = scalar_fields(p)
    c1, c2 = PlanarSystem.comparison(p, 1), PlanarSystem.comparison(p, 2)
    problems = []
    for s in np.linspace(sf.derived.tau, 1.0, n + 2)[1:-1]:
        pt = (float(sf.m_star(s)), s)
        f1, f2 = c1.field(pt), c2.field(pt)
        cross = f1[0] * f2[1] - f1[1] * f2[0]
        if abs(cross) > 1e-9 * np.linalg.norm(f1) * np.linalg.norm(f2):
            problems.append(f"cross product {cross:.3g} at s={s}")
    return problems


def isocline_order_suite(p: Params, n: int = 1000) -> list[str]:
    """Ordering of the main isoclines and the tangency curve on a grid."""
    sf = scalar_fields(p)
    d = sf.derived
    s = np.linspace(1e-4, 1 - 1e-4, n)
    s1, s2, ms = sf.S(1, s), sf.S(2, s), sf.m_star(s)
    problems = []
    if not np.all(s1 > s2):
        problems.append("S1 <= S2 somewhere")
    hi = s > p.lambda1 + 1e-9
    if not np.all(ms[hi] > s1[hi]):
        problems.append("m* <= S1 above lambda1")
    mid = (s > p.lambda2 + 1e-9) & (s < p.lambda1 - 1e-9)
    if not np.all((s2[mid] < ms[mid]) & (ms[mid] < s1[mid])):
        problems.append("m* outside (S2, S1) between the lambdas")
    lo = (s > d.tau + 1e-9) & (s < p.lambda2 - 1e-9)
    if not np.all(ms[lo] < s2[lo]):
        problems.append("m* >= S2 between tau and lambda2")
    return problems


def isocline_meeting_suite(params: list[Params]) -> list[str]:
    problems = []
    for p in params:
        sf = scalar_fields(p)
        for i in (1, 2):
            lam = p.pair(i)[1]
            if abs(sf.m_star(lam) - sf.S(i, lam)) > 1e-12:
                problems.append(f"m*(lambda{i}) != S{i}(lambda{i}) for {p}")
    return problems


def omega_suite(params: list[Params]) -> list[str]:
    s = np.linspace(1e-3, 1.0, 1000)
    return [f"omega <= 0 for {p}" for p in params if not np.all(scalar_fields(p).omega(s) > 0)]
