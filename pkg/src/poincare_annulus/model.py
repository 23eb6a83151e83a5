"""Two-predator, one-prey chemostat family and its rational instance.

The vector field is

    x1' = phi1(s) x1,   x2' = phi2(s) x2,   s' = h(s) - psi1(s) x1 - psi2(s) x2

with the rational choice h(s) = s(1-s), phi_i = (s - lambda_i)/(s + a_i),
psi_i = s/(s + a_i).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .integrator import rhs

__all__ = [
    "Params",
    "State",
    "TransformedState",
    "DerivedQuantities",
    "Equilibrium",
    "FunctionFamily",
    "RationalFamily",
    "ScalarFields",
    "AuditEntry",
    "AuditReport",
    "DegenerateParameters",
    "DomainError",
    "NonPositiveResult",
    "UndefinedFraction",
    "eval_field",
    "audit_assumptions",
    "derived",
    "scalar_fields",
    "equilibria",
    "extinction_check",
    "iso_tangency_a",
    "to_transformed",
    "from_transformed",
    "transformed_field",
    "jacobian",
    "BASE_PARAMS",
]


class DegenerateParameters(ValueError):
    """Parameter combination for which a derived quantity is undefined."""


class DomainError(ValueError):
    pass


class NonPositiveResult(ValueError):
    pass


class UndefinedFraction(ValueError):
    """The predator fraction is undefined when both predators vanish."""


PARAM_KEYS = ("a1", "a2", "lambda1", "lambda2")


@dataclass(frozen=True)
class Params:
    a1: float
    a2: float
    lambda1: float
    lambda2: float

    def __post_init__(self):
        for k in PARAM_KEYS:
            v = getattr(self, k)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{k} must be a positive finite number, got {v!r}")
            object.__setattr__(self, k, float(v))

    @classmethod
    def from_mapping(cls, d: Mapping) -> "Params":
        missing = [k for k in PARAM_KEYS if k not in d]
        if missing:
            raise KeyError(f"missing parameter(s): {', '.join(missing)}")
        return cls(*(float(d[k]) for k in PARAM_KEYS))

    @classmethod
    def from_text(cls, text: str) -> "Params":
        """Parse a JSON object or ``key=value`` lines (``#`` starts a comment)."""
        stripped = text.strip()
        if stripped.startswith("{"):
            return cls.from_mapping(json.loads(stripped))
        d = {}
        for line in stripped.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            d[key.strip()] = float(val)
        return cls.from_mapping(d)

    @classmethod
    def from_file(cls, path: str | Path) -> "Params":
        return cls.from_text(Path(path).read_text())

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def with_(self, **changes) -> "Params":
        return replace(self, **changes)

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.lambda1, self.lambda2])

    def pair(self, i: int) -> tuple[float, float]:
        """(a_i, lambda_i) for predator i in {1, 2}."""
        if i == 1:
            return self.a1, self.lambda1
        if i == 2:
            return self.a2, self.lambda2
        raise ValueError("predator index must be 1 or 2")


BASE_PARAMS = Params(a1=0.1, a2=0.0075, lambda1=0.1, lambda2=0.01)


class State(NamedTuple):
    x1: float
    x2: float
    s: float


class TransformedState(NamedTuple):
    m: float
    xi: float
    s: float


class FunctionFamily:
    """Interface for h, psi_i, phi_i and their first derivatives.

    Generic constructions (tangency curve, isoclines, Jacobians, bounding
    scalar products) only go through these methods.
    """

    def h(self, s):
        raise NotImplementedError

    def dh(self, s):
        raise NotImplementedError

    def psi(self, i: int, s):
        raise NotImplementedError

    def dpsi(self, i: int, s):
        raise NotImplementedError

    def phi(self, i: int, s):
        raise NotImplementedError

    def dphi(self, i: int, s):
        raise NotImplementedError


@dataclass(frozen=True)
class RationalFamily(FunctionFamily):
    params: Params

    def h(self, s):
        return s * (1.0 - s)

    def dh(self, s):
        return 1.0 - 2.0 * s

    def psi(self, i, s):
        a, _ = self.params.pair(i)
        return s / (s + a)

    def dpsi(self, i, s):
        a, _ = self.params.pair(i)
        return a / (s + a) ** 2

    def phi(self, i, s):
        a, lam = self.params.pair(i)
        return (s - lam) / (s + a)

    def dphi(self, i, s):
        a, lam = self.params.pair(i)
        return (a + lam) / (s + a) ** 2


def eval_field(p: Params, st, family: FunctionFamily | None = None) -> np.ndarray:
    """Derivative (x1', x2', s') at ``st``."""
    fam = family or RationalFamily(p)
    x1, x2, s = st
    return np.array([
        fam.phi(1, s) * x1,
        fam.phi(2, s) * x2,
        fam.h(s) - fam.psi(1, s) * x1 - fam.psi(2, s) * x2,
    ])


def jacobian(p: Params, st, family: FunctionFamily | None = None) -> np.ndarray:
    fam = family or RationalFamily(p)
    x1, x2, s = st
    return np.array([
        [fam.phi(1, s), 0.0, fam.dphi(1, s) * x1],
        [0.0, fam.phi(2, s), fam.dphi(2, s) * x2],
        [-fam.psi(1, s), -fam.psi(2, s), fam.dh(s) - fam.dpsi(1, s) * x1 - fam.dpsi(2, s) * x2],
    ])


@dataclass(frozen=True)
class DerivedQuantities:
    tau: float
    kappa0: float
    kappa: float
    gamma_ratio: float


def derived(p: Params) -> DerivedQuantities:
    """Crossing point tau of phi1 and phi2, and the tangency-curve scale kappa."""
    if p.lambda1 == p.lambda2:
        raise DegenerateParameters("lambda1 == lambda2: kappa is undefined")
    kappa0 = p.a1 + p.lambda1 - (p.a2 + p.lambda2)
    if kappa0 == 0.0:
        raise DegenerateParameters("a1 + lambda1 == a2 + lambda2: tau is undefined")
    gamma = p.lambda2 * p.a1 / (p.lambda1 * p.a2)
    tau = (gamma - 1.0) * p.lambda1 * p.a2 / kappa0
    return DerivedQuantities(tau=tau, kappa0=kappa0, kappa=kappa0 / (p.lambda1 - p.lambda2),
                             gamma_ratio=gamma)


def iso_tangency_a(lam: float, kappa: float, tau: float) -> float:
    """Half-saturation constant that keeps the tangency curve fixed at ``lam``."""
    a = lam * (kappa - 1.0) - tau * kappa
    if a <= 0.0:
        raise NonPositiveResult(f"iso-tangency a = {a:.6g} is not positive (kappa={kappa:.6g})")
    return a


class ScalarFields:
    """Closed-form scalar fields in the (m, s) plane and on the octant.

    ``m_star`` uses the quadratic closed form for the rational family;
    ``m_star_generic`` evaluates h (phi2 - phi1) / omega through the
    function-family interface.
    """

    def __init__(self, p: Params, family: FunctionFamily | None = None):
        self.params = p
        self.family = family or RationalFamily(p)
        self.derived = derived(p)

    @staticmethod
    def _check(s):
        if np.any(np.asarray(s) < 0):
            raise DomainError("s must be nonnegative")

    def omega(self, s):
        self._check(s)
        f = self.family
        return f.psi(1, s) * f.phi(2, s) - f.psi(2, s) * f.phi(1, s)

    def omega_closed(self, s):
        self._check(s)
        p = self.params
        return s * (p.lambda1 - p.lambda2) / ((s + p.a1) * (s + p.a2))

    def l(self, m, s):
        self._check(s)
        f = self.family
        return f.h(s) * (f.phi(2, s) - f.phi(1, s)) - self.omega(s) * m

    def H(self, x1, x2, s):
        self._check(s)
        f = self.family
        return f.h(s) - f.psi(1, s) * x1 - f.psi(2, s) * x2

    def H_i(self, i, m, s):
        self._check(s)
        return self.family.h(s) - m * self.family.psi(i, s)

    def m_star(self, s):
        self._check(s)
        d = self.derived
        return d.kappa * (1.0 - s) * (s - d.tau)

    def dm_star(self, s):
        d = self.derived
        return d.kappa * (1.0 + d.tau - 2.0 * s)

    def m_star_generic(self, s):
        self._check(s)
        f = self.family
        return f.h(s) * (f.phi(2, s) - f.phi(1, s)) / self.omega(s)

    def S(self, i, s):
        """Main isocline m = h(s)/psi_i(s)."""
        self._check(s)
        a, _ = self.params.pair(i)
        return (1.0 - s) * (s + a)

    def region(self, m, s):
        """+1 outside the tangency curve (m > m*), -1 inside, 0 on it."""
        return np.sign(m - self.m_star(s))


def scalar_fields(p: Params) -> ScalarFields:
    return ScalarFields(p)


@dataclass(frozen=True)
class AuditEntry:
    name: str
    passed: bool
    witness: str


@dataclass
class AuditReport:
    params: Params
    entries: list[AuditEntry] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __getitem__(self, name: str) -> AuditEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "all_passed": self.all_passed,
            "assumptions": {e.name: {"passed": e.passed, "witness": e.witness} for e in self.entries},
        }


def audit_assumptions(p: Params) -> AuditReport:
    """Check A1-A7 and B1 for the rational family.

    Violations are report entries; nothing here raises, since several
    parameter sets of interest deliberately break some assumptions.
    """
    rep = AuditReport(p)
    add = rep.entries.append
    add(AuditEntry("A1", True, "rational functions are smooth on s >= 0; coordinate planes invariant"))
    add(AuditEntry("A2", True, "psi_i(0) = 0, psi_i'(s) = a_i/(s+a_i)^2 > 0"))
    add(AuditEntry("A3", True, "phi_i'(s) = (a_i+lambda_i)/(s+a_i)^2 > 0, phi_i(lambda_i) = 0"))
    add(AuditEntry("A4", True, "h(0) = h(1) = 0, h'(0) = 1, h'' = -2"))
    add(AuditEntry("A5", p.a1 > p.a2, f"a1={p.a1:g} {'>' if p.a1 > p.a2 else '<='} a2={p.a2:g}"))
    try:
        d = derived(p)
    except DegenerateParameters as exc:
        add(AuditEntry("A6", False, str(exc)))
        add(AuditEntry("A7", False, str(exc)))
    else:
        a6 = d.kappa0 > 0 and d.tau > 0
        add(AuditEntry("A6", a6, f"kappa0={d.kappa0:.6g}, tau={d.tau:.6g}, gamma={d.gamma_ratio:.6g}"))
        a7 = 0 < d.tau < p.lambda2 < p.lambda1 < 1
        add(AuditEntry("A7", a7, f"tau={d.tau:.6g}, lambda2={p.lambda2:g}, lambda1={p.lambda1:g}"))
    b1 = p.lambda1 > p.lambda2
    add(AuditEntry("B1", b1, f"omega(s) = s(lambda1-lambda2)/((s+a1)(s+a2)), lambda1-lambda2={p.lambda1 - p.lambda2:.6g}"))
    return rep


@dataclass(frozen=True)
class Equilibrium:
    kind: str
    location: State
    eigenvalues: tuple[complex, complex, complex]
    stability: str

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "location": list(self.location),
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "stability": self.stability,
        }


def _classify(eigs: np.ndarray) -> str:
    re = np.real(eigs)
    n_stable = int(np.sum(re < 0))
    n_unstable = int(np.sum(re > 0))
    if n_unstable == 0 and n_stable == len(eigs):
        return "sink"
    if n_stable == 0 and n_unstable == len(eigs):
        return "source"
    if n_stable + n_unstable < len(eigs):
        return f"nonhyperbolic ({n_stable}-D stable, {n_unstable}-D unstable)"
    return f"saddle ({n_stable}-D stable, {n_unstable}-D unstable)"


def equilibria(p: Params) -> list[Equilibrium]:
    """The four boundary equilibria O, O1, P1, P2 with Jacobian spectra."""
    fam = RationalFamily(p)
    pts = {
        "O": State(0.0, 0.0, 0.0),
        "O1": State(0.0, 0.0, 1.0),
        "P1": State((1 - p.lambda1) * (p.lambda1 + p.a1), 0.0, p.lambda1),
        "P2": State(0.0, (1 - p.lambda2) * (p.lambda2 + p.a2), p.lambda2),
    }
    out = []
    for kind, st in pts.items():
        eigs = np.linalg.eigvals(jacobian(p, st, fam))
        eigs = eigs[np.lexsort((np.imag(eigs), np.real(eigs)))]
        out.append(Equilibrium(kind, st, tuple(complex(z) for z in eigs), _classify(eigs)))
    return out


def extinction_check(p: Params) -> str:
    """'X1Extinct', 'X2Extinct' or 'Undetermined' from the known sufficient conditions."""
    if p.lambda1 < p.lambda2:
        return "X2Extinct"
    if p.a1 > p.a2:
        threshold = p.a1 * p.lambda2 * (p.a2 + 1) / (p.a1 * p.a2 + p.lambda2 * (p.a1 - p.a2) + p.a2)
        if p.lambda1 > threshold:
            return "X1Extinct"
    return "Undetermined"


def extinction_threshold(p: Params) -> float:
    return p.a1 * p.lambda2 * (p.a2 + 1) / (p.a1 * p.a2 + p.lambda2 * (p.a1 - p.a2) + p.a2)


def to_transformed(st) -> TransformedState:
    x1, x2, s = st
    m = x1 + x2
    if m <= 0:
        raise UndefinedFraction("m = 0: predator fraction xi is undefined")
    return TransformedState(m, x1 / m, s)


def from_transformed(ts) -> State:
    m, xi, s = ts
    return State(m * xi, m * (1.0 - xi), s)


def transformed_field(p: Params, ts, family: FunctionFamily | None = None) -> np.ndarray:
    """(m', xi', s') in total-density / fraction coordinates."""
    fam = family or RationalFamily(p)
    m, xi, s = ts
    p_ = fam.phi(1, s) * xi + fam.phi(2, s) * (1 - xi)
    sigma = fam.phi(1, s) - fam.phi(2, s)
    q = fam.psi(1, s) * xi + fam.psi(2, s) * (1 - xi)
    return np.array([p_ * m, sigma * xi * (1 - xi), fam.h(s) - q * m])


# ---------------------------------------------------------------------------
# compiled right-hand sides for the rational family
#
# full / transformed:  args = [a1, a2, lambda1, lambda2, eps]
# plane (state log m, s): args = [a, lambda, kappa, tau, s_level, scaled, sign]
#                      (sign = -1 gives the reversed field)


@rhs
def full_rhs(t, y, args):
    a1, a2, l1, l2 = args[0], args[1], args[2], args[3]
    x1, x2, s = y[0], y[1], y[2]
    out = np.empty(3)
    out[0] = (s - l1) / (s + a1) * x1
    out[1] = (s - l2) / (s + a2) * x2
    out[2] = s * (1.0 - s) - s / (s + a1) * x1 - s / (s + a2) * x2
    return out


@rhs
def transformed_rhs(t, y, args):
    a1, a2, l1, l2 = args[0], args[1], args[2], args[3]
    m, xi, s = y[0], y[1], y[2]
    ph1 = (s - l1) / (s + a1)
    ph2 = (s - l2) / (s + a2)
    ps1 = s / (s + a1)
    ps2 = s / (s + a2)
    out = np.empty(3)
    out[0] = (ph1 * xi + ph2 * (1.0 - xi)) * m
    out[1] = (ph1 - ph2) * xi * (1.0 - xi)
    out[2] = s * (1.0 - s) - (ps1 * xi + ps2 * (1.0 - xi)) * m
    return out


@rhs
def section_event(t, y, args):
    out = np.empty(1)
    out[0] = y[2] - args[4]
    return out


@rhs
def plane_rhs(t, y, args):
    # state is (log m, s): orbits run exponentially close to the s-axis
    a, lam = args[0], args[1]
    m, s = math.exp(y[0]), y[1]
    out = np.empty(2)
    out[0] = (s - lam) / (s + a)
    out[1] = s * (1.0 - s) - s / (s + a) * m
    c = args[6]
    if args[5] != 0.0:
        # time rescaled by (s + a)
        c *= s + a
    out[0] *= c
    out[1] *= c
    return out


@rhs
def plane_events(t, y, args):
    out = np.empty(2)
    out[0] = math.exp(y[0]) - args[2] * (1.0 - y[1]) * (y[1] - args[3])
    out[1] = y[1] - args[4]
    return out
