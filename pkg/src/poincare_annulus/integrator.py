"""Adaptive Dormand-Prince 5(4) integration with dense output and event location.

The stepping kernel is written once and built twice: compiled with numba for
jitted right-hand sides, and left as plain Python for ordinary callables. Both
builds execute the same arithmetic, so results agree to rounding.

Right-hand sides and event functions share the signature ``f(t, y, args)``
where ``args`` is a 1-D float64 array. Event functions return either a scalar
(when passed as a list) or a 1-D array of event values (``vector_events``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import types

from numba import njit
from numba import types as nbt
from numba.core.registry import CPUDispatcher

__all__ = [
    "EventRecord",
    "Trajectory",
    "IntegrationError",
    "StepSizeUnderflow",
    "MaxStepsExceeded",
    "integrate",
    "order_check",
    "ORDER",
]

ORDER = 5

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array(
    [
        [0, 0, 0, 0, 0, 0],
        [1 / 5, 0, 0, 0, 0, 0],
        [3 / 40, 9 / 40, 0, 0, 0, 0],
        [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
        [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
    ],
    dtype=np.float64,
)
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array(
    [-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40]
)
# Shampine's free quartic interpolant; row i multiplies stage i,
# column j multiplies theta**(j+1).
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ],
    dtype=np.float64,
)

_ARR = nbt.float64[::1]
FIELD_SIGNATURE = _ARR(nbt.float64, _ARR, _ARR)
_FN = nbt.FunctionType(FIELD_SIGNATURE)
_KERNEL_SIG = (
    _FN, _FN, nbt.float64, _ARR, nbt.float64, nbt.float64, _ARR, _ARR,
    nbt.int64[::1], nbt.int64[::1],
    nbt.float64, nbt.float64, nbt.float64, nbt.int64, nbt.boolean, nbt.float64,
)

# status codes returned by the kernel
_FINISHED, _STOPPED, _UNDERFLOW, _MAXSTEPS = 0, 1, 2, 3

# time tolerance for event roots, and the slope below which a root is grazing
EVENT_XTOL = 1e-12
GRAZING_SLOPE = 1e-9



@njit(cache=True)
def _dense(y0, K, h, theta):
    th2 = theta * theta
    th3 = th2 * theta
    th4 = th3 * theta
    out = y0.copy()
    for i in range(7):
        w = h * (_P[i, 0] * theta + _P[i, 1] * th2 + _P[i, 2] * th3 + _P[i, 3] * th4)
        if w != 0.0:
            out += w * K[i]
    return out

@njit(cache=True)
def _dense_into(out, y0, K, h, theta):
    th2 = theta * theta
    th3 = th2 * theta
    th4 = th3 * theta
    for j in range(y0.shape[0]):
        out[j] = y0[j]
    for i in range(7):
        w = h * (_P[i, 0] * theta + _P[i, 1] * th2 + _P[i, 2] * th3 + _P[i, 3] * th4)
        if w != 0.0:
            for j in range(y0.shape[0]):
                out[j] += w * K[i, j]


@njit(cache=True)
def _gval(g, j, t0, y0, K, h, theta, args):
    return g(t0 + theta * h, _dense(y0, K, h, theta), args)[j]

@njit(cache=True)
def _brent(g, j, t0, y0, K, h, a, b, fa, fb, xtol, args):
    # zeroin on theta in [a, b]; bisection guarded inverse quadratic steps
    c, fc = a, fa
    d = b - a
    e = d
    for _ in range(200):
        if fb * fc > 0.0:
            c, fc = a, fa
            d = b - a
            e = d
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol1 = 2.0 * 2.2e-16 * abs(b) + 0.5 * xtol
        xm = 0.5 * (c - b)
        if abs(xm) <= tol1 or fb == 0.0:
            return b, fb
        if abs(e) >= tol1 and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p = 2.0 * xm * s
                q = 1.0 - s
            else:
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0.0:
                q = -q
            else:
                p = -p
            if 2.0 * p < min(3.0 * xm * q - abs(tol1 * q), abs(e * q)):
                e = d
                d = p / q
            else:
                d = xm
                e = d
        else:
            d = xm
            e = d
        a, fa = b, fb
        if abs(d) > tol1:
            b += d
        else:
            b += tol1 if xm > 0 else -tol1
        fb = _gval(g, j, t0, y0, K, h, b, args)
    return b, fb

@njit(cache=True)
def _rms_norm(x, scale):
    acc = 0.0
    for i in range(x.shape[0]):
        v = x[i] / scale[i]
        acc += v * v
    return math.sqrt(acc / x.shape[0])

@njit(cache=True)
def _initial_step(fun, t0, y0, f0, direction, rtol, atol, args):
    scale = atol + np.abs(y0) * rtol
    d0 = _rms_norm(y0, scale)
    d1 = _rms_norm(f0, scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = fun(t0 + h0 * direction, y1, args)
    d2 = _rms_norm(f1 - f0, scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h0, h1)

@njit(cache=True)
def _grow(arr, n):
    new = np.empty((2 * arr.shape[0] + 1,) + arr.shape[1:], dtype=arr.dtype)
    new[:n] = arr[:n]
    return new

@njit(_KERNEL_SIG, cache=True)
def _run(
    fun, events, t0, y0, t1, rtol, atol, args,
    directions, stop_counts,
    first_step, max_step, h_min, max_steps, record, fixed_step,
):
    d = y0.shape[0]
    nev = directions.shape[0]
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)

    cap = 64
    ts = np.empty(cap)
    ys = np.empty((cap, d))
    hs = np.empty(cap)
    ks = np.empty((cap if record else 1, 7, d))
    ecap = 16
    ev_id = np.empty(ecap, dtype=np.int64)
    ev_t = np.empty(ecap)
    ev_y = np.empty((ecap, d))
    ev_dir = np.empty(ecap, dtype=np.int64)
    ev_tan = np.empty(ecap, dtype=np.bool_)
    nrec = 0
    counts = np.zeros(max(nev, 1), dtype=np.int64)

    t = t0
    y = y0.copy()
    ts[0] = t
    ys[0] = y
    n = 0  # number of stored steps
    nfev = 1
    f = fun(t, y, args)
    K = np.empty((7, d))
    ytmp = np.empty(d)
    y_new = np.empty(d)
    nsub = 4
    thetas = np.linspace(0.0, 1.0, nsub + 1)
    gs = np.empty((nsub + 1, max(nev, 1)))
    rt = np.empty(max(nev, 1) * nsub)
    rj = np.empty(max(nev, 1) * nsub, dtype=np.int64)
    rd = np.empty(max(nev, 1) * nsub, dtype=np.int64)
    g_old = events(t, y, args) if nev > 0 else np.empty(0)

    if fixed_step > 0.0:
        h = fixed_step
    elif first_step > 0.0:
        h = first_step
    else:
        h = _initial_step(fun, t, y, f, direction, rtol, atol, args)
        nfev += 1
    h = min(h, max_step, span) if span > 0 else 0.0
    status = _FINISHED
    nsteps = 0
    rejected = False

    while direction * (t1 - t) > 0.0:
        if nsteps >= max_steps:
            status = _MAXSTEPS
            break
        nsteps += 1
        if fixed_step <= 0.0 and h < h_min * max(1.0, abs(t)):
            status = _UNDERFLOW
            break
        remaining = abs(t1 - t)
        last = False
        if h >= remaining:
            h = remaining
            last = True
        hh = h * direction

        K[0, :] = f
        for s in range(1, 7):
            for i in range(d):
                acc = 0.0
                for r in range(s):
                    acc += _A[s, r] * K[r, i]
                ytmp[i] = y[i] + hh * acc
            K[s, :] = fun(t + _C[s] * hh, ytmp, args)
        nfev += 6
        en = 0.0
        for i in range(d):
            acc = 0.0
            acc_e = 0.0
            for r in range(7):
                acc += _B[r] * K[r, i]
                acc_e += _E[r] * K[r, i]
            y_new[i] = y[i] + hh * acc
            sc = atol[i] + rtol * max(abs(y[i]), abs(y_new[i]))
            v = hh * acc_e / sc
            en += v * v
        en = math.sqrt(en / d)

        if fixed_step <= 0.0:
            if not np.isfinite(en):
                h *= 0.2
                rejected = True
                continue
            if en > 1.0:
                fac = max(0.2, 0.9 * en ** (-0.2))
                h *= fac
                rejected = True
                continue
            if en == 0.0:
                fac = 10.0
            else:
                fac = min(10.0, 0.9 * en ** (-0.2))
            if rejected:
                fac = min(1.0, fac)
            rejected = False
            h_next = min(h * fac, max_step)
        else:
            h_next = h

        t_new = t1 if last else t + hh
        stop_here = False
        t_end = t_new
        y_end = y_new.copy()

        if nev > 0:
            g_new = events(t_new, y_new, args)
            # sub-sample the interpolant so paired roots inside one step are seen
            gs[0] = g_old
            for q in range(1, nsub):
                th = thetas[q]
                _dense_into(ytmp, y, K, hh, th)
                gs[q] = events(t + th * hh, ytmp, args)
            gs[nsub] = g_new
            nr = 0
            for j in range(nev):
                for q in range(nsub):
                    ga = gs[q, j]
                    gb = gs[q + 1, j]
                    if ga == 0.0:
                        continue
                    if gb == 0.0 or ga * gb < 0.0:
                        sgn = 1 if gb > ga else -1
                        if directions[j] != 0 and directions[j] != sgn:
                            continue
                        if gb == 0.0:
                            th = thetas[q + 1]
                        else:
                            th, _ = _brent(events, j, t, y, K, hh, thetas[q], thetas[q + 1],
                                          ga, gb, EVENT_XTOL / abs(hh), args)
                        rt[nr] = th
                        rj[nr] = j
                        rd[nr] = sgn
                        nr += 1
            order = np.argsort(rt[:nr])
            for oi in range(nr):
                k = order[oi]
                th = rt[k]
                j = rj[k]
                yr = _dense(y, K, hh, th)
                tr = t + th * hh
                dth = 1e-6
                ga = _gval(events, j, t, y, K, hh, th - dth, args)
                gb = _gval(events, j, t, y, K, hh, th + dth, args)
                slope = (gb - ga) / (2.0 * dth * abs(hh))
                tangential = abs(slope) < GRAZING_SLOPE
                if nrec >= ev_t.shape[0]:
                    ev_id = _grow(ev_id, nrec)
                    ev_t = _grow(ev_t, nrec)
                    ev_y = _grow(ev_y, nrec)
                    ev_dir = _grow(ev_dir, nrec)
                    ev_tan = _grow(ev_tan, nrec)
                ev_id[nrec] = j
                ev_t[nrec] = tr
                ev_y[nrec] = yr
                ev_dir[nrec] = rd[k]
                ev_tan[nrec] = tangential
                nrec += 1
                if not tangential:
                    counts[j] += 1
                    if stop_counts[j] > 0 and counts[j] >= stop_counts[j]:
                        stop_here = True
                        t_end = tr
                        y_end = yr
                        break
            g_old = g_new

        if n + 1 >= ts.shape[0]:
            ts = _grow(ts, n + 1)
            ys = _grow(ys, n + 1)
            hs = _grow(hs, n)
            if record:
                ks = _grow(ks, n)
        hs[n] = hh
        if record:
            ks[n] = K
        n += 1
        ts[n] = t_end
        ys[n] = y_end
        if not record:
            # keep only the latest step
            ts[0] = ts[n]
            ys[0] = ys[n]
            n = 0
        if stop_here:
            status = _STOPPED
            break
        t = t_new
        y, y_new = y_new, y
        f = K[6].copy()
        h = h_next

    nk = n if record else 0
    return (status, ts[: n + 1].copy(), ys[: n + 1].copy(), hs[:nk].copy(),
            ks[:nk].copy(), ev_id[:nrec].copy(), ev_t[:nrec].copy(),
            ev_y[:nrec].copy(), ev_dir[:nrec].copy(), ev_tan[:nrec].copy(), nfev)


def _python_twin(fn, names):
    """Rebuild ``fn`` as plain Python, resolving ``names`` to pure-Python twins."""
    ns = dict(globals())
    for name in names:
        ns[name] = types.FunctionType(globals()[name].py_func.__code__, ns, name)
    return types.FunctionType(fn.py_func.__code__, ns, fn.__name__)


_run_py = _python_twin(_run, ["_dense", "_dense_into", "_gval", "_brent", "_rms_norm", "_initial_step", "_grow"])
_dense_py = _dense.py_func


def rhs(fn):
    """Compile ``fn(t, y, args) -> ndarray`` for use with the fast kernel."""
    try:
        return njit(FIELD_SIGNATURE, cache=True)(fn)
    except RuntimeError:  # no file to cache against (interactive or exec'd source)
        return njit(FIELD_SIGNATURE)(fn)


@rhs
def _no_events(t, y, args):
    return np.empty(0)


class IntegrationError(RuntimeError):
    """Raised when the integrator cannot continue."""

    def __init__(self, message: str, t: float, y: np.ndarray):
        super().__init__(f"{message} at t={t:.6g}, y={np.array2string(np.asarray(y), precision=6)}")
        self.t = t
        self.y = y


class StepSizeUnderflow(IntegrationError):
    pass


class MaxStepsExceeded(IntegrationError):
    pass


@dataclass
class EventRecord:
    event_id: int
    t: float
    state: np.ndarray
    direction: int  # +1 when the event function increases along the integration
    tangential: bool = False


@dataclass
class Trajectory:
    """Accepted steps of one integration.

    ``t`` and ``y`` hold step endpoints; ``h`` and ``k`` hold the signed step
    sizes and stage derivatives used by the dense interpolant of each step. If
    the run stopped on an event, the final endpoint is the event state, which
    lies strictly inside the last step.
    """

    t: np.ndarray
    y: np.ndarray
    h: np.ndarray
    k: np.ndarray
    events: list[EventRecord] = field(default_factory=list)
    stopped: bool = False
    nfev: int = 0

    @property
    def t_final(self) -> float:
        return float(self.t[-1])

    @property
    def y_final(self) -> np.ndarray:
        return self.y[-1]

    def __len__(self) -> int:
        return len(self.h)

    def __call__(self, t: float) -> np.ndarray:
        """Evaluate the dense interpolant at time ``t``."""
        if len(self.h) == 0:
            raise ValueError("trajectory was integrated with record=False")
        forward = self.h[0] > 0
        starts = self.t[:-1]
        if forward:
            i = int(np.searchsorted(starts, t, side="right")) - 1
        else:
            i = int(np.searchsorted(-starts, -t, side="right")) - 1
        i = min(max(i, 0), len(self.h) - 1)
        theta = (t - starts[i]) / self.h[i]
        return _dense_py(self.y[i], self.k[i], self.h[i], theta)

    def sample(self, n_per_step: int = 4, steps=None) -> tuple[np.ndarray, np.ndarray]:
        """Times and states on a grid refining every step ``n_per_step`` times.

        ``steps`` restricts the grid to the given step indices; the initial
        point is then omitted.
        """
        n = len(self.h)
        idx = np.arange(n) if steps is None else np.asarray(steps, dtype=np.int64)
        u = np.linspace(0.0, 1.0, n_per_step + 1)[1:]
        theta = ((self.t[idx + 1] - self.t[idx]) / self.h[idx])[:, None] * u[None, :]
        powers = np.stack([theta, theta**2, theta**3, theta**4], axis=-1)
        w = self.h[idx][:, None, None] * (powers @ _P.T)
        ys = self.y[idx][:, None, :] + np.einsum("snk,skd->snd", w, self.k[idx])
        ts = self.t[idx][:, None] + theta * self.h[idx][:, None]
        ts, ys = ts.reshape(-1), ys.reshape(-1, self.y.shape[1])
        if steps is None:
            ts = np.concatenate([self.t[:1], ts])
            ys = np.concatenate([self.y[:1], ys])
        return ts, ys

    def events_of(self, event_id: int, *, transversal_only: bool = True) -> list[EventRecord]:
        return [
            e for e in self.events
            if e.event_id == event_id and not (transversal_only and e.tangential)
        ]

    def to_csv(self, path: str | Path, names: Sequence[str] | None = None) -> None:
        names = list(names) if names is not None else [f"y{i}" for i in range(self.y.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names])
            for t, y in zip(self.t, self.y):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in y)])

    def events_to_csv(self, path: str | Path, names: Sequence[str] | None = None) -> None:
        names = list(names) if names is not None else [f"y{i}" for i in range(self.y.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "t", *names, "direction", "tangential"])
            for e in self.events:
                w.writerow([e.event_id, repr(e.t), *(repr(float(v)) for v in e.state),
                            e.direction, int(e.tangential)])


_combined_cache: dict[tuple, Callable] = {}


def _combine_events(funcs: Sequence[Callable], jit: bool) -> Callable:
    """Build one vector-valued event function from scalar ones."""
    key = (tuple(id(f) for f in funcs), jit)
    if key in _combined_cache:
        return _combined_cache[key][0]
    n = len(funcs)
    namespace = {"np": np}
    body = ["def _ev(t, y, args):", f"    out = np.empty({n})"]
    for i, f in enumerate(funcs):
        namespace[f"_g{i}"] = f
        body.append(f"    out[{i}] = _g{i}(t, y, args)")
    body.append("    return out")
    exec("\n".join(body), namespace)
    fn = namespace["_ev"]
    if jit:
        fn = njit(FIELD_SIGNATURE)(fn)
    # keep the sources alive so ids are not reused
    _combined_cache[key] = (fn, tuple(funcs))
    return fn


def _is_jitted(f) -> bool:
    if not isinstance(f, CPUDispatcher):
        return False
    if FIELD_SIGNATURE.args in f.signatures:
        return True
    try:
        f.compile(FIELD_SIGNATURE)
    except Exception:
        return False
    return True


def integrate(
    field: Callable,
    y0,
    t_span: tuple[float, float],
    *,
    rtol: float = 1e-9,
    atol: float | Sequence[float] = 1e-12,
    args=(),
    events: Sequence[Callable] | Callable | None = None,
    directions: Sequence[int] | None = None,
    vector_events: bool = False,
    stop_event: int | None = None,
    stop_count: int = 1,
    terminal: Sequence[int] | None = None,
    first_step: float | None = None,
    max_step: float = np.inf,
    h_min: float = 1e-14,
    max_steps: int = 1_000_000,
    record: bool = True,
    fixed_step: float | None = None,
    raise_on_failure: bool = True,
) -> Trajectory:
    """Integrate ``y' = field(t, y, args)`` over ``t_span``.

    ``events`` is a list of scalar functions, or a single vector-valued
    function when ``vector_events`` is true. ``directions`` filters crossings
    (+1 increasing, -1 decreasing, 0 both). When ``stop_event`` is given the
    run ends at the ``stop_count``-th transversal crossing of that event.
    ``terminal`` gives one such count per event (0 = never stop) and
    overrides ``stop_event``.
    Tangential (grazing) roots are recorded but never counted.

    With ``fixed_step`` the error control is switched off; this is only meant
    for convergence studies.
    """
    y0 = np.array(y0, dtype=np.float64, ndmin=1)
    atol = np.broadcast_to(np.asarray(atol, dtype=np.float64), y0.shape).copy()
    if not (0 < rtol <= 1e-2) or not np.all((atol > 0) & (atol <= 1e-2)):
        raise ValueError("tolerances must lie in (0, 1e-2]")
    args = np.asarray(args, dtype=np.float64).reshape(-1)
    t0, t1 = float(t_span[0]), float(t_span[1])

    jit = _is_jitted(field)
    if events is None:
        ev_fun = _no_events if jit else _no_events.py_func
        nev = 0
    elif vector_events:
        ev_fun = events
        nev = len(np.atleast_1d(events(t0, y0, args))) if directions is None else len(directions)
        jit = jit and _is_jitted(events)
    else:
        funcs = list(events)
        jit = jit and all(isinstance(g, CPUDispatcher) for g in funcs)
        ev_fun = _combine_events(funcs, jit)
        nev = len(funcs)
    if not jit and _is_jitted(field):
        field = field.py_func
    if not jit and nev and vector_events and _is_jitted(ev_fun):
        ev_fun = ev_fun.py_func
    if nev == 0:
        ev_fun = _no_events if jit else _no_events.py_func
    dirs = np.zeros(nev, dtype=np.int64) if directions is None else np.asarray(directions, dtype=np.int64)
    if len(dirs) != nev:
        raise ValueError("directions must match the number of events")

    stops = np.zeros(nev, dtype=np.int64)
    if terminal is not None:
        stops[:] = np.asarray(terminal, dtype=np.int64)
    elif stop_event is not None:
        stops[int(stop_event)] = int(stop_count)

    runner = _run if jit else _run_py
    out = runner(
        field, ev_fun, t0, y0, t1, float(rtol), atol, args,
        dirs, stops,
        float(first_step or 0.0), float(max_step), float(h_min), int(max_steps),
        bool(record), float(fixed_step or 0.0),
    )
    status, ts, ys, hs, ks, eid, et, ey, edir, etan, nfev = out
    evs = [
        EventRecord(int(eid[i]), float(et[i]), ey[i].copy(), int(edir[i]), bool(etan[i]))
        for i in range(len(et))
    ]
    traj = Trajectory(ts, ys, hs, ks, evs, stopped=status == _STOPPED, nfev=int(nfev))
    if raise_on_failure:
        if status == _UNDERFLOW:
            raise StepSizeUnderflow("step size underflow (blow-up or stiffness)", traj.t_final, traj.y_final)
        if status == _MAXSTEPS:
            raise MaxStepsExceeded(f"more than {max_steps} steps", traj.t_final, traj.y_final)
    return traj


def order_check(
    field: Callable,
    y0,
    exact: Callable[[float], np.ndarray] | None,
    t_end: float = 1.0,
    steps: Sequence[int] = (8, 16, 32, 64),
    args=(),
) -> float:
    """Empirical convergence order from fixed-step runs.

    Error is measured against ``exact(t_end)``. Without an exact solution the
    order comes from Richardson self-comparison of successive halvings.
    """
    finals = []
    for n in steps:
        tr = integrate(field, y0, (0.0, t_end), args=args, fixed_step=t_end / n, max_steps=10 * n)
        finals.append(tr.y_final)
    hs = np.array([t_end / n for n in steps])
    if exact is not None:
        ref = np.asarray(exact(t_end), dtype=float)
        errs = np.array([np.max(np.abs(f - ref)) for f in finals])
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        return float(slope)
    diffs = np.array([np.max(np.abs(finals[i] - finals[i + 1])) for i in range(len(finals) - 1)])
    refine = hs[:-2] / hs[1:-1]
    return float(np.mean(np.log(diffs[:-1] / diffs[1:]) / np.log(refine)))
