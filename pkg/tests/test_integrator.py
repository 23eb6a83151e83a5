import csv
import math

import numpy as np
import pytest

from poincare_annulus.integrator import (
    MaxStepsExceeded,
    StepSizeUnderflow,
    integrate,
    order_check,
    rhs,
)
from poincare_annulus.model import BASE_PARAMS, full_rhs
from tests.test_acceptance import (
    NOMINAL_ORDER,
    _cosine,
    _decay,
    _first,
    _oscillator,
    convergence_orders,
    event_suite,
)

BASE_ARGS = np.array([*BASE_PARAMS.as_array(), 0.0])


@rhs
def _blowup(t, y, args):
    return y * y


def test_exponential_decay():
    tr = integrate(_decay, [1.0], (0.0, 1.0), rtol=1e-10, atol=1e-10)
    assert tr.y_final[0] == pytest.approx(math.exp(-1.0), abs=1e-9)


def test_python_field_matches_compiled():
    def py_decay(t, y, args):
        return -y

    a = integrate(py_decay, [1.0], (0.0, 1.0), rtol=1e-10, atol=1e-10)
    b = integrate(_decay, [1.0], (0.0, 1.0), rtol=1e-10, atol=1e-10)
    assert np.array_equal(a.y, b.y)


def test_linear_crossing_with_python_event():
    def field(t, y, args):
        return np.array([1.0, 0.0])

    tr = integrate(field, [-1.0, 0.0], (0.0, 3.0), events=[lambda t, y, args: y[0]])
    assert len(tr.events) == 1
    assert tr.events[0].t == pytest.approx(1.0, abs=1e-10)
    assert tr.events[0].direction == 1


def test_oscillator_third_upward_crossing():
    tr = integrate(_oscillator, [1.0, 0.0], (0.0, 40.0), rtol=1e-11, atol=1e-13, events=_first,
                   vector_events=True, directions=[1], stop_event=0, stop_count=3)
    # y1 = cos t rises through zero at 3 pi / 2 + 2 pi k
    assert tr.stopped
    assert [e.direction for e in tr.events] == [1, 1, 1]
    assert tr.t_final == pytest.approx(11 * math.pi / 2, abs=1e-8)
    assert tr.y_final[1] == pytest.approx(1.0, abs=1e-8)


def test_direction_filter_both_ways():
    tr = integrate(_oscillator, [1.0, 0.0], (0.0, 4 * math.pi), rtol=1e-11, atol=1e-13,
                   events=_first, vector_events=True, directions=[0])
    times = [e.t for e in tr.events]
    assert times == pytest.approx([(k + 0.5) * math.pi for k in range(4)], abs=1e-8)
    assert [e.direction for e in tr.events] == [-1, 1, -1, 1]


def test_event_suite_residuals_and_times():
    for name, res, terr in event_suite():
        assert res <= 1e-10, name
        assert terr <= 1e-8, name


def test_tangential_root_flagged_not_counted():
    # g = (t - pi)^3 changes sign with zero slope at the root
    @rhs
    def event(t, y, args):
        return np.array([(t - math.pi) ** 3])

    tr = integrate(_decay, [1.0], (0.0, 5.0), rtol=1e-10, atol=1e-12, events=event,
                   vector_events=True, stop_event=0)
    assert not tr.stopped
    assert tr.t_final == 5.0
    assert len(tr.events) == 1 and tr.events[0].tangential
    assert tr.events_of(0) == []
    assert len(tr.events_of(0, transversal_only=False)) == 1


def test_backward_integration():
    tr = integrate(_decay, [math.exp(-1.0)], (1.0, 0.0), rtol=1e-11, atol=1e-13)
    assert tr.y_final[0] == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.diff(tr.t) < 0)


@pytest.mark.parametrize("field, y0, exact, t_end", [
    (_decay, [1.0], lambda t: np.exp([-t]), 1.0),
    (_cosine, [0.0], lambda t: np.sin([t]), 5.0),
])
def test_order_with_exact_solution(field, y0, exact, t_end):
    assert abs(order_check(field, y0, exact, t_end=t_end) - NOMINAL_ORDER) <= 0.5


def test_full_system_self_convergence():
    assert abs(convergence_orders()["full system"] - NOMINAL_ORDER) <= 0.5


def test_error_shrinks_with_tolerance():
    errs = []
    for tol in (1e-6, 1e-8, 1e-10):
        tr = integrate(_oscillator, [1.0, 0.0], (0.0, 10.0), rtol=tol, atol=tol)
        errs.append(abs(tr.y_final[0] - math.cos(10.0)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-8


def test_determinism_bitwise():
    a = integrate(full_rhs, [0.1, 0.05, 0.3], (0.0, 200.0), args=BASE_ARGS)
    b = integrate(full_rhs, [0.1, 0.05, 0.3], (0.0, 200.0), args=BASE_ARGS)
    assert np.array_equal(a.t, b.t) and np.array_equal(a.y, b.y)


def test_steps_contiguous_and_increasing():
    tr = integrate(full_rhs, [0.1, 0.05, 0.3], (0.0, 200.0), args=BASE_ARGS)
    assert np.all(np.diff(tr.t) > 0)
    assert np.allclose(tr.t[:-1] + tr.h, tr.t[1:], rtol=0, atol=1e-12)


def test_dense_output_hits_step_endpoints():
    tr = integrate(full_rhs, [0.1, 0.05, 0.3], (0.0, 200.0), args=BASE_ARGS)
    for i in range(0, len(tr), max(1, len(tr) // 50)):
        # evaluate the interpolant of step i at its own right end
        theta_end = tr.t[i] + tr.h[i] * (1 - 1e-16)
        assert np.max(np.abs(tr(theta_end) - tr.y[i + 1])) <= 1e-13


def test_dense_output_interior_accuracy():
    tr = integrate(_oscillator, [1.0, 0.0], (0.0, 10.0), rtol=1e-10, atol=1e-12)
    ts = np.linspace(0.0, 10.0, 101)
    got = np.array([tr(t)[0] for t in ts])
    assert np.max(np.abs(got - np.cos(ts))) < 1e-7


def test_sample_includes_endpoints():
    tr = integrate(_decay, [1.0], (0.0, 2.0))
    ts, ys = tr.sample(4)
    assert ts[0] == 0.0 and ts[-1] == pytest.approx(2.0)
    assert len(ts) == 4 * len(tr) + 1
    assert np.allclose(ys[:, 0], np.exp(-ts), atol=1e-9)


@pytest.mark.parametrize("tol", [0.0, -1e-8, 0.1])
def test_bad_tolerances_rejected(tol):
    with pytest.raises(ValueError):
        integrate(_decay, [1.0], (0.0, 1.0), rtol=tol)
    with pytest.raises(ValueError):
        integrate(_decay, [1.0], (0.0, 1.0), atol=tol)


def test_vector_atol_validated_per_component():
    integrate(full_rhs, [0.1, 0.05, 0.3], (0.0, 1.0), atol=(1e-12, 1e-12, 1e-30), args=BASE_ARGS)
    with pytest.raises(ValueError):
        integrate(full_rhs, [0.1, 0.05, 0.3], (0.0, 1.0), atol=(1e-12, 0.5, 1e-12), args=BASE_ARGS)


def test_blowup_reports_underflow():
    with pytest.raises(StepSizeUnderflow) as info:
        integrate(_blowup, [1.0], (0.0, 2.0))
    assert info.value.t == pytest.approx(1.0, abs=1e-3)


def test_max_steps_exceeded():
    with pytest.raises(MaxStepsExceeded):
        integrate(_oscillator, [1.0, 0.0], (0.0, 1000.0), max_steps=10)


def test_failure_can_be_returned():
    tr = integrate(_oscillator, [1.0, 0.0], (0.0, 1000.0), max_steps=10, raise_on_failure=False)
    assert tr.t_final < 1000.0


def test_csv_dumps(tmp_path):
    tr = integrate(_oscillator, [1.0, 0.0], (0.0, 10.0), events=_first, vector_events=True)
    tr.to_csv(tmp_path / "traj.csv", ["x", "v"])
    tr.events_to_csv(tmp_path / "events.csv", ["x", "v"])
    with open(tmp_path / "traj.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "v"]
    assert len(rows) == len(tr.t) + 1
    assert float(rows[-1][0]) == tr.t_final
    with open(tmp_path / "events.csv") as fh:
        ev = list(csv.DictReader(fh))
    assert len(ev) == len(tr.events) == 3
    assert {int(r["direction"]) for r in ev} == {-1, 1}
    assert float(ev[0]["t"]) == tr.events[0].t
