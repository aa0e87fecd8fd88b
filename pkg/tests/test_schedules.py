import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedsim.errors import InvalidSchedule
from fedsim.schedules import (
    Schedule,
    const_sqrt,
    experiment_decay,
    experiment_grid,
    mass_const,
    mass_to_three_sequence,
    nesterov_scvx,
    overparam_const,
    scvx_decay,
    three_sequence_to_mass,
)


# ---------------------------------------------------------------- strongly convex decay


def test_scvx_decay_examples():
    assert scvx_decay(1, 2, 10, 0) == 1 / 256
    assert scvx_decay(1, 1, 100, 0) == 1 / 400


def test_scvx_decay_rejects_bad_mu():
    with pytest.raises(InvalidSchedule):
        scvx_decay(0, 2, 1, 0)
    with pytest.raises(InvalidSchedule):
        scvx_decay(1, 0.5, 1, 0)


def test_scvx_decay_halving_window():
    a = [scvx_decay(0.1, 50, 5, t) for t in range(10_006)]
    assert all(a[t] <= 2 * a[t + 5] for t in range(10_001))
    assert all(x >= y for x, y in zip(a, a[1:]))


@given(st.floats(1e-3, 1e3), st.floats(1.0, 1e3))
def test_scvx_first_step_below_eighth_of_inverse_smoothness(mu, kappa):
    L = kappa * mu
    assert scvx_decay(mu, kappa, 1, 0) <= 1 / (8 * L) * (1 + 1e-12)


def test_nesterov_example():
    alpha, beta = nesterov_scvx(1, 1, 1, 0)  # gamma = 32
    assert alpha == 0.1875
    assert beta == pytest.approx(3 / 364, rel=1e-15)


def test_nesterov_beta_below_alpha():
    for t in range(10_001):
        alpha, beta = nesterov_scvx(0.5, 3, 4, t)
        assert beta <= alpha


def test_nesterov_mu_factor():
    _, b1 = nesterov_scvx(1.0, 1.0, 1, 5)
    _, b2 = nesterov_scvx(2.0, 1.0, 1, 5)  # gamma depends on kappa only
    assert b2 == pytest.approx(b1 / 2)


def test_nesterov_small_offset_rejected():
    with pytest.raises(InvalidSchedule):
        nesterov_scvx(1.0, 1.0 / 32, 1, 0)  # gamma = 1


# ---------------------------------------------------------------- constant schedules


def test_const_sqrt_examples():
    assert const_sqrt(4, 10_000) == pytest.approx(0.02)
    assert const_sqrt(4, 20_000) == pytest.approx(0.02 / math.sqrt(2))
    with pytest.raises(InvalidSchedule):
        const_sqrt(8, 4)


def test_const_sqrt_clamp(caplog):
    assert const_sqrt(4, 10_000, L=100) == 0.0025
    assert "clamping" in caplog.text


def test_overparam_const_examples():
    assert overparam_const(1, 1, 4, 1, 1, 1, c=0.5) == 1 / 8
    assert overparam_const(2, 8, 10, 1, 1, 1, 0.25) == overparam_const(1, 8, 10, 1, 1, 1, 0.25) / 2
    assert overparam_const(1, 8, 10, 1, 1, 1, 0.25) == pytest.approx(2 / 17)


def test_overparam_const_validation():
    with pytest.raises(InvalidSchedule):
        overparam_const(1, 1, 0, 1, 1, 1)
    with pytest.raises(InvalidSchedule):
        overparam_const(1, 1, 1, 1, 1, 1, c=1.5)


def test_mass_const_examples():
    e1, e2, g = mass_const(1, 1, 4, 1, 1, 1, 1, 1)
    assert e2 == 0 and g == 0
    _, e2, g = mass_const(1, 1, 4, 1, 1, 1, 16, 1)
    assert g == pytest.approx(0.6) and e2 == 0
    e1, e2, g = mass_const(1, 1, 4, 1, 1, 1, 16, 4)
    assert g == pytest.approx(7 / 9)
    assert e2 == pytest.approx(2 / 3 * e1)


def test_mass_const_rejects_small_kappa():
    with pytest.raises(InvalidSchedule):
        mass_const(1, 1, 4, 1, 1, 1, 16, 0.5)


@given(st.floats(1.0, 1e4), st.floats(1.0 + 1e-6, 1e4))
def test_mass_eta2_below_eta1(k1, kt):
    e1, e2, g = mass_const(1, 4, 3, 1, 1, 1, max(k1, kt), kt)
    assert 0 <= e2 < e1 and 0 <= g < 1


# ---------------------------------------------------------------- three-sequence form


def test_bijection_examples():
    a, delta, eta = mass_to_three_sequence(0.3, 0.0, 0.5)
    assert delta == pytest.approx(eta / a)
    a, delta, eta = mass_to_three_sequence(0.3, 0.05, 0.0)
    assert a == 1 and delta == pytest.approx(0.3 - 2 * 0.05)
    with pytest.raises(InvalidSchedule):
        mass_to_three_sequence(0.3, 0.0, 1.0)


@given(st.floats(1e-4, 10), st.floats(0, 5), st.floats(0, 0.999))
def test_bijection_round_trip(eta1, eta2, gamma):
    back = three_sequence_to_mass(*mass_to_three_sequence(eta1, eta2, gamma))
    np.testing.assert_allclose(back, (eta1, eta2, gamma), rtol=1e-14, atol=1e-14 * max(1, eta1, eta2))


# ---------------------------------------------------------------- experiment protocol


def test_experiment_decay_examples():
    # at c = 2^-20 the decay term is n c = 0.0474..., below eta0
    assert experiment_decay(32, 49749, 2.0**-20, 0) == 49749 * 2.0**-20
    assert experiment_decay(32, 49749, 2.0**-10, 0) == 32
    assert experiment_decay(0.1, 10**6, 1.0, 5) == 0.1
    vals = [experiment_decay(1, 100, 0.5, t) for t in range(500)]
    assert all(x >= y for x, y in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(50 / 500)


def test_experiment_grid():
    grid = experiment_grid()
    assert len(grid) == 10
    assert (32.0, 1 / 32) in grid and (1.0, 1 / 2) in grid
    reg = experiment_grid((0.1, 0.12), 1 / 256)
    assert (0.12, 1 / 1024) in reg


# ---------------------------------------------------------------- Schedule wrapper


@pytest.mark.parametrize(
    "kind, params",
    [
        ("scvx_decay", {"mu": 0.1, "kappa": 10, "E": 4}),
        ("nesterov_scvx_decay", {"mu": 0.1, "kappa": 10, "E": 4}),
        ("const_sqrt", {"scale": 4, "T": 1000}),
        ("overparam_const", {"E": 2, "N": 4, "l": 3, "L_or_mu": 1, "nu_max": 1, "nu_min": 1}),
        (
            "mass_const",
            {"E": 2, "N": 4, "l": 3, "mu": 0.5, "nu_max": 1, "nu_min": 1, "kappa1": 6, "kappa_tilde": 2},
        ),
        ("experiment_decay", {"eta0": 1, "n": 100, "c": 0.125}),
        ("fixed", {"alpha": 0.1, "beta": 0.2}),
    ],
)
def test_schedule_kinds_emit_positive_finite(kind, params):
    sch = Schedule(kind, params)
    for t in range(0, 2000, 7):
        sp_ = sch.at(t)
        assert sp_.alpha > 0 and math.isfinite(sp_.alpha)
        assert sp_.beta >= 0 and sp_.eta2 >= 0 and 0 <= sp_.mass_gamma < 1
        assert sch.at(t) == sp_
    assert Schedule.from_dict(sch.to_dict()) == sch


def test_schedule_nesterov_uses_next_beta():
    sch = Schedule("nesterov_scvx_decay", {"mu": 1, "kappa": 1, "E": 1})
    assert sch.at(0).alpha == nesterov_scvx(1, 1, 1, 0)[0]
    assert sch.at(0).beta == nesterov_scvx(1, 1, 1, 1)[1]


def test_schedule_validation():
    with pytest.raises(InvalidSchedule):
        Schedule("nope", {})
    with pytest.raises(InvalidSchedule):
        Schedule("fixed", {})
    with pytest.raises(InvalidSchedule):
        Schedule("fixed", {"alpha": 0.1, "bogus": 1})
    with pytest.raises(InvalidSchedule):
        Schedule("fixed", {"alpha": -0.1})
    with pytest.raises(InvalidSchedule):
        Schedule.from_dict({"kind": "fixed", "params": {"alpha": 1}, "extra": 0})


def test_mass_schedule_reports_descent_step():
    sch = Schedule(
        "mass_const",
        {"E": 1, "N": 1, "l": 4, "mu": 1, "nu_max": 1, "nu_min": 1, "kappa1": 16, "kappa_tilde": 4},
    )
    sp_ = sch.at(3)
    assert sp_.descent == sp_.eta1 == 1 / 16
    assert sp_.mass_gamma == pytest.approx(7 / 9)
