import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aqmlab.controllers import (Ared, Constant, Controller, DropTail, Irbf, Pi, Rbf, Rem,
                                PRESET_IRBF_GAIN, ared_update, compile_controller,
                                controller_from_dict, controller_tick, controller_to_dict,
                                droptail, irbf_eval, named_controllers, pi_update,
                                preset_controllers, rbf_eval, rem_update)
from aqmlab.fluid_model import NetworkParams, SimState
from oracles import gaussian_sum

NOMINAL = NetworkParams()


def obs(q, t=0.0, w=2.25):
    return SimState(w, q, t)


# -------------------------------------------------------------- validation

@pytest.mark.parametrize("make", [
    lambda: Rbf(weights=(), centers=(), spreads=()),
    lambda: Rbf(weights=(1.0,), centers=(0.0,), spreads=(0.0,)),
    lambda: Rbf(weights=(1.0,), centers=(math.inf,), spreads=(1.0,)),
    lambda: Rbf(weights=(1.0, 2.0), centers=(0.0,), spreads=(1.0,)),
    lambda: Rbf(sample_period=0.0),
    lambda: Irbf(integral_gain=math.nan),
    lambda: Rem(phi=1.0),
    lambda: Rem(gamma=0.0),
    lambda: Ared(min_th=200, max_th=100),
    lambda: Pi(sample_period=-1.0),
    lambda: DropTail(buffer_limit=0.0),
])
def test_invalid_configs_rejected(make):
    with pytest.raises(ValueError):
        make()


def test_unknown_scheme_rejected_at_construction():
    with pytest.raises(TypeError):
        compile_controller(object(), NOMINAL)
    with pytest.raises(ValueError, match="unknown controller scheme"):
        controller_from_dict({"scheme": "fuzzy"})


def test_six_presets():
    presets = preset_controllers()
    assert list(presets) == ["rbf", "irbf", "pi", "rem", "ared", "droptail"]
    assert presets["rbf"].weights == (-1.0, -1.0, 0.3397, 0.3372, 1.0)
    assert presets["irbf"].integral_gain == PRESET_IRBF_GAIN
    assert presets["pi"].a == 1.822e-5 and presets["pi"].b == 1.816e-5
    assert set(named_controllers()) >= set(presets) | {"rbf_fluid", "irbf_fluid"}


def test_dict_round_trip():
    for cfg in named_controllers().values():
        assert controller_from_dict(controller_to_dict(cfg)) == cfg


# --------------------------------------------------------------------- RBF

def test_rbf_peak_at_isolated_center():
    cfg = Rbf(weights=(0.7, -0.2, 0.4), centers=(-1000.0, 0.0, 1000.0), spreads=(5.0,) * 3)
    assert rbf_eval(-1000.0, cfg) == pytest.approx(0.7, abs=1e-12)
    assert rbf_eval(1000.0, cfg) == pytest.approx(0.4, abs=1e-12)


def test_rbf_preset_at_zero_error():
    expected = 0.3397 + (-1 + 0.3372) * math.exp(-75 ** 2 / 1600) + (-1 + 1) * math.exp(-150 ** 2 / 1600)
    assert rbf_eval(0.0, Rbf()) == pytest.approx(expected, rel=1e-14)
    assert rbf_eval(0.0, Rbf()) == pytest.approx(0.3200, abs=5e-5)


def test_rbf_zero_weights():
    cfg = Rbf(weights=(0.0,) * 5)
    for e in (-300.0, -12.5, 0.0, 40.0, 150.0):
        assert rbf_eval(e, cfg) == 0.0


def test_rbf_variance_reading():
    cfg = Rbf(weights=(1.0,), centers=(0.0,), spreads=(40.0,), spread_mode="variance")
    assert rbf_eval(10.0, cfg) == pytest.approx(math.exp(-100 / 40), rel=1e-15)


def _rbf_cases():
    k = st.integers(1, 8)
    return k.flatmap(lambda n: st.tuples(
        st.floats(-400, 400),
        st.lists(st.floats(-5, 5), min_size=n, max_size=n),
        st.lists(st.floats(-300, 300), min_size=n, max_size=n),
        st.lists(st.floats(1.0, 200.0), min_size=n, max_size=n)))


@settings(max_examples=200, deadline=None)
@given(_rbf_cases())
def test_rbf_matches_gaussian_oracle(case):
    e, w, c, s = case
    got = rbf_eval(e, Rbf(weights=w, centers=c, spreads=s))
    want = gaussian_sum(e, w, c, s)
    # the tolerance is relative to the magnitude of the summed terms
    scale = math.fsum(abs(wi) * math.exp(-(((e - ci) / si) ** 2)) for wi, ci, si in zip(w, c, s))
    assert abs(got - want) <= 1e-12 * max(scale, 1e-300)


@settings(max_examples=50, deadline=None)
@given(_rbf_cases(), st.floats(0.01, 100.0))
def test_rbf_linear_in_weights(case, lam):
    e, w, c, s = case
    base = rbf_eval(e, Rbf(weights=w, centers=c, spreads=s))
    scaled = rbf_eval(e, Rbf(weights=[lam * x for x in w], centers=c, spreads=s))
    assert scaled == pytest.approx(lam * base, rel=1e-12, abs=1e-300)


def test_rbf_pure():
    assert rbf_eval(17.3, Rbf()) == rbf_eval(17.3, Rbf())


# -------------------------------------------------------------------- IRBF

def test_irbf_without_integral_is_rbf():
    cfg = Irbf()
    assert irbf_eval(33.0, 0.0, cfg) == rbf_eval(33.0, cfg)


def test_irbf_preset_gain_example():
    cfg = Irbf(weights=(0.32,), centers=(0.0,), spreads=(1e9,), integral_gain=7.0813e-4)
    raw = irbf_eval(0.0, 1000.0, cfg)
    assert raw == pytest.approx(1.02813, abs=1e-9)
    ctl = Controller(cfg, NOMINAL)
    ctl.memory[0] = 1000.0
    assert ctl.tick(obs(150.0)) == 1.0


def test_irbf_integral_grows_linearly_under_constant_error():
    cfg = Irbf(weights=(0.0,) * 5, integral_gain=1e-6)
    ctl = Controller(cfg, NOMINAL)
    outs = [ctl.tick(obs(170.0, t=k * cfg.sample_period)) for k in range(50)]
    assert ctl.integral == pytest.approx(50 * 20.0 * cfg.sample_period)
    assert np.allclose(np.diff(outs), 1e-6 * 20.0 * cfg.sample_period)


def test_irbf_anti_windup_bounds_integral():
    cfg = Irbf(weights=(1.0,) * 5, integral_gain=1e-2)
    ctl = Controller(cfg, NOMINAL)
    for k in range(20000):
        p = ctl.tick(obs(300.0, t=k * cfg.sample_period))
        assert p == 1.0
    assert ctl.integral <= 1e-9
    # pushing back out of saturation integrates again
    ctl.tick(obs(0.0))
    assert ctl.integral < 0


# ---------------------------------------------------------------------- PI

def test_pi_holds_at_target():
    ctl = Controller(Pi(), NOMINAL)
    ctl.memory[:2] = [0.3, 0.0]
    assert pi_update(150.0, ctl) == 0.3
    assert pi_update(150.0, ctl) == 0.3


def test_pi_constant_offset_increment():
    ctl = Controller(Pi(), NOMINAL)
    p1 = pi_update(250.0, ctl)
    p2 = pi_update(250.0, ctl)
    p3 = pi_update(250.0, ctl)
    assert p3 - p2 == pytest.approx((1.822e-5 - 1.816e-5) * 100, rel=1e-6)
    assert p1 > 0


def test_pi_floor():
    ctl = Controller(Pi(), NOMINAL)
    for _ in range(100):
        assert pi_update(10.0, ctl) == 0.0


@given(st.floats(0, 300), st.floats(0, 1))
def test_pi_constant_queue_fixed_point_only_at_target(q, p0):
    # a constant queue leaves p unchanged only when q = q_d (or p is pinned by saturation)
    ctl = Controller(Pi(), NOMINAL)
    ctl.memory[:2] = [p0, q - 150.0]
    p = pi_update(q, ctl)
    if p == p0 and 0 < p0 < 1:
        assert q == pytest.approx(150.0, abs=1e-6)


# --------------------------------------------------------------------- REM

def test_rem_zero_price_at_balance():
    ctl = Controller(Rem(), NOMINAL)
    assert rem_update(150.0, 1250.0, ctl) == 0.0


def test_rem_price_to_probability():
    ctl = Controller(Rem(), NOMINAL)
    ctl.memory[0] = 100.0
    assert rem_update(150.0, 1250.0, ctl) == pytest.approx(1 - 1.001 ** -100, rel=1e-12)
    assert 1 - 1.001 ** -100 == pytest.approx(0.0952, abs=1e-4)


def test_rem_price_rises_with_backlog():
    ctl = Controller(Rem(), NOMINAL)
    prices = []
    for _ in range(20):
        rem_update(200.0, 1250.0, ctl)
        prices.append(ctl.price)
    assert all(b > a for a, b in zip(prices, prices[1:]))


@given(st.lists(st.tuples(st.floats(0, 300), st.floats(0, 5000)), min_size=1, max_size=50))
def test_rem_price_never_negative(seq):
    ctl = Controller(Rem(), NOMINAL)
    for q, a in seq:
        p = rem_update(q, a, ctl)
        assert ctl.price >= 0.0 and 0.0 <= p <= 1.0


# -------------------------------------------------------------------- ARED

def test_ared_below_min_th():
    ctl = Controller(Ared(), NOMINAL)
    assert ared_update(90.0, ctl) == 0.0


def test_ared_midpoint():
    ctl = Controller(Ared(), NOMINAL)
    ctl.memory[0] = 157.5
    assert ared_update(157.5, ctl, t=0.0) == pytest.approx(0.05, rel=1e-12)


def test_ared_gentle_region():
    ctl = Controller(Ared(), NOMINAL)
    ctl.memory[0] = 250.0
    p = ared_update(250.0, ctl, t=0.0)
    assert p == pytest.approx(0.1 + 0.9 * (250 - 215) / 215, rel=1e-12)
    ctl.memory[0] = 430.0
    assert ared_update(430.0, ctl, t=0.0) == 1.0


def test_ared_max_p_adapts_and_stays_bounded():
    ctl = Controller(Ared(), NOMINAL)
    ctl.memory[0] = 200.0
    for k in range(2000):
        ared_update(200.0, ctl, t=k * 0.5)
    assert ctl.max_p == pytest.approx(0.5)
    for k in range(2000, 4000):
        ared_update(0.0, ctl, t=k * 0.5)
    assert ctl.max_p == pytest.approx(0.01)


@given(st.lists(st.floats(0, 300), min_size=1, max_size=80))
def test_ared_average_is_convex_combination(qs):
    ctl = Controller(Ared(), NOMINAL)
    ctl.memory[0] = qs[0]
    for q in qs:
        ared_update(q, ctl)
        assert min(qs) - 1e-9 <= ctl.average_queue <= max(qs) + 1e-9


# ---------------------------------------------------------------- DropTail

@pytest.mark.parametrize("q, expected", [(0.0, 0.0), (300.0, 1.0), (299.0, 0.0)])
def test_droptail(q, expected):
    assert droptail(q, DropTail(), NOMINAL) == expected
    assert Controller(DropTail(), NOMINAL).tick(obs(q)) == expected


def test_droptail_needs_a_limit():
    with pytest.raises(ValueError):
        droptail(10.0, DropTail())


# ---------------------------------------------------------------- dispatch

def test_zero_weight_rbf_emits_zero():
    ctl = Controller(Rbf(weights=(0.0,) * 5), NOMINAL)
    assert all(controller_tick(obs(q), ctl) == 0.0 for q in np.linspace(0, 300, 31))


@given(st.floats(0, 300))
def test_dispatch_matches_saturated_rbf(q):
    cfg = Rbf()
    ctl = Controller(cfg, NOMINAL)
    assert controller_tick(obs(q), ctl) == min(max(rbf_eval(q - 150.0, cfg), 0.0), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(named_controllers())),
       st.lists(st.tuples(st.floats(0, 300), st.floats(0, 5000)), min_size=1, max_size=40))
def test_every_output_is_a_probability(name, seq):
    ctl = Controller(named_controllers()[name], NOMINAL)
    for k, (q, a) in enumerate(seq):
        p = ctl.tick(SimState(1.0, q, k * ctl.period), arrival_rate=a)
        assert 0.0 <= p <= 1.0


def test_constant_controller():
    assert Controller(Constant(0.25), NOMINAL).tick(obs(10.0)) == 0.25
    assert Controller(Constant(3.0), NOMINAL).tick(obs(10.0)) == 1.0
