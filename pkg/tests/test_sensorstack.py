import itertools
import statistics

import pytest
from hypothesis import given, strategies as st

from sensormux.sensorstack import (
    BUNDLED_PROFILES,
    DROPPED,
    MAX_FREQUENCY,
    PER_APP_ENFORCED,
    QUANTIZED_SDK,
    DeviceProfile,
    DuplicateHandle,
    JitterModel,
    MultiplexPolicy,
    NoListeners,
    ProfileError,
    ResponseModel,
    SensorSpec,
    SensorStack,
    SensorType,
    UnknownHandle,
    UnsupportedSensor,
    batching_band,
    clamp_request,
    get_sensor_list,
    load_profile,
    profile_from_dict,
    request_class,
)
from sensormux.simcore import Engine

AC, GR, GY, LA, MF, RV = SensorType

ACCURATE = SensorSpec(AC, 2500, 200000)
TOY = DeviceProfile("toy", {AC: ACCURATE})


def gaps(ts):
    return [b - a for a, b in zip(ts, ts[1:])]


def collect(stack, app, sensor, period):
    seen = []
    h = stack.register_listener(app, sensor, period, lambda ev: seen.append(ev))
    return h, seen


# -- profiles and sensor lists ----------------------------------------------

def test_sensor_lists(poco, moto):
    assert [s.sensor for s in get_sensor_list(poco)] == list(SensorType)
    assert MF not in [s.sensor for s in get_sensor_list(moto)]
    assert get_sensor_list(DeviceProfile("empty", {})) == []


def test_bundled_profiles_load():
    for name in BUNDLED_PROFILES:
        assert load_profile(name).name == name


def test_profile_file_errors(tmp_path):
    with pytest.raises(ProfileError):
        load_profile(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text('schema_version = 1\nname = "x"\n[sensors.AC]\nmin_period_us = 5\nmax_period_us = 1\n')
    with pytest.raises(ProfileError):
        load_profile(bad)


def test_profile_from_dict_round_trip():
    doc = {"schema_version": 1, "name": "mini",
           "sensors": {"AC": {"min_period_us": 1000, "max_period_us": 100000}}}
    prof = profile_from_dict(doc)
    assert prof.spec(AC).max_period_us == 100000
    assert not prof.supports(MF)


def test_response_model_invariants():
    with pytest.raises(ProfileError):
        ResponseModel.step([])
    with pytest.raises(ProfileError):
        ResponseModel.step([3, 2])
    with pytest.raises(ProfileError):
        SensorSpec(AC, 10000, 10000, response=ResponseModel.single(50000))
    with pytest.raises(ProfileError):
        JitterModel(relative_sigma=0.5)


# -- clamping ------------------------------------------------------------------

def test_clamp_examples(poco):
    ac = poco.spec(AC)
    assert clamp_request(ac, 1000) == 2500
    assert clamp_request(ac, 10000) == 10000
    assert clamp_request(ac, 500000) == 198600


def test_step_response_oversamples(poco):
    got = clamp_request(poco.spec(GR), 40000)
    assert got <= 40000
    assert got >= 40000 * 0.6


def test_single_frequency_ignores_request(moto):
    for req in (1000, 10000, 66667, 200000):
        assert clamp_request(moto.spec(LA), req) == pytest.approx(9900, rel=0.01)


def test_fast_request_respects_rate_cap():
    spec = SensorSpec(AC, 500, 100000)
    cls, base = request_class(spec, 100)
    assert cls == "fast" and base == 910


def test_unsupported_sensor_rejected(moto):
    with pytest.raises(UnsupportedSensor):
        SensorStack(moto).register_listener("a", MF, 20000)
    with pytest.raises(UnsupportedSensor):
        clamp_request(SensorSpec(MF, 1, 1, supported=False), 10)


@given(st.integers(1, 2_000_000))
def test_clamped_period_inside_its_band(req):
    for name in BUNDLED_PROFILES:
        for spec in get_sensor_list(load_profile(name)):
            lo, hi = batching_band(spec, req)
            assert lo <= clamp_request(spec, req) <= hi


# -- multiplexing -------------------------------------------------------------

def test_max_frequency_shares_fastest_stream():
    stack = SensorStack(TOY)
    _, a = collect(stack, "A", AC, 10000)
    _, b = collect(stack, "B", AC, 20000)
    stack.engine.run_until(1_000_000)
    assert set(gaps([e.timestamp for e in a])) == {10000}
    assert [e.timestamp for e in a] == [e.timestamp for e in b]


def test_per_app_isolates_rates():
    stack = SensorStack(TOY, policy=PER_APP_ENFORCED)
    ha, a = collect(stack, "A", AC, 10000)
    hb, b = collect(stack, "B", AC, 20000)
    stack.engine.run_until(1_000_000)
    assert set(gaps([e.timestamp for e in a])) == {10000}
    assert set(gaps([e.timestamp for e in b])) == {20000}
    assert stack.effective_period(AC, ha) == 10000
    with pytest.raises(ValueError):
        stack.effective_period(AC)


def test_per_app_unaffected_by_churn():
    stack = SensorStack(TOY, policy=PER_APP_ENFORCED)
    _, b = collect(stack, "B", AC, 20000)
    eng = stack.engine
    eng.run_until(200_000)
    h = stack.register_listener("A", AC, 2500)
    eng.run_until(400_000)
    stack.unregister_listener(h)
    eng.run_until(600_000)
    assert set(gaps([e.timestamp for e in b])) == {20000}


def test_quantized_policy_rounds_to_allowed_periods():
    stack = SensorStack(TOY, policy=QUANTIZED_SDK)
    stack.register_listener("A", AC, 30000)
    assert stack.effective_period(AC) == 66667
    stack.register_listener("B", AC, 5000)
    assert stack.effective_period(AC) == 20000
    assert MultiplexPolicy.parse("quantized:1000,5000").allowed == (1000, 5000)


def test_effective_period_min_of_listeners():
    stack = SensorStack(TOY)
    for i, p in enumerate((100000, 50000, 25000)):
        stack.register_listener(f"a{i}", AC, p)
    assert stack.effective_period(AC) == 25000


def test_unregister_semantics():
    stack = SensorStack(TOY)
    fast = stack.register_listener("A", AC, 10000)
    slow, seen = collect(stack, "B", AC, 40000)
    eng = stack.engine
    eng.run_until(100_000)
    stack.unregister_listener(fast)
    assert stack.effective_period(AC) == 40000
    eng.run_until(500_000)
    assert gaps([e.timestamp for e in seen])[-3:] == [40000] * 3
    stack.unregister_listener(slow)
    n = len(seen)
    eng.run_until(2_000_000)
    assert len(seen) == n
    with pytest.raises(NoListeners):
        stack.effective_period(AC)
    with pytest.raises(UnknownHandle):
        stack.unregister_listener(slow)


def test_duplicate_registration_rejected():
    stack = SensorStack(TOY)
    stack.register_listener("A", AC, 10000)
    with pytest.raises(DuplicateHandle):
        stack.register_listener("A", AC, 20000)


def test_retune_lands_on_new_grid_after_last_event():
    stack = SensorStack(TOY)
    _, seen = collect(stack, "A", AC, 100000)
    eng = stack.engine
    eng.run_until(250_000)  # events at 100k and 200k
    stack.register_listener("B", AC, 30000)
    eng.run_until(400_000)
    ts = [e.timestamp for e in seen]
    assert ts[:4] == [100000, 200000, 260000, 290000]


def _oracle(requests, spec):
    return clamp_request(spec, min(requests))


def test_exhaustive_effective_period_oracle(poco):
    grid = (3000, 40000, 500000)
    for sensor in (AC, GR, RV):
        spec = poco.spec(sensor)
        for n in (1, 2, 3):
            for combo in itertools.product(grid, repeat=n):
                stack = SensorStack(poco)
                for i, p in enumerate(combo):
                    stack.register_listener(f"a{i}", sensor, p)
                assert stack.effective_period(sensor) == _oracle(combo, spec)


# -- emission -----------------------------------------------------------------

def test_noiseless_gaps_exact():
    stack = SensorStack(TOY)
    stack.register_listener("A", AC, 10000)
    ts = [stack.emit_next(AC).timestamp for _ in range(50)]
    assert set(gaps(ts)) == {10000}


def test_mf_jitter_within_half_percent(poco):
    stack = SensorStack(poco, Engine(1))
    _, seen = collect(stack, "A", MF, 10000)
    stack.engine.run_until(5_000_000)
    g = [b.timestamp - a.timestamp for a, b in zip(seen, seen[1:]) if b.seq == a.seq + 1]
    assert statistics.pstdev(g) / statistics.fmean(g) < 0.006


def test_all_dropped_delivers_nothing():
    spec = SensorSpec(AC, 2500, 200000, jitter=JitterModel(drop_base=1.0))
    stack = SensorStack(DeviceProfile("lossy", {AC: spec}))
    _, seen = collect(stack, "A", AC, 10000)
    assert all(stack.emit_next(AC) is DROPPED for _ in range(20))
    assert seen == []


def test_fifo_and_seq_monotone(poco):
    stack = SensorStack(poco, Engine(5))
    _, a = collect(stack, "A", AC, 2500)
    _, b = collect(stack, "B", AC, 50000)
    stack.engine.run_until(3_000_000)
    for seen in (a, b):
        assert all(x.timestamp < y.timestamp and x.seq < y.seq for x, y in zip(seen, seen[1:]))
    assert len(a) > 1000


def test_coupled_sensor_follows_primary():
    gy = SensorSpec(GY, 5000, 200000)
    rv = SensorSpec(RV, 5000, 200000, couples_to=GY)
    stack = SensorStack(DeviceProfile("c", {GY: gy, RV: rv}))
    stack.register_listener("obs", GY, 200000)
    h = stack.register_listener("v", RV, 20000)
    assert stack.effective_period(GY) == 20000
    stack.unregister_listener(h)
    assert stack.effective_period(GY) == 200000
