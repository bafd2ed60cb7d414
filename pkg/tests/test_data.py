import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emsdistill.data import (SLOTS_PER_DAY, SLOTS_PER_WEEK, BatterySpec, TimeSeriesBundle, derive_battery_spec,
                             load_bundle, split_windows, synth_bundle, write_bundle)
from emsdistill.errors import DataError


def _write(tmp_path, rows_b, rows_p):
    b, p = tmp_path / "b.csv", tmp_path / "p.csv"
    b.write_text("timestamp,load_kwh,pv_kwh\n" + "".join(f"{r}\n" for r in rows_b))
    p.write_text("timestamp,price_eur_per_kwh\n" + "".join(f"{r}\n" for r in rows_p))
    return b, p


def _stamp(i):
    return f"2024-03-01T{i // 2:02d}:{30 * (i % 2):02d}:00+00:00"


def _bundle(load, pv, price=None):
    n = len(load)
    ts = np.datetime64("2024-01-01T00:00") + np.arange(n) * np.timedelta64(30, "m")
    return TimeSeriesBundle("b", ts, load, pv, np.full(n, 0.25) if price is None else price)


def test_load_one_day(tmp_path):
    b, p = _write(tmp_path, [f"{_stamp(i)},0.5,0.1" for i in range(48)], [f"{_stamp(i)},0.3" for i in range(48)])
    bundle = load_bundle(b, p)
    assert len(bundle) == 48
    assert bundle.building_id == "b"
    np.testing.assert_allclose(bundle.prosumption, 0.4, rtol=0, atol=2.0 ** -29)


def test_price_scale_and_intersection(tmp_path):
    b, p = _write(tmp_path, [f"{_stamp(i)},0.5,0.1" for i in range(10)],
                  [f"{_stamp(i)},300" for i in range(4, 20)])
    bundle = load_bundle(b, p, "x", price_scale=1e-3)
    assert len(bundle) == 6 and bundle.building_id == "x"
    np.testing.assert_allclose(bundle.price, 0.3)


def test_missing_price_slot_is_named(tmp_path):
    rows_p = [f"{_stamp(i)},0.3" for i in range(48) if i != 17]
    b, p = _write(tmp_path, [f"{_stamp(i)},0.5,0.1" for i in range(48)], rows_p)
    with pytest.raises(DataError, match="missing slot 2024-03-01T08:30"):
        load_bundle(b, p)


def test_duplicate_and_spacing_errors(tmp_path):
    rows = [f"{_stamp(i)},0.5,0.1" for i in range(5)]
    b, p = _write(tmp_path, rows[:3] + rows[2:], [f"{_stamp(i)},0.3" for i in range(5)])
    with pytest.raises(DataError, match="duplicate timestamp 2024-03-01T01:00"):
        load_bundle(b, p)
    b, p = _write(tmp_path, rows[:2] + ["2024-03-01T00:45:00+00:00,0.5,0.1"], [f"{_stamp(i)},0.3" for i in range(5)])
    with pytest.raises(DataError, match="non-30-minute spacing at 2024-03-01T00:45"):
        load_bundle(b, p)


def test_unparsable_row_reports_line(tmp_path):
    rows = [f"{_stamp(i)},0.5,0.1" for i in range(5)]
    rows[3] = f"{_stamp(3)},abc,0.1"
    b, p = _write(tmp_path, rows, [f"{_stamp(i)},0.3" for i in range(5)])
    with pytest.raises(DataError, match=r"b\.csv:5"):
        load_bundle(b, p)


def test_write_load_roundtrip(tmp_path):
    bundle = synth_bundle(3, 2, "default")
    write_bundle(bundle, tmp_path / "b.csv", tmp_path / "p.csv")
    back = load_bundle(tmp_path / "b.csv", tmp_path / "p.csv", bundle.building_id)
    assert np.array_equal(back.timestamps, bundle.timestamps)
    for f in ("load", "pv", "price"):
        assert np.array_equal(getattr(back, f), getattr(bundle, f))


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50)), min_size=1, max_size=60))
def test_prosumption_identity_exact(rows):
    load, pv = np.array(rows).T
    b = _bundle(load, pv)
    assert np.all(b.prosumption + b.pv - b.load == 0.0)


def test_derive_spec_examples():
    pv = np.zeros(96)
    load = np.zeros(96)
    pv[10], pv[60] = 4.0, 6.0
    spec = derive_battery_spec(_bundle(load, pv))
    assert spec.capacity_max == 5.0 and spec.power_max == 1.25 and spec.initial_soe == 0.0

    pv = np.zeros(48)
    pv[20] = pv[21] = 1.0
    assert derive_battery_spec(_bundle(np.zeros(48), pv)).capacity_max == 2.0

    with pytest.raises(DataError, match="building has no PV surplus; supply explicit spec"):
        derive_battery_spec(_bundle(np.ones(48), np.zeros(48)))


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_derive_spec_invariant_under_repeating_a_day(seed, k):
    rng = np.random.default_rng(seed)
    load = rng.uniform(0, 1, 48)
    pv = rng.uniform(0, 2, 48)
    one = derive_battery_spec(_bundle(load, pv))
    many = derive_battery_spec(_bundle(np.tile(load, k), np.tile(pv, k)))
    assert one == many


def test_split_windows_examples():
    b = synth_bundle(0, 70)
    train, ev = split_windows(b)
    assert (len(train), len(ev)) == (2016, 1344)
    assert np.array_equal(np.concatenate([train.timestamps, ev.timestamps]), b.timestamps)
    with pytest.raises(DataError, match="need 1392 slots.*have 1344"):
        split_windows(synth_bundle(0, 28))
    train, ev = split_windows(synth_bundle(0, 14), eval_weeks=1)
    assert (len(train), len(ev)) == (336, 336)


def test_synth_properties():
    a, b = synth_bundle(7, 7), synth_bundle(7, 7)
    assert all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("load", "pv", "price"))
    flat = synth_bundle(1, 2, "flat")
    assert np.all(flat.load == 1.0) and np.all(flat.pv == 0.0) and np.all(flat.price == 0.2)
    hours = (np.arange(len(a)) % SLOTS_PER_DAY) / 2
    assert np.all(a.pv[hours < 6] == 0.0)
    assert np.all(a.load >= 0) and np.all(a.pv >= 0)
    with pytest.raises(DataError):
        synth_bundle(0, 0)


def test_battery_spec_validation():
    assert BatterySpec(4.0, 1.0).action_bound == 0.5
    with pytest.raises(DataError):
        BatterySpec(4.0, 1.0, initial_soe=5.0)
    with pytest.raises(DataError):
        BatterySpec(-1.0, 1.0)


def test_bundle_rejects_gaps():
    ts = np.datetime64("2024-01-01T00:00") + np.array([0, 30, 90]) * np.timedelta64(1, "m")
    with pytest.raises(DataError):
        TimeSeriesBundle("x", ts, np.ones(3), np.zeros(3), np.ones(3))
    assert SLOTS_PER_WEEK == 336
