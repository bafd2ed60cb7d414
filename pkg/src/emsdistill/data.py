"""Building/price time series: CSV ingest, battery sizing, splits, synthetic data.

All series are 30-minute slots. Energy values are kWh per slot, prices
EUR/kWh. Load files given in kW instead of kWh cannot be told apart from the
numbers alone; that mistake goes through undetected.

Battery energies (capacity, SoE, actions) live on a binary lattice of
``ENERGY_QUANTUM`` kWh. Sums and differences of lattice values are exact in
float64, which keeps SoE bookkeeping free of rounding drift.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DataError

SLOT_MINUTES = 30
SLOTS_PER_DAY = 48
SLOTS_PER_WEEK = 7 * SLOTS_PER_DAY
ENERGY_QUANTUM = 2.0 ** -30
_SLOT = np.timedelta64(SLOT_MINUTES, "m")


def snap_energy(x):
    """Round kWh values to the energy lattice (exact operations only)."""
    scale = 1.0 / ENERGY_QUANTUM
    if np.ndim(x) == 0:
        return float(np.round(float(x) * scale) / scale)
    return np.round(np.asarray(x, dtype=np.float64) * scale) / scale


@dataclass
class TimeSeriesBundle:
    building_id: str
    timestamps: np.ndarray  # datetime64[m], UTC
    load: np.ndarray
    pv: np.ndarray
    price: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[m]")
        # energies live on the 2^-30 kWh lattice so sums and differences are exact
        self.load = snap_energy(np.asarray(self.load, dtype=np.float64))
        self.pv = snap_energy(np.asarray(self.pv, dtype=np.float64))
        self.price = np.asarray(self.price, dtype=np.float64)
        n = len(self.timestamps)
        if not (len(self.load) == len(self.pv) == len(self.price) == n):
            raise DataError(f"{self.building_id}: series lengths differ "
                            f"({n}, {len(self.load)}, {len(self.pv)}, {len(self.price)})")
        if n > 1:
            steps = np.diff(self.timestamps)
            bad = np.nonzero(steps != _SLOT)[0]
            if bad.size:
                raise DataError(f"{self.building_id}: non-30-minute spacing after {_iso(self.timestamps[bad[0]])}")

    def __len__(self):
        return len(self.timestamps)

    @property
    def prosumption(self) -> np.ndarray:
        """Net grid demand per slot, ``load - pv``; positive means import."""
        return self.load - self.pv

    def window(self, start: int, stop: int) -> "TimeSeriesBundle":
        return TimeSeriesBundle(self.building_id, self.timestamps[start:stop], self.load[start:stop],
                                self.pv[start:stop], self.price[start:stop])


@dataclass
class BatterySpec:
    capacity_max: float
    power_max: float
    initial_soe: float = 0.0

    def __post_init__(self):
        self.capacity_max = snap_energy(self.capacity_max)
        self.initial_soe = snap_energy(self.initial_soe)
        if not self.capacity_max >= 0 or not self.power_max >= 0:
            raise DataError(f"battery limits must be non-negative: {self}")
        if not 0.0 <= self.initial_soe <= self.capacity_max:
            raise DataError(f"initial_soe {self.initial_soe} outside [0, {self.capacity_max}]")

    @property
    def action_bound(self) -> float:
        """Largest energy per 30-minute slot, ``power_max / 2``, on the lattice."""
        return snap_energy(self.power_max / 2.0)

    def to_dict(self) -> dict:
        return {"capacity_max": self.capacity_max, "power_max": self.power_max, "initial_soe": self.initial_soe}


def _iso(ts) -> str:
    return np.datetime_as_string(np.datetime64(ts, "m"), unit="m", timezone="UTC").replace("Z", "+00:00")


def _parse_ts(text: str) -> np.datetime64:
    dt = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if dt.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "m")


def _read_csv(path: Path, columns: list[str]) -> tuple[np.ndarray, list[np.ndarray]]:
    expected = ["timestamp"] + columns
    stamps, values = [], [[] for _ in columns]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise DataError(f"{path}: expected header {','.join(expected)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(expected):
                    raise ValueError(f"expected {len(expected)} fields, found {len(row)}")
                stamps.append(_parse_ts(row[0]))
                for col, cell in zip(values, row[1:]):
                    v = float(cell)
                    if not math.isfinite(v):
                        raise ValueError("non-finite value")
                    col.append(v)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparsable row ({exc})") from None
    ts = np.array(stamps, dtype="datetime64[m]")
    _check_slots(path, ts)
    return ts, [np.array(v, dtype=np.float64) for v in values]


def _check_slots(path, ts: np.ndarray) -> None:
    if len(ts) == 0:
        raise DataError(f"{path}: no data rows")
    steps = np.diff(ts)
    for i, step in enumerate(steps):
        if step == _SLOT:
            continue
        if step == np.timedelta64(0, "m"):
            raise DataError(f"{path}: duplicate timestamp {_iso(ts[i + 1])}")
        if step > _SLOT and step % _SLOT == np.timedelta64(0, "m"):
            raise DataError(f"{path}: missing slot {_iso(ts[i] + _SLOT)}")
        raise DataError(f"{path}: non-30-minute spacing at {_iso(ts[i + 1])}")


def load_bundle(building_csv_path, price_csv_path, building_id: str | None = None,
                price_scale: float = 1.0) -> TimeSeriesBundle:
    """Read a building file and a price file and align them on their common range.

    ``price_scale`` multiplies the price column (1/1000 converts EUR/MWh).
    """
    building_csv_path, price_csv_path = Path(building_csv_path), Path(price_csv_path)
    ts_b, (load, pv) = _read_csv(building_csv_path, ["load_kwh", "pv_kwh"])
    ts_p, (price,) = _read_csv(price_csv_path, ["price_eur_per_kwh"])
    for name, arr in (("load_kwh", load), ("pv_kwh", pv)):
        neg = np.nonzero(arr < 0)[0]
        if neg.size:
            raise DataError(f"{building_csv_path}:{neg[0] + 2}: negative {name}")
    start = max(ts_b[0], ts_p[0])
    stop = min(ts_b[-1], ts_p[-1])
    if stop < start:
        raise DataError(f"{building_csv_path} and {price_csv_path} do not overlap in time")
    ib = slice(int((start - ts_b[0]) // _SLOT), int((stop - ts_b[0]) // _SLOT) + 1)
    ip = slice(int((start - ts_p[0]) // _SLOT), int((stop - ts_p[0]) // _SLOT) + 1)
    return TimeSeriesBundle(building_id or building_csv_path.stem, ts_b[ib], load[ib], pv[ib],
                            price[ip] * price_scale)


def write_bundle(bundle: TimeSeriesBundle, building_csv_path, price_csv_path) -> None:
    with open(building_csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "load_kwh", "pv_kwh"])
        for t, l, p in zip(bundle.timestamps, bundle.load, bundle.pv):
            w.writerow([_iso(t), repr(float(l)), repr(float(p))])
    with open(price_csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "price_eur_per_kwh"])
        for t, c in zip(bundle.timestamps, bundle.price):
            w.writerow([_iso(t), repr(float(c))])


def daily_surplus(bundle: TimeSeriesBundle) -> np.ndarray:
    """Surplus PV energy per complete 48-slot day, counted from the first slot."""
    days = len(bundle) // SLOTS_PER_DAY
    if days < 1:
        raise DataError(f"{bundle.building_id}: need at least one full day, have {len(bundle)} slots")
    surplus = np.maximum(bundle.pv - bundle.load, 0.0)[: days * SLOTS_PER_DAY]
    return surplus.reshape(days, SLOTS_PER_DAY).sum(axis=1)


def derive_battery_spec(bundle: TimeSeriesBundle) -> BatterySpec:
    """Capacity = mean daily PV surplus; power = capacity / 4; start empty."""
    cap = snap_energy(float(np.mean(daily_surplus(bundle))))
    if cap <= 0:
        raise DataError(f"{bundle.building_id}: building has no PV surplus; supply explicit spec")
    return BatterySpec(capacity_max=cap, power_max=cap / 4.0, initial_soe=0.0)


def split_windows(bundle: TimeSeriesBundle, eval_weeks: int = 4,
                  min_train_slots: int = SLOTS_PER_DAY) -> tuple[TimeSeriesBundle, TimeSeriesBundle]:
    """Final ``eval_weeks`` weeks for evaluation, everything before for training."""
    n_eval = eval_weeks * SLOTS_PER_WEEK
    required = n_eval + min_train_slots
    if len(bundle) < required:
        raise DataError(f"{bundle.building_id}: need {required} slots for a {eval_weeks}-week evaluation "
                        f"window plus training data, have {len(bundle)}")
    cut = len(bundle) - n_eval
    return bundle.window(0, cut), bundle.window(cut, len(bundle))


# --- synthetic data ----------------------------------------------------------

PROFILES = ("default", "arbitrage", "flat")


@dataclass
class _SynthParams:
    base_load: float
    morning: float
    evening: float
    pv_peak: float
    price_base: float
    price_day_spread: float
    price_evening: float
    noise: float = 0.15
    price_floor: float = 0.12


_PROFILE_DEFAULTS = {
    "default": dict(base_load=(0.15, 0.30), morning=(0.25, 0.45), evening=(0.45, 0.80), pv_peak=(0.7, 1.3),
                    price_base=(0.22, 0.30), price_day_spread=(0.02, 0.05), price_evening=(0.06, 0.12)),
    "arbitrage": dict(base_load=(0.20, 0.35), morning=(0.30, 0.50), evening=(0.60, 1.00), pv_peak=(0.9, 1.5),
                      price_base=(0.28, 0.34), price_day_spread=(0.12, 0.16), price_evening=(0.20, 0.30)),
}


def _gauss(hours: np.ndarray, centre: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


def synth_bundle(seed: int, days: int, profile: str = "default", start: str = "2024-01-01T00:00") -> TimeSeriesBundle:
    """Deterministic synthetic building.

    Load is a base level plus Gaussian morning (07:30) and evening (19:00)
    peaks. PV is ``peak * sin(pi (hour - 6) / 12)`` between 06:00 and 18:00
    and zero otherwise, scaled by a daily clearness factor in [0.35, 1].
    Price is a base level, a cheap night valley (01:00-06:00), a midday dip
    and an evening peak, plus noise, floored at 0.12 EUR/kWh. Building-level
    amplitudes are drawn from ``seed``. Profile ``flat`` gives load 1 kWh,
    no PV and price 0.2 in every slot.
    """
    if days < 1:
        raise DataError("synth_bundle needs days >= 1")
    if profile not in PROFILES:
        raise DataError(f"unknown profile {profile!r}; choose from {PROFILES}")
    n = days * SLOTS_PER_DAY
    ts = np.datetime64(start, "m") + np.arange(n) * _SLOT
    bid = f"synth-{profile}-{seed}"
    if profile == "flat":
        return TimeSeriesBundle(bid, ts, np.full(n, 1.0), np.zeros(n), np.full(n, 0.2))
    rng = np.random.default_rng(seed)
    ranges = _PROFILE_DEFAULTS[profile]
    p = _SynthParams(**{k: float(rng.uniform(*v)) for k, v in ranges.items()})
    hours = (np.arange(n) % SLOTS_PER_DAY) * 0.5 + 0.25  # slot midpoints
    load_shape = p.base_load + p.morning * _gauss(hours, 7.5, 1.2) + p.evening * _gauss(hours, 19.0, 1.8)
    load = load_shape * rng.lognormal(0.0, p.noise, size=n)
    daylight = (hours >= 6.0) & (hours <= 18.0)
    bell = np.where(daylight, np.sin(np.pi * (hours - 6.0) / 12.0), 0.0)
    clear = np.repeat(rng.uniform(0.35, 1.0, size=days), SLOTS_PER_DAY)
    pv = np.clip(p.pv_peak * bell * clear * rng.lognormal(0.0, 0.05, size=n), 0.0, None)
    pv[~daylight] = 0.0
    night = (hours >= 1.0) & (hours < 6.0)
    price = (p.price_base
             - p.price_day_spread * _gauss(hours, 13.0, 2.0)
             - 1.2 * p.price_day_spread * night
             + p.price_evening * _gauss(hours, 19.0, 1.5)
             + rng.normal(0.0, 0.01, size=n))
    price = np.maximum(price, p.price_floor)
    return TimeSeriesBundle(bid, ts, load, pv, price)
