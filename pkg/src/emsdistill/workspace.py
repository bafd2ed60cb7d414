"""Data workspace: a directory of building/price CSVs described by ``manifest.json``.

::

    {"format": "emsdistill-data/1",
     "buildings": [{"building_id": "b1", "building_csv": "b1.csv", "price_csv": "price.csv",
                    "price_scale": 1.0, "battery": {"capacity_max": ..., "power_max": ..., "initial_soe": 0.0}}]}

CSV paths are relative to the manifest. ``battery`` may be omitted, in which
case the spec is derived from the training split's PV surplus.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from .data import BatterySpec, TimeSeriesBundle, derive_battery_spec, load_bundle, split_windows, write_bundle
from .env import EnvConfig
from .errors import DataError

FORMAT = "emsdistill-data/1"
MANIFEST = "manifest.json"


@dataclass
class Building:
    bundle: TimeSeriesBundle
    spec: BatterySpec
    train: TimeSeriesBundle
    eval: TimeSeriesBundle

    @property
    def building_id(self) -> str:
        return self.bundle.building_id

    def env(self, split: str = "eval", **kw) -> EnvConfig:
        part = {"train": self.train, "eval": self.eval, "all": self.bundle}[split]
        return EnvConfig(part, self.spec, **kw)


def write_manifest(root, entries: list[dict]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids = [e["building_id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate building ids in manifest: {ids}")
    path = root / MANIFEST
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"format": FORMAT, "buildings": entries}, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def add_bundle(root, bundle: TimeSeriesBundle, spec: BatterySpec | None = None) -> dict:
    """Write ``bundle`` as ``<id>.csv`` / ``<id>.price.csv`` under ``root``; returns its manifest entry."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    bcsv, pcsv = f"{bundle.building_id}.csv", f"{bundle.building_id}.price.csv"
    write_bundle(bundle, root / bcsv, root / pcsv)
    entry = {"building_id": bundle.building_id, "building_csv": bcsv, "price_csv": pcsv, "price_scale": 1.0}
    if spec is not None:
        entry["battery"] = spec.to_dict()
    return entry


def read_manifest(root) -> list[dict]:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise DataError(f"no {MANIFEST} in {root}; run `emsdistill ingest` or `emsdistill synth` first")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None
    if doc.get("format") != FORMAT:
        raise DataError(f"{path}: unknown format {doc.get('format')!r}")
    return doc["buildings"]


def load_buildings(root, ids=None, eval_weeks: int = 4) -> list[Building]:
    root = Path(root)
    entries = read_manifest(root)
    known = {e["building_id"]: e for e in entries}
    if ids:
        unknown = [i for i in ids if i not in known]
        if unknown:
            raise DataError(f"buildings not in {root / MANIFEST}: {unknown}")
        entries = [known[i] for i in ids]
    out = []
    for e in entries:
        bundle = load_bundle(root / e["building_csv"], root / e["price_csv"], e["building_id"],
                             e.get("price_scale", 1.0))
        train, ev = split_windows(bundle, eval_weeks)
        spec = BatterySpec(**e["battery"]) if "battery" in e else derive_battery_spec(train)
        out.append(Building(bundle, spec, train, ev))
    return out
