# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Records, datasets and the synthetic feeder.

## Overview.

A `Record` is one measurement channel (one node, one quantity) sampled at its own instants.
Records of a `Dataset` share nothing but the time axis; `Dataset.union_grid` is the sorted
union of every record's instants and is the finest timeline imputation can target.

Datasets come from a CSV file:

```
record_id,measurement_type,time,value,mask
node0-P,P,0.0,105.2,1
node0-P,P,15.0,98.7,1
node0-V,V,0.0,0.9912,1
```

or from `synthesize`, which builds a day of smooth load curves for a small radial feeder and
samples them the way smart meters (15-min averages) and SCADA (1-min snapshots) would.
Times are minutes. Values are in physical units until `normalize` maps each record to [0, 1].
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from jsonschema import ValidationError as SchemaValidationError
from jsonschema import validate
from parse import search  # type: ignore

from sdernn.config import SynthConfig
from sdernn.errors import (
    CheckpointError,
    ContractError,
    CsvParseError,
    DegenerateScaleError,
    ValidationError,
)
from sdernn.numcore import Vector

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("record_id", "measurement_type", "time", "value", "mask")
TRUTH_COLUMNS = ("record_id", "time", "value")
DEFAULT_NOISE_FRAC = 0.1

# Radial feeder segment impedance (per unit on S_BASE) used for the synthetic voltages.
SEGMENT_R = 0.02
SEGMENT_X = 0.04
S_BASE = 1000.0

MANIFEST_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema",
    "type": "object",
    "required": ["records", "normalization", "noise_fracs", "meta"],
    "properties": {
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["record_id", "measurement_type", "size"],
                "properties": {
                    "record_id": {"type": "string"},
                    "measurement_type": {"enum": ["P", "Q", "V"]},
                    "size": {"type": "integer", "minimum": 0},
                },
            },
        },
        "normalization": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["min", "max"],
                "properties": {"min": {"type": "number"}, "max": {"type": "number"}},
            },
        },
        "noise_fracs": {
            "type": "object",
            "additionalProperties": {"type": "number", "minimum": 0},
        },
        "meta": {"type": "object"},
    },
}


class MeasurementType(str, Enum):
    """Measured quantity of a record."""

    P = "P"
    Q = "Q"
    V = "V"


@dataclass(frozen=True)
class Record:
    """One measurement channel.

    Values may be NaN where `mask` is 0; observed values must be finite.
    """

    record_id: str
    measurement_type: MeasurementType
    values: Vector
    times: Vector
    mask: np.ndarray
    noise_sigma: Vector

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        mask = np.asarray(self.mask, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.noise_sigma, dtype=np.float64).reshape(-1)
        n = times.size
        for name, arr in (("values", values), ("mask", mask), ("noise_sigma", sigma)):
            if arr.size != n:
                raise ValidationError(
                    f"{self.record_id}: {name} has {arr.size} entries, times has {n}"
                )
        if not np.all(np.isfinite(times)):
            raise ValidationError(f"{self.record_id}: times must be finite")
        if n > 1 and np.any(np.diff(times) <= 0):
            raise ValidationError(f"{self.record_id}: times must be strictly increasing")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ContractError(f"{self.record_id}: mask entries must be 0 or 1")
        observed = mask == 1.0
        if not np.all(np.isfinite(values[observed])):
            raise ValidationError(f"{self.record_id}: observed values must be finite")
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ValidationError(f"{self.record_id}: noise_sigma must be finite and >= 0")
        object.__setattr__(self, "measurement_type", MeasurementType(self.measurement_type))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "mask", mask.astype(np.int8))
        object.__setattr__(self, "noise_sigma", sigma)

    def __len__(self) -> int:
        return self.times.size

    @property
    def observed(self) -> np.ndarray:
        """Boolean view of the mask."""
        return self.mask == 1

    @property
    def observed_times(self) -> Vector:
        """Times where the record is observed."""
        return self.times[self.observed]

    @property
    def observed_values(self) -> Vector:
        """Observed values."""
        return self.values[self.observed]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Record):
            return NotImplemented
        return (
            self.record_id == other.record_id
            and self.measurement_type == other.measurement_type
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.noise_sigma, other.noise_sigma)
        )


@dataclass(frozen=True)
class Normalization:
    """Min-max constants of one record."""

    min: float
    max: float

    @property
    def scale(self) -> float:
        """max - min."""
        return self.max - self.min

    def apply(self, values):
        """Physical units to [0, 1]."""
        return (np.asarray(values, dtype=np.float64) - self.min) / self.scale

    def invert(self, values):
        """[0, 1] back to physical units."""
        return np.asarray(values, dtype=np.float64) * self.scale + self.min

    def invert_variance(self, variances):
        """Normalized variances to physical units."""
        return np.asarray(variances, dtype=np.float64) * self.scale**2


@dataclass(frozen=True)
class TruthCurve:
    """Noise-free reference curve of one record."""

    times: Vector
    values: Vector

    def at(self, times) -> Vector:
        """Values at `times`, NaN where the curve has no sample."""
        times = np.asarray(times, dtype=np.float64)
        idx = np.searchsorted(self.times, times)
        idx = np.clip(idx, 0, max(self.times.size - 1, 0))
        out = np.full(times.shape, np.nan)
        if self.times.size:
            hit = np.isclose(self.times[idx], times, rtol=0.0, atol=1e-9)
            out[hit] = self.values[idx[hit]]
        return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable collection of records plus the bookkeeping needed to evaluate them.

    Attributes:
        records: the channels, in file order.
        normalization: per-record min-max constants once `normalize` was applied.
        ground_truth: optional noise-free curves, in the same units as the records.
        held_out: per-record boolean arrays marking observations hidden by `inject_missing`.
        masked_times: the grid instants hidden by `inject_missing`.
        noise_fracs: per measurement type noise fraction used to derive `noise_sigma`.
        meta: free-form provenance (generator config, seeds).
    """

    records: Tuple[Record, ...]
    normalization: Dict[str, Normalization] = field(default_factory=dict)
    ground_truth: Dict[str, TruthCurve] = field(default_factory=dict)
    held_out: Dict[str, np.ndarray] = field(default_factory=dict)
    masked_times: Vector = field(default_factory=lambda: np.zeros(0))
    noise_fracs: Dict[str, float] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValidationError("record ids must be unique")

    @property
    def union_grid(self) -> Vector:
        """Sorted unique times across all records."""
        if not self.records:
            return np.zeros(0)
        return np.unique(np.concatenate([r.times for r in self.records]))

    @property
    def is_normalized(self) -> bool:
        """Whether `normalize` was applied."""
        return bool(self.normalization)

    def record(self, record_id: str) -> Record:
        """Look a record up by id."""
        for r in self.records:
            if r.record_id == record_id:
                return r
        raise KeyError(record_id)

    def evaluation_points(self, record_id: str) -> np.ndarray:
        """Indices of the held-out observations of a record."""
        mask = self.held_out.get(record_id)
        if mask is None:
            return np.zeros(0, dtype=int)
        return np.flatnonzero(mask)

    def manifest(self) -> Dict[str, Any]:
        """JSON-compatible description used for reproducibility."""
        return {
            "records": [
                {
                    "record_id": r.record_id,
                    "measurement_type": r.measurement_type.value,
                    "size": len(r),
                }
                for r in self.records
            ],
            "normalization": {
                rid: {"min": n.min, "max": n.max} for rid, n in self.normalization.items()
            },
            "noise_fracs": dict(self.noise_fracs),
            "meta": dict(self.meta),
        }


def _noise_sigma(values: Vector, frac: float) -> Vector:
    return np.where(np.isfinite(values), frac * np.abs(values), 0.0)


def _tokenizer_line(error: Exception) -> int:
    found = search("line {:d}", str(error))
    return found[0] if found else 1


def load_csv(path: Union[str, Path], noise_fracs: Optional[Mapping[str, float]] = None) -> Dataset:
    """Read a dataset from CSV.

    Args:
        path: CSV file with header `record_id,measurement_type,time,value,mask`.
        noise_fracs: noise fraction per measurement type; 0.1 for types not given.

    Returns:
        A dataset with records in order of first appearance.

    Raises:
        CsvParseError: malformed row or duplicate (record_id, time); carries the line number.
        ValidationError: times within a record are not strictly increasing.
    """
    fracs = {t.value: DEFAULT_NOISE_FRAC for t in MeasurementType}
    fracs.update(noise_fracs or {})
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise CsvParseError(1, "missing header") from e
    except pd.errors.ParserError as e:
        raise CsvParseError(_tokenizer_line(e), "wrong number of fields") from e

    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise CsvParseError(1, f"missing columns {', '.join(missing)}")

    def line(index: int) -> int:
        return int(index) + 2

    types = df["measurement_type"].str.strip()
    bad = ~types.isin([t.value for t in MeasurementType])
    if bad.any():
        i = bad.idxmax()
        raise CsvParseError(line(i), f"unknown measurement_type {types[i]!r}")
    if (df["record_id"].str.strip() == "").any():
        raise CsvParseError(line((df["record_id"].str.strip() == "").idxmax()), "empty record_id")

    times = pd.to_numeric(df["time"], errors="coerce")
    bad = times.isna() | ~np.isfinite(times)
    if bad.any():
        i = bad.idxmax()
        raise CsvParseError(line(i), f"invalid time {df['time'][i]!r}")
    masks = pd.to_numeric(df["mask"], errors="coerce")
    bad = ~masks.isin([0, 1])
    if bad.any():
        i = bad.idxmax()
        raise CsvParseError(line(i), f"invalid mask {df['mask'][i]!r}")
    raw_values = df["value"].str.strip()
    values = pd.to_numeric(raw_values.replace("", "nan"), errors="coerce")
    bad = (values.isna() & (raw_values != "")) | (values.isna() & (masks == 1))
    if bad.any():
        i = bad.idxmax()
        raise CsvParseError(line(i), f"invalid value {df['value'][i]!r}")

    frame = pd.DataFrame(
        {
            "record_id": df["record_id"].str.strip(),
            "measurement_type": types,
            "time": times.astype(float),
            "value": values.astype(float),
            "mask": masks.astype(int),
        }
    )
    dup = frame.duplicated(["record_id", "time"])
    if dup.any():
        i = dup.idxmax()
        raise CsvParseError(
            line(i), f"duplicate time {frame['time'][i]!r} for record {frame['record_id'][i]!r}"
        )

    records = []
    for record_id, group in frame.groupby("record_id", sort=False):
        kinds = group["measurement_type"].unique()
        if len(kinds) != 1:
            raise CsvParseError(
                line(group.index[1]), f"record {record_id!r} mixes measurement types"
            )
        kind = kinds[0]
        vals = group["value"].to_numpy()
        records.append(
            Record(
                record_id=str(record_id),
                measurement_type=MeasurementType(kind),
                values=vals,
                times=group["time"].to_numpy(),
                mask=group["mask"].to_numpy(),
                noise_sigma=_noise_sigma(vals, fracs[kind]),
            )
        )
    logger.info("loaded %d records (%d rows) from %s", len(records), len(frame), path)
    return Dataset(records=tuple(records), noise_fracs=fracs)


def _frame(rows: List[Dict[str, Any]], columns) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=list(columns))


def write_csv(dataset: Dataset, path: Union[str, Path]) -> None:
    """Write the records of `dataset` in the format `load_csv` reads."""
    frames = [
        pd.DataFrame(
            {
                "record_id": r.record_id,
                "measurement_type": r.measurement_type.value,
                "time": r.times,
                "value": r.values,
                "mask": r.mask.astype(int),
            },
            columns=list(CSV_COLUMNS),
        )
        for r in dataset.records
    ]
    df = pd.concat(frames, ignore_index=True) if frames else _frame([], CSV_COLUMNS)
    df.to_csv(path, index=False, lineterminator="\n")
    logger.info("wrote %d rows to %s", len(df), path)


def write_truth_csv(dataset: Dataset, path: Union[str, Path]) -> None:
    """Write the ground-truth curves as `record_id,time,value`."""
    frames = [
        pd.DataFrame({"record_id": rid, "time": c.times, "value": c.values})
        for rid, c in dataset.ground_truth.items()
    ]
    df = pd.concat(frames, ignore_index=True) if frames else _frame([], TRUTH_COLUMNS)
    df.to_csv(path, index=False, lineterminator="\n")


def load_truth_csv(path: Union[str, Path]) -> Dict[str, TruthCurve]:
    """Inverse of `write_truth_csv`."""
    try:
        df = pd.read_csv(path, dtype={"record_id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CsvParseError(_tokenizer_line(e), "malformed ground-truth file") from e
    missing = [c for c in TRUTH_COLUMNS if c not in df.columns]
    if missing:
        raise CsvParseError(1, f"missing columns {', '.join(missing)}")
    return {
        str(rid): TruthCurve(g["time"].to_numpy(float), g["value"].to_numpy(float))
        for rid, g in df.groupby("record_id", sort=False)
    }


def write_manifest(dataset: Dataset, path: Union[str, Path]) -> None:
    """Write `dataset.manifest()` as JSON."""
    Path(path).write_text(json.dumps(dataset.manifest(), indent=2, sort_keys=True) + "\n")


def read_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    """Read and validate a dataset manifest."""
    try:
        data = json.loads(Path(path).read_text())
        validate(data, MANIFEST_SCHEMA)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not valid JSON: {e}") from e
    except SchemaValidationError as e:
        raise CheckpointError(f"{path}: invalid dataset manifest: {e.message}") from e
    return data


def normalization_from_manifest(manifest: Mapping[str, Any]) -> Dict[str, Normalization]:
    """Min-max constants stored in a manifest or checkpoint."""
    return {
        rid: Normalization(float(v["min"]), float(v["max"]))
        for rid, v in manifest.get("normalization", {}).items()
    }


def normalize(
    dataset: Dataset, constants: Optional[Mapping[str, Normalization]] = None
) -> Dataset:
    """Min-max scale every record to [0, 1] over its observed values.

    Args:
        dataset: a dataset in physical units.
        constants: reuse these constants for the records they name instead of fitting.

    Raises:
        DegenerateScaleError: a record has fewer than two distinct observed values.
    """
    if dataset.is_normalized:
        raise ContractError("dataset is already normalized")
    constants = dict(constants or {})
    fitted: Dict[str, Normalization] = {}
    records = []
    for r in dataset.records:
        norm = constants.get(r.record_id)
        if norm is None:
            observed = r.observed_values
            if observed.size < 2 or observed.max() == observed.min():
                raise DegenerateScaleError(
                    f"{r.record_id}: needs at least two distinct observed values to normalize"
                )
            norm = Normalization(float(observed.min()), float(observed.max()))
        if not norm.scale > 0:
            raise DegenerateScaleError(f"{r.record_id}: zero normalization range")
        fitted[r.record_id] = norm
        records.append(
            replace(r, values=norm.apply(r.values), noise_sigma=r.noise_sigma / norm.scale)
        )
    truth = {
        rid: TruthCurve(c.times, fitted[rid].apply(c.values)) if rid in fitted else c
        for rid, c in dataset.ground_truth.items()
    }
    return replace(dataset, records=tuple(records), normalization=fitted, ground_truth=truth)


def denormalize(dataset: Dataset) -> Dataset:
    """Inverse of `normalize`."""
    if not dataset.is_normalized:
        raise ContractError("dataset is not normalized")
    records = []
    for r in dataset.records:
        norm = dataset.normalization[r.record_id]
        records.append(
            replace(r, values=norm.invert(r.values), noise_sigma=r.noise_sigma * norm.scale)
        )
    truth = {
        rid: TruthCurve(c.times, dataset.normalization[rid].invert(c.values))
        if rid in dataset.normalization
        else c
        for rid, c in dataset.ground_truth.items()
    }
    return replace(dataset, records=tuple(records), normalization={}, ground_truth=truth)


def inject_missing(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Hide a seeded uniform sample of `round(fraction * len(union_grid))` grid instants.

    Every record observed at a chosen instant gets mask 0 there. Values are kept, and
    `held_out` marks the hidden observations so they can be scored later.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValidationError(f"missing fraction must be in [0, 1), got {fraction}")
    grid = dataset.union_grid
    n_masked = int(round(fraction * grid.size))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(grid.size, size=n_masked, replace=False))
    masked_times = grid[chosen]

    records, held_out = [], {}
    for r in dataset.records:
        hidden = r.observed & np.isin(r.times, masked_times)
        held_out[r.record_id] = hidden
        records.append(replace(r, mask=np.where(hidden, 0, r.mask)))
    meta = dict(dataset.meta, missing_fraction=fraction, missing_seed=seed)
    logger.info("masked %d of %d grid instants (fraction %.2f)", n_masked, grid.size, fraction)
    return replace(
        dataset, records=tuple(records), held_out=held_out, masked_times=masked_times, meta=meta
    )


def _bump(hours: Vector, center: float, width: float) -> Vector:
    return np.exp(-0.5 * ((hours - center) / width) ** 2)


def _residential(hours: Vector, rng: np.random.Generator) -> Vector:
    morning = rng.uniform(6.5, 8.5)
    evening = rng.uniform(18.0, 20.5)
    return (
        0.35
        + rng.uniform(0.4, 0.6) * _bump(hours, morning, rng.uniform(1.0, 1.8))
        + rng.uniform(0.8, 1.0) * _bump(hours, evening, rng.uniform(1.5, 2.5))
    )


def _commercial(hours: Vector, rng: np.random.Generator) -> Vector:
    opening = rng.uniform(7.0, 9.0)
    closing = rng.uniform(17.0, 19.0)
    ramp = rng.uniform(0.5, 1.0)
    plateau = 1.0 / (1.0 + np.exp(-(hours - opening) / ramp))
    plateau *= 1.0 / (1.0 + np.exp((hours - closing) / ramp))
    return 0.25 + rng.uniform(0.7, 0.9) * plateau


def _harmonics(hours: Vector, rng: np.random.Generator, n: int = 3) -> Vector:
    out = np.zeros_like(hours)
    for k in range(1, n + 1):
        phase = rng.uniform(0.0, 2.0 * math.pi)
        out += rng.uniform(0.0, 0.05) / k * np.sin(2.0 * math.pi * k * hours / 24.0 + phase)
    return out


def load_curve(hours: Vector, rng: np.random.Generator) -> Vector:
    """Smooth, positive daily profile mixing a residential and a commercial shape."""
    weight = rng.uniform(0.0, 1.0)
    shape = weight * _residential(hours, rng) + (1.0 - weight) * _commercial(hours, rng)
    shape = shape + _harmonics(hours, rng)
    return rng.uniform(50.0, 150.0) * np.clip(shape, 0.05, None)


def feeder_voltages(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-unit voltages along a radial feeder, linear voltage-drop approximation.

    Args:
        p: (n_nodes, T) active loads, node 0 closest to the substation.
        q: (n_nodes, T) reactive loads.

    Returns:
        (n_nodes, T) voltages; segment i carries every load at or beyond node i.
    """
    p_flow = np.cumsum(p[::-1], axis=0)[::-1]
    q_flow = np.cumsum(q[::-1], axis=0)[::-1]
    drop = (SEGMENT_R * p_flow + SEGMENT_X * q_flow) / S_BASE
    return 1.0 - np.cumsum(drop, axis=0)


def _noisy(values: Vector, frac: float, rng: np.random.Generator) -> Vector:
    if frac == 0.0:
        return values.copy()
    return values + rng.normal(0.0, 1.0, size=values.shape) * frac * np.abs(values)


def synthesize(cfg: Optional[SynthConfig] = None) -> Dataset:
    """Generate a day of feeder measurements with their noise-free ground truth.

    Every node gets an AMI active-power record (window means over `ami_period` minutes,
    stamped at the window start) and, with `include_reactive`, a reactive-power record at
    the configured power factor. Every `scada_every`-th node also gets a SCADA voltage
    record sampled every `scada_period` minutes.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    minutes = np.arange(cfg.day_minutes, dtype=np.float64)
    hours = minutes * 24.0 / cfg.day_minutes
    tan_phi = math.tan(math.acos(cfg.power_factor))

    p = np.stack([load_curve(hours, rng) for _ in range(cfg.n_nodes)])
    q = p * tan_phi
    v = feeder_voltages(p, q)

    records: List[Record] = []
    truth: Dict[str, TruthCurve] = {}
    ami_times = minutes[:: cfg.ami_period]

    def ami(record_id: str, kind: MeasurementType, curve: Vector) -> None:
        window_means = curve.reshape(-1, cfg.ami_period).mean(axis=1)
        observed = _noisy(window_means, cfg.noise_frac, rng)
        records.append(
            Record(
                record_id,
                kind,
                observed,
                ami_times,
                np.ones(ami_times.size),
                _noise_sigma(observed, cfg.noise_frac),
            )
        )
        truth[record_id] = TruthCurve(minutes, curve)

    for node in range(cfg.n_nodes):
        ami(f"node{node}-P", MeasurementType.P, p[node])
        if cfg.include_reactive:
            ami(f"node{node}-Q", MeasurementType.Q, q[node])
        if node % cfg.scada_every == 0:
            times = minutes[:: cfg.scada_period]
            sampled = v[node][:: cfg.scada_period]
            observed = _noisy(sampled, cfg.scada_noise_frac, rng)
            record_id = f"node{node}-V"
            records.append(
                Record(
                    record_id,
                    MeasurementType.V,
                    observed,
                    times,
                    np.ones(times.size),
                    _noise_sigma(observed, cfg.scada_noise_frac),
                )
            )
            truth[record_id] = TruthCurve(minutes, v[node])

    logger.info(
        "synthesized %d records for %d nodes (seed %d)", len(records), cfg.n_nodes, cfg.seed
    )
    return Dataset(
        records=tuple(records),
        ground_truth=truth,
        noise_fracs={"P": cfg.noise_frac, "Q": cfg.noise_frac, "V": cfg.scada_noise_frac},
        meta={"synth": cfg.dump()},
    )
