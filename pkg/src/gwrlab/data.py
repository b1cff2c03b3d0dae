"""Areal-unit data model: ingestion, trip-change computation, standardization.

Tables are immutable once built; loading is deterministic (rows sorted by
unit id) so every downstream matrix is reproducible across platforms.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import IngestionError, SchemaError, ZeroVarianceError

Ring = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class AreaUnit:
    """One areal unit: opaque id, display name, planar location in metres,
    optional polygon rings (first ring of each part is the outer ring)."""

    id: str
    name: str = ""
    x: float = math.nan
    y: float = math.nan
    polygon: tuple[Ring, ...] | None = None

    def __post_init__(self):
        x, y = self.x, self.y
        if (not math.isfinite(x) or not math.isfinite(y)) and self.polygon:
            cx, cy = polygon_centroid(self.polygon)
            object.__setattr__(self, "x", cx)
            object.__setattr__(self, "y", cy)
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"unit {self.id!r} has no finite location and no polygon")

    @property
    def location(self) -> tuple[float, float]:
        return (self.x, self.y)


def polygon_centroid(rings: Sequence[Ring]) -> tuple[float, float]:
    """Area-weighted centroid over the outer rings of a (multi)polygon."""
    total_a = 0.0
    cx = 0.0
    cy = 0.0
    for ring in rings:
        pts = list(ring)
        if len(pts) < 3:
            continue
        if pts[0] != pts[-1]:
            pts.append(pts[0])
        a2 = 0.0
        sx = 0.0
        sy = 0.0
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            cross = x0 * y1 - x1 * y0
            a2 += cross
            sx += (x0 + x1) * cross
            sy += (y0 + y1) * cross
        if a2 == 0.0:
            continue
        area = abs(a2) / 2.0
        total_a += area
        cx += area * (sx / (3.0 * a2))
        cy += area * (sy / (3.0 * a2))
    if total_a == 0.0:
        raise ValueError("polygon has zero area; cannot derive a centroid")
    return (cx / total_a, cy / total_a)


@dataclass(frozen=True)
class TripChangeRecord:
    """Percent change in trips for one area; positive means fewer trips
    after. Undefined (defined=False, NaN) when trips_before is zero."""

    area_id: str
    trips_before: float
    trips_after: float
    trip_change: float
    defined: bool


def compute_trip_change(before: Mapping[str, float],
                        after: Mapping[str, float]) -> list[TripChangeRecord]:
    """Per-area percent trip change (before - after) * 100 / before.

    Both mappings must cover exactly the same area ids; zero-trips-before
    areas are flagged undefined rather than dropped.
    """
    missing_after = sorted(set(before) - set(after))
    missing_before = sorted(set(after) - set(before))
    if missing_after or missing_before:
        parts = []
        if missing_after:
            parts.append(f"ids only in 'before': {', '.join(missing_after)}")
        if missing_before:
            parts.append(f"ids only in 'after': {', '.join(missing_before)}")
        raise ValueError("mismatched area ids: " + "; ".join(parts))
    records = []
    for area_id in sorted(before):
        t_b = float(before[area_id])
        t_a = float(after[area_id])
        if t_b < 0 or t_a < 0:
            raise ValueError(f"negative trip count for area {area_id!r}")
        if t_b > 0:
            tc = (t_b - t_a) * 100.0 / t_b
            records.append(TripChangeRecord(area_id, t_b, t_a, tc, True))
        else:
            records.append(TripChangeRecord(area_id, t_b, t_a, math.nan, False))
    return records


@dataclass(frozen=True)
class IngestionReport:
    n_read: int
    n_kept: int
    dropped: tuple[tuple[str, str], ...] = ()  # (id, reason)
    warnings: tuple[str, ...] = ()

    @property
    def n_dropped(self) -> int:
        return len(self.dropped)


@dataclass(frozen=True)
class ObservationTable:
    """Aligned units, dependent vector y, and named covariate matrix X.

    Row order always matches ``units``. When ``standardized`` is set, the
    stored means/stds allow the inverse transform.
    """

    units: tuple[AreaUnit, ...]
    y: np.ndarray
    X: np.ndarray
    columns: tuple[str, ...]
    y_name: str = "y"
    standardized: bool = False
    y_mean: float = 0.0
    y_std: float = 1.0
    x_means: np.ndarray | None = None
    x_stds: np.ndarray | None = None
    ingestion: IngestionReport | None = field(default=None, compare=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        n = len(self.units)
        if y.shape != (n,) or X.shape[0] != n:
            raise ValueError("units, y, and X row counts disagree")
        if len(self.columns) != X.shape[1]:
            raise ValueError("column name count does not match X")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            raise ValueError("table contains non-finite values")
        ids = [u.id for u in self.units]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate unit ids in table")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return len(self.units)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(u.id for u in self.units)

    @property
    def coords(self) -> np.ndarray:
        return np.array([[u.x, u.y] for u in self.units], dtype=np.float64)

    @property
    def has_polygons(self) -> bool:
        return all(u.polygon is not None for u in self.units)


@dataclass(frozen=True)
class TableSchema:
    """Column mapping for ingestion.

    ``target_col`` names the dependent variable directly; alternatively
    ``before_col``/``after_col`` name raw trip counts and the dependent
    variable becomes the percent trip change (undefined rows dropped with
    a reason). Coordinates come from ``x_col``/``y_col`` or, for GeoJSON,
    the feature geometry.
    """

    id_col: str
    covariate_cols: tuple[str, ...]
    target_col: str | None = None
    before_col: str | None = None
    after_col: str | None = None
    x_col: str | None = None
    y_col: str | None = None
    name_col: str | None = None
    target_name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariate_cols", tuple(self.covariate_cols))
        if self.target_col is None and (self.before_col is None or self.after_col is None):
            raise SchemaError("schema needs target_col or both before_col and after_col")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TableSchema":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise SchemaError(f"unknown schema keys: {sorted(extra)}")
        return cls(**d)

    def dependent_name(self) -> str:
        if self.target_name:
            return self.target_name
        if self.target_col:
            return self.target_col
        return "trip_change"


def _parse_number(raw: str, col: str, row_id: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise SchemaError(
            f"non-numeric value {raw!r} in column {col!r} for row {row_id!r}"
        ) from None


def _rows_from_csv(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestionError(f"{path}: no header row")
        rows = [dict(r) for r in reader]
    return rows


def _geometry_rings(geometry: Mapping) -> tuple[Ring, ...]:
    gtype = geometry.get("type")
    coords = geometry.get("coordinates", [])
    rings: list[Ring] = []
    if gtype == "Polygon":
        parts = [coords]
    elif gtype == "MultiPolygon":
        parts = coords
    else:
        raise IngestionError(f"unsupported geometry type {gtype!r}")
    for part in parts:
        for ring in part:
            rings.append(tuple((float(x), float(y)) for x, y in ring))
    return tuple(rings)


def _rows_from_geojson(path: str) -> tuple[list[dict], list[tuple[Ring, ...] | None]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise IngestionError(f"{path}: not a GeoJSON FeatureCollection")
    rows = []
    polys = []
    for feat in doc.get("features", []):
        rows.append(dict(feat.get("properties") or {}))
        geom = feat.get("geometry")
        polys.append(_geometry_rings(geom) if geom else None)
    return rows, polys


def load_table(path: str, schema: TableSchema) -> ObservationTable:
    """Load a CSV or GeoJSON file into an ObservationTable.

    Rows are sorted by id; rows with missing or undefined cells are
    dropped with a per-row reason in the attached ingestion report.
    """
    is_geojson = str(path).lower().endswith((".geojson", ".json"))
    if is_geojson:
        raw_rows, polys = _rows_from_geojson(path)
    else:
        raw_rows = _rows_from_csv(path)
        polys = [None] * len(raw_rows)
    if not raw_rows:
        raise IngestionError(f"{path}: no rows")

    needed = [schema.id_col, *schema.covariate_cols]
    if schema.target_col:
        needed.append(schema.target_col)
    else:
        needed.extend([schema.before_col, schema.after_col])
    if not is_geojson:
        if schema.x_col is None or schema.y_col is None:
            raise SchemaError("CSV input requires x_col and y_col in the schema")
    if schema.x_col:
        needed.extend([schema.x_col, schema.y_col])
    present = set(raw_rows[0].keys())
    missing = [c for c in needed if c not in present]
    if missing:
        raise SchemaError(f"missing mapped columns: {', '.join(sorted(missing))}")

    seen: dict[str, int] = {}
    for row in raw_rows:
        rid = str(row.get(schema.id_col, "")).strip()
        if not rid:
            raise SchemaError(f"empty id in column {schema.id_col!r}")
        seen[rid] = seen.get(rid, 0) + 1
    dupes = sorted(k for k, v in seen.items() if v > 1)
    if dupes:
        raise SchemaError(f"duplicate ids: {', '.join(dupes)}")

    order = sorted(range(len(raw_rows)), key=lambda i: str(raw_rows[i][schema.id_col]).strip())

    units: list[AreaUnit] = []
    y_vals: list[float] = []
    x_rows: list[list[float]] = []
    dropped: list[tuple[str, str]] = []

    def cell(row: dict, col: str):
        val = row.get(col)
        if val is None:
            return None
        if isinstance(val, str) and val.strip() == "":
            return None
        return val

    for i in order:
        row = raw_rows[i]
        rid = str(row[schema.id_col]).strip()
        value_cols = list(schema.covariate_cols)
        value_cols += [schema.target_col] if schema.target_col else [schema.before_col, schema.after_col]
        if schema.x_col:
            value_cols += [schema.x_col, schema.y_col]
        blank = [c for c in value_cols if cell(row, c) is None]
        if blank:
            dropped.append((rid, f"missing value in {', '.join(blank)}"))
            continue
        if schema.target_col:
            yv = _parse_number(cell(row, schema.target_col), schema.target_col, rid)
        else:
            t_b = _parse_number(cell(row, schema.before_col), schema.before_col, rid)
            t_a = _parse_number(cell(row, schema.after_col), schema.after_col, rid)
            rec = compute_trip_change({rid: t_b}, {rid: t_a})[0]
            if not rec.defined:
                dropped.append((rid, "trip change undefined: zero trips before"))
                continue
            yv = rec.trip_change
        xs = [_parse_number(cell(row, c), c, rid) for c in schema.covariate_cols]
        if schema.x_col:
            ux = _parse_number(cell(row, schema.x_col), schema.x_col, rid)
            uy = _parse_number(cell(row, schema.y_col), schema.y_col, rid)
        else:
            ux = uy = math.nan
        name = str(row.get(schema.name_col, "") or "") if schema.name_col else ""
        units.append(AreaUnit(id=rid, name=name, x=ux, y=uy, polygon=polys[i]))
        y_vals.append(yv)
        x_rows.append(xs)

    if not units:
        raise IngestionError(f"{path}: all {len(raw_rows)} rows were dropped")

    report = IngestionReport(n_read=len(raw_rows), n_kept=len(units), dropped=tuple(dropped))
    return ObservationTable(
        units=tuple(units),
        y=np.array(y_vals),
        X=np.array(x_rows, dtype=np.float64).reshape(len(units), len(schema.covariate_cols)),
        columns=tuple(schema.covariate_cols),
        y_name=schema.dependent_name(),
        ingestion=report,
    )


def standardize(table: ObservationTable) -> ObservationTable:
    """Z-score y and every covariate column (sample std, ddof=1), keeping
    the transform parameters for the inverse."""
    if table.n < 2:
        raise ValueError("standardization needs at least 2 rows")
    y_mean = float(np.mean(table.y))
    y_std = float(np.std(table.y, ddof=1))
    if y_std == 0.0:
        raise ZeroVarianceError(table.y_name)
    means = table.X.mean(axis=0)
    stds = table.X.std(axis=0, ddof=1)
    for j, s in enumerate(stds):
        if s == 0.0:
            raise ZeroVarianceError(table.columns[j])
    return replace(
        table,
        y=(table.y - y_mean) / y_std,
        X=(table.X - means) / stds,
        standardized=True,
        y_mean=y_mean,
        y_std=y_std,
        x_means=means,
        x_stds=stds,
    )


def unstandardize(table: ObservationTable) -> ObservationTable:
    """Invert :func:`standardize` using the stored means and stds."""
    if not table.standardized:
        return table
    return replace(
        table,
        y=table.y * table.y_std + table.y_mean,
        X=table.X * table.x_stds + table.x_means,
        standardized=False,
        y_mean=0.0,
        y_std=1.0,
        x_means=None,
        x_stds=None,
    )
