"""In-memory dataset: station series, projected coordinates, covariates, grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DataError
from .gev import AnnualSeries
from .regression import Standardization

EARTH_RADIUS_KM = 6371.0
COORD_COVARIATES = ("lat", "lon")


@dataclass(frozen=True)
class Projection:
    """Planar coordinates for distance computations.

    ``equirectangular`` maps degrees to km about (lat0, lon0); distances are
    then expressed in multiples of ``unit_km``. ``degrees`` uses (lon, lat)
    directly.
    """

    kind: str = "equirectangular"
    lat0: float = 0.0
    lon0: float = 0.0
    unit_km: float = 100.0

    def project(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        if self.kind == "degrees":
            return np.column_stack([lon, lat])
        if self.kind != "equirectangular":
            raise ValueError(f"unknown projection {self.kind!r}")
        k = math.pi / 180.0 * EARTH_RADIUS_KM / self.unit_km
        x = k * (lon - self.lon0) * math.cos(math.radians(self.lat0))
        y = k * (lat - self.lat0)
        return np.column_stack([x, y])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lat0": self.lat0, "lon0": self.lon0, "unit_km": self.unit_km}

    @classmethod
    def from_dict(cls, d: dict) -> "Projection":
        return cls(d["kind"], float(d["lat0"]), float(d["lon0"]), float(d["unit_km"]))


@dataclass(frozen=True)
class GridSpec:
    """Prediction cells with covariates standardized by the training map."""

    cell_ids: tuple[str, ...]
    lat: np.ndarray
    lon: np.ndarray
    coords: np.ndarray
    X: np.ndarray
    covariate_names: tuple[str, ...]

    def __len__(self):
        return len(self.cell_ids)


@dataclass(frozen=True)
class Dataset:
    station_ids: tuple[str, ...]
    lat: np.ndarray
    lon: np.ndarray
    coords: np.ndarray
    series: tuple[AnnualSeries, ...]
    covariate_names: tuple[str, ...]
    raw_covariates: np.ndarray
    standardization: Standardization
    X: np.ndarray
    projection: Projection
    grid: GridSpec | None = None

    @property
    def n_sites(self) -> int:
        return len(self.station_ids)

    @property
    def column_names(self) -> tuple[str, ...]:
        return ("const",) + self.covariate_names

    @property
    def y(self) -> np.ndarray:
        """All observations concatenated in station order."""
        return np.concatenate([s.array for s in self.series]) if self.series else np.zeros(0)

    @property
    def starts(self) -> np.ndarray:
        """Offsets into ``y``: station ``s`` owns ``y[starts[s]:starts[s+1]]``."""
        return np.concatenate([[0], np.cumsum([len(s) for s in self.series])]).astype(np.int64)

    def index(self, station_id: str) -> int:
        return self.station_ids.index(station_id)

    def subset(self, keep: Sequence[int]) -> "Dataset":
        """Restriction to some stations. Standardization and projection are kept."""
        keep = list(keep)
        return replace(
            self,
            station_ids=tuple(self.station_ids[i] for i in keep),
            lat=self.lat[keep], lon=self.lon[keep], coords=self.coords[keep],
            series=tuple(self.series[i] for i in keep),
            raw_covariates=self.raw_covariates[keep], X=self.X[keep],
        )

    def without(self, i: int) -> "Dataset":
        return self.subset([j for j in range(self.n_sites) if j != i])

    def equals(self, other: "Dataset") -> bool:
        """Bit-level equality of every field."""
        arrays = ("lat", "lon", "coords", "raw_covariates", "X")
        if self.station_ids != other.station_ids or self.covariate_names != other.covariate_names:
            return False
        if self.series != other.series or self.projection != other.projection:
            return False
        if not all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays):
            return False
        s1, s2 = self.standardization, other.standardization
        if not (np.array_equal(s1.means, s2.means) and np.array_equal(s1.sds, s2.sds)):
            return False
        if (self.grid is None) != (other.grid is None):
            return False
        if self.grid is not None:
            g1, g2 = self.grid, other.grid
            if g1.cell_ids != g2.cell_ids:
                return False
            return all(np.array_equal(getattr(g1, a), getattr(g2, a))
                       for a in ("lat", "lon", "coords", "X"))
        return True


def _covariate_columns(names, lat, lon, table: dict[str, np.ndarray]) -> np.ndarray:
    cols = []
    for name in names:
        if name == "lat":
            cols.append(lat)
        elif name == "lon":
            cols.append(lon)
        else:
            cols.append(table[name])
    return np.column_stack(cols) if cols else np.zeros((len(lat), 0))


def build_dataset(
    series: Sequence[AnnualSeries],
    station_lat: Sequence[float],
    station_lon: Sequence[float],
    cells: dict,
    covariate_names: Sequence[str],
    projection_kind: str = "equirectangular",
    unit_km: float = 100.0,
    station_covariates: dict[str, dict[str, float]] | None = None,
    max_cell_distance: float | None = None,
    paths: tuple[str | None, str | None] = (None, None),
) -> Dataset:
    """Assemble a validated Dataset.

    ``cells`` maps ``cell_id``/``lat``/``lon`` and every covariate column to
    arrays. Station covariates come from the nearest cell unless given
    explicitly. Both the file loader and the synthetic generator go through
    here, so identical raw inputs give bit-identical datasets.
    """
    station_path, cov_path = paths
    lat = np.asarray(station_lat, dtype=float)
    lon = np.asarray(station_lon, dtype=float)
    ids = tuple(s.station_id for s in series)
    names = tuple(covariate_names)
    cell_lat = np.asarray(cells["lat"], dtype=float)
    cell_lon = np.asarray(cells["lon"], dtype=float)
    missing = [n for n in names if n not in COORD_COVARIATES and n not in cells]
    if missing:
        raise DataError(f"missing covariate columns: {missing}", cov_path)

    proj = Projection(projection_kind, float(np.mean(lat)), float(np.mean(lon)), unit_km)
    coords = proj.project(lat, lon)
    cell_coords = proj.project(cell_lat, cell_lon)

    if station_covariates is None:
        from scipy.spatial import cKDTree

        tree = cKDTree(cell_coords)
        dist, nearest = tree.query(coords)
        if max_cell_distance is None and len(cell_coords) > 1:
            nn, _ = tree.query(cell_coords, k=2)
            max_cell_distance = 1.5 * float(np.median(nn[:, 1]))
        if max_cell_distance is not None:
            far = np.flatnonzero(dist > max_cell_distance)
            if far.size:
                i = int(far[0])
                raise DataError(f"station {ids[i]} lies outside the covariate grid "
                                f"(nearest cell {dist[i]:.3g} distance units away)", station_path)
        table = {n: np.asarray(cells[n], float)[nearest] for n in names
                 if n not in COORD_COVARIATES}
    else:
        table = {}
        for n in names:
            if n in COORD_COVARIATES:
                continue
            try:
                table[n] = np.array([station_covariates[sid][n] for sid in ids], dtype=float)
            except KeyError as exc:
                raise DataError(f"explicit station covariates lack {exc}") from None
    raw = _covariate_columns(names, lat, lon, table)
    try:
        std = Standardization.fit(names, raw)
    except ValueError as exc:
        raise DataError(str(exc), station_path) from None
    X = std.apply(raw)

    cell_table = {n: np.asarray(cells[n], float) for n in names if n not in COORD_COVARIATES}
    cell_raw = _covariate_columns(names, cell_lat, cell_lon, cell_table)
    grid = GridSpec(tuple(str(c) for c in cells["cell_id"]), cell_lat, cell_lon, cell_coords,
                    std.apply(cell_raw), names)
    return Dataset(ids, lat, lon, coords, tuple(series), names, raw, std, X, proj, grid)
