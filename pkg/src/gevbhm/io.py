"""File formats, run configuration, draw store and report emission."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .dataset import COORD_COVARIATES, Dataset, build_dataset
from .errors import ConfigError, DataError, StoreError
from .gev import AnnualSeries
from .sampler import (AcceptanceStats, FamilyAcceptance, FamilyDraws, FamilyPrior,
                      PosteriorDraws, SamplerConfig, default_priors)
from .state import FAMILIES

STATION_HEADER = ("station_id", "lat", "lon", "year", "annual_max")
COVARIATE_LEAD = ("cell_id", "lat", "lon")
SUMMARY_HEADER = ("family", "term", "Prob", "Mean", "2.5%", "97.5%")
ACCEPTANCE_HEADER = ("Model", "λ", "Worst τ", "Mean τ", "Best τ")
RASTER_HEADER = ("cell_id", "lat", "lon", "median", "lower", "upper")
FORMAT_VERSION = 1


def fmt(x) -> str:
    """Shortest round-tripping text for a float; integers stay integers."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# --------------------------------------------------------------------------
# Atomic writes
# --------------------------------------------------------------------------

@contextmanager
def atomic_open(path: str | Path, mode: str = "w", **kw):
    """Write to a temporary file in the target directory and rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with atomic_open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in r])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------

PRIOR_KEYS = ("a_alpha", "b_alpha", "a_lambda", "b_lambda", "theta0_intercept", "theta_sd")


@dataclass
class RunConfig:
    iterations: int = 200_000
    burn_in: int = 20_000
    thin: int = 10
    seed: int = 0
    scenario: str = "BMA"
    fixed_xi: float = 0.15
    covariates: list | None = None
    priors: dict = field(default_factory=lambda: {f: asdict(p) for f, p in default_priors().items()})
    projection: dict = field(default_factory=lambda: {"kind": "equirectangular", "unit_km": 100.0})
    return_periods: list = field(default_factory=lambda: [2, 5, 10, 20, 50, 100])
    quantiles: list = field(default_factory=lambda: [0.025, 0.975])
    map_every: int = 1

    MODEL_KEYS = ("iterations", "burn_in", "thin", "seed", "scenario", "fixed_xi", "covariates",
                  "priors", "projection")

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        base = cls()
        pri = {f: dict(v) for f, v in base.priors.items()}
        for fam, vals in (d.pop("priors", None) or {}).items():
            if fam not in pri:
                raise ConfigError(f"unknown prior family {fam!r}")
            bad = set(vals) - set(PRIOR_KEYS)
            if bad:
                raise ConfigError(f"unknown prior keys for {fam}: {sorted(bad)}")
            pri[fam].update({k: float(v) for k, v in vals.items()})
        proj = dict(base.projection)
        proj.update(d.pop("projection", None) or {})
        if "unit_km" in proj:
            proj["unit_km"] = float(proj["unit_km"])
        if "fixed_xi" in d:
            d["fixed_xi"] = float(d["fixed_xi"])
        if d.get("covariates") is not None:
            d["covariates"] = [str(c) for c in d["covariates"]]
        cfg = replace(base, **d, priors=pri, projection=proj)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def validate(self) -> None:
        for k in ("iterations", "burn_in", "thin", "seed", "map_every"):
            v = getattr(self, k)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ConfigError(f"{k} must be an integer")
        for fam, vals in self.priors.items():
            for k in ("a_alpha", "b_alpha", "a_lambda", "b_lambda", "theta_sd"):
                if not (vals[k] > 0 and math.isfinite(vals[k])):
                    raise ConfigError(f"prior {fam}.{k} must be positive")
        if self.projection.get("kind") not in ("equirectangular", "degrees"):
            raise ConfigError("projection.kind must be 'equirectangular' or 'degrees'")
        if not float(self.projection.get("unit_km", 1)) > 0:
            raise ConfigError("projection.unit_km must be positive")
        for T in self.return_periods:
            if not float(T) > 1:
                raise ConfigError("return periods must exceed 1")
        lo, hi = self.quantiles
        if not (0 < lo < 0.5 < hi < 1):
            raise ConfigError("quantiles must satisfy 0 < lower < 0.5 < upper < 1")
        self.sampler()  # range checks on the sampler side

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(
            iterations=int(self.iterations), burn_in=int(self.burn_in), thin=int(self.thin),
            seed=int(self.seed), scenario=str(self.scenario), fixed_xi=float(self.fixed_xi),
            priors={f: FamilyPrior(**{k: float(v) for k, v in self.priors[f].items()})
                    for f in FAMILIES})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def model_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.MODEL_KEYS}
        d["scenario"] = self.sampler().scenario
        d["fixed_xi"] = self.sampler().fixed_xi
        return d

    def hash(self) -> str:
        """Digest of everything that determines the draws."""
        blob = json.dumps(self.model_dict(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()

    def dump(self, path) -> None:
        with atomic_open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False, allow_unicode=True)


# --------------------------------------------------------------------------
# Station and covariate files
# --------------------------------------------------------------------------

def _float(text: str, what: str, path, line) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{what} is not a number: {text!r}", str(path), line) from None
    if not math.isfinite(v):
        raise DataError(f"{what} must be finite", str(path), line)
    return v


def read_station_file(path) -> tuple[list[AnnualSeries], np.ndarray, np.ndarray]:
    """Parse ``station_id,lat,lon,year,annual_max`` rows into per-station series.

    Stations keep their order of first appearance; each series is sorted by year.
    """
    path = Path(path)
    recs: dict[str, dict] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open station file: {exc.strerror}", str(path)) from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != STATION_HEADER:
            raise DataError(f"header must be {','.join(STATION_HEADER)}", str(path), 1)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise DataError(f"expected 5 fields, got {len(row)}", str(path), line)
            sid = row[0].strip()
            lat = _float(row[1], "lat", path, line)
            lon = _float(row[2], "lon", path, line)
            try:
                year = int(row[3])
            except ValueError:
                raise DataError(f"year is not an integer: {row[3]!r}", str(path), line) from None
            val = _float(row[4], "annual_max", path, line)
            if not val > 0:
                raise DataError(f"annual_max must be > 0, got {row[4].strip()} "
                                f"(station {sid}, year {year})", str(path), line)
            if not (-90 <= lat <= 90 and -180 <= lon <= 360):
                raise DataError("lat/lon outside the valid range", str(path), line)
            r = recs.setdefault(sid, {"lat": lat, "lon": lon, "years": {}})
            if (r["lat"], r["lon"]) != (lat, lon):
                raise DataError(f"station {sid} has inconsistent coordinates", str(path), line)
            if year in r["years"]:
                raise DataError(f"duplicate (station, year) = ({sid}, {year}); first at line "
                                f"{r['years'][year][1]}", str(path), line)
            r["years"][year] = (val, line)
    if not recs:
        raise DataError("no station records", str(path))
    series, lat, lon = [], [], []
    for sid, r in recs.items():
        yrs = sorted(r["years"])
        series.append(AnnualSeries(sid, tuple(yrs), tuple(r["years"][y][0] for y in yrs)))
        lat.append(r["lat"])
        lon.append(r["lon"])
    return series, np.array(lat), np.array(lon)


def read_covariate_file(path) -> tuple[dict, tuple[str, ...]]:
    """Parse ``cell_id,lat,lon,<covariates...>``; returns the column table and covariate names."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open covariate file: {exc.strerror}", str(path)) from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header[:3]) != COVARIATE_LEAD:
            raise DataError("header must start with cell_id,lat,lon", str(path), 1)
        names = tuple(h.strip() for h in header[3:])
        if len(set(names)) != len(names) or any(n in COVARIATE_LEAD for n in names):
            raise DataError("duplicate covariate column names", str(path), 1)
        ids, cols = [], [[] for _ in range(2 + len(names))]
        seen = set()
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", str(path), line)
            cid = row[0].strip()
            if cid in seen:
                raise DataError(f"duplicate cell_id {cid}", str(path), line)
            seen.add(cid)
            ids.append(cid)
            for k, text in enumerate(row[1:]):
                what = header[k + 1].strip()
                cols[k].append(_float(text, what, path, line))
    if not ids:
        raise DataError("no covariate cells", str(path))
    table = {"cell_id": ids, "lat": np.array(cols[0]), "lon": np.array(cols[1])}
    for k, n in enumerate(names):
        arr = np.array(cols[k + 2])
        if len(ids) > 1 and np.ptp(arr) == 0:
            raise DataError(f"covariate column {n} is constant across cells", str(path), 1)
        table[n] = arr
    return table, names


def read_station_covariates(path) -> dict[str, dict[str, float]]:
    """Explicit per-station covariates: ``station_id,<covariates...>``."""
    path = Path(path)
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "station_id":
            raise DataError("header must start with station_id", str(path), 1)
        names = [h.strip() for h in header[1:]]
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields", str(path), line)
            out[row[0].strip()] = {n: _float(v, n, path, line) for n, v in zip(names, row[1:])}
    return out


def load_dataset(station_path, covariate_path, config: RunConfig | None = None,
                 station_covariate_path=None) -> Dataset:
    """Read, validate, standardize and project the inputs."""
    config = config or RunConfig()
    series, lat, lon = read_station_file(station_path)
    cells, cov_names = read_covariate_file(covariate_path)
    names = config.covariates
    if names is None:
        names = list(COORD_COVARIATES) + list(cov_names)
    missing = [n for n in names if n not in COORD_COVARIATES and n not in cov_names]
    if missing:
        raise DataError(f"missing covariate columns: {missing}", str(covariate_path), 1)
    explicit = read_station_covariates(station_covariate_path) if station_covariate_path else None
    return build_dataset(series, lat, lon, cells, names, config.projection["kind"],
                         float(config.projection.get("unit_km", 100.0)), explicit,
                         paths=(str(station_path), str(covariate_path)))


def write_station_file(path, series: Sequence[AnnualSeries], lat, lon) -> None:
    rows = []
    for s, la, lo in zip(series, lat, lon):
        for y, v in zip(s.years, s.values):
            rows.append((s.station_id, fmt(la), fmt(lo), str(y), fmt(v)))
    write_csv(path, STATION_HEADER, rows)


def write_covariate_file(path, cells: dict) -> None:
    names = [k for k in cells if k not in COVARIATE_LEAD]
    cols = [cells["lat"], cells["lon"]] + [cells[n] for n in names]
    rows = ([str(cid)] + [fmt(c[i]) for c in cols] for i, cid in enumerate(cells["cell_id"]))
    write_csv(path, list(COVARIATE_LEAD) + names, rows)


def write_synthetic(out_dir, raw: dict, truth=None) -> dict[str, Path]:
    out = Path(out_dir)
    paths = {"stations": out / "stations.csv", "covariates": out / "covariates.csv"}
    write_station_file(paths["stations"], raw["series"], raw["lat"], raw["lon"])
    write_covariate_file(paths["covariates"], raw["cells"])
    if truth is not None:
        paths["truth"] = out / "truth.csv"
        rows = [(s.station_id, *map(fmt, truth.station_params[i]), *map(fmt, truth.station_tau[i]))
                for i, s in enumerate(raw["series"])]
        write_csv(paths["truth"], ("station_id", "mu", "kappa", "xi", "tau_mu", "tau_kappa",
                                   "tau_xi"), rows)
    return paths


# --------------------------------------------------------------------------
# Draw store
# --------------------------------------------------------------------------

def _draw_columns(draws: PosteriorDraws) -> list[str]:
    cols = ["iteration"]
    for f in FAMILIES:
        cols += [f"{f}:theta:{n}" for n in draws.column_names]
        cols += [f"{f}:incl:{n}" for n in draws.column_names]
        cols += [f"{f}:tau:{s}" for s in draws.site_ids]
        cols += [f"{f}:alpha", f"{f}:lambda"]
    return cols


def _draw_matrix(draws: PosteriorDraws) -> np.ndarray:
    blocks = [draws.iterations[:, None].astype(float)]
    for f in FAMILIES:
        d = draws.families[f]
        blocks += [d.theta, d.mask.astype(float), d.tau, d.alpha[:, None], d.lam[:, None]]
    return np.hstack(blocks)


def build_manifest(draws: PosteriorDraws, dataset: Dataset, config: RunConfig,
                   input_hashes: dict | None = None, binary: bool = False) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config_hash": config.hash(),
        "config": config.to_dict(),
        "seed": int(config.seed),
        "n_records": draws.n_draws,
        "storage": "npz" if binary else "csv",
        "site_ids": list(draws.site_ids),
        "coords": draws.coords.tolist(),
        "X": draws.X.tolist(),
        "column_names": list(draws.column_names),
        "standardization": dataset.standardization.to_dict(),
        "projection": dataset.projection.to_dict(),
        "frozen": {f: bool(draws.families[f].frozen) for f in FAMILIES},
        "acceptance": {f: a.to_dict() for f, a in draws.acceptance.families.items()},
        "acceptance_table": draws.acceptance.table(),
        "inputs": dict(sorted((input_hashes or {}).items())),
    }


def write_draw_store(out_dir, draws: PosteriorDraws, dataset: Dataset, config: RunConfig,
                     input_hashes: dict | None = None, binary: bool = False) -> Path:
    if draws.n_draws == 0:
        raise StoreError("refusing to write an empty draw store")
    out = Path(out_dir)
    expected = (config.iterations - config.burn_in) // config.thin
    if draws.n_draws != expected:
        raise StoreError(f"draw count {draws.n_draws} does not match configuration ({expected})")
    mat = _draw_matrix(draws)
    cols = _draw_columns(draws)
    if binary:
        with atomic_open(out / "draws.npz", "wb") as fh:
            np.savez(fh, columns=np.array(cols), values=mat)
    else:
        ncol = len(cols)
        int_cols = {0} | {k for k, c in enumerate(cols) if ":incl:" in c}
        with atomic_open(out / "draws.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in mat:
                w.writerow([str(int(row[k])) if k in int_cols else repr(float(row[k]))
                            for k in range(ncol)])
    manifest = build_manifest(draws, dataset, config, input_hashes, binary)
    with atomic_open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, ensure_ascii=False, sort_keys=True)
        fh.write("\n")
    return out


def read_draw_store(out_dir, config: RunConfig | None = None) -> tuple[PosteriorDraws, dict]:
    """Load draws; a config whose hash differs from the manifest is a hard error."""
    out = Path(out_dir)
    try:
        with open(out / "manifest.json", encoding="utf-8") as fh:
            man = json.load(fh)
    except FileNotFoundError:
        raise StoreError(f"no draw store in {out} (manifest.json missing)") from None
    if config is not None and config.hash() != man["config_hash"]:
        raise StoreError("configuration does not match the draw store (hash mismatch); "
                         "re-run fit with this configuration")
    cfg = RunConfig.from_dict(man["config"])
    if cfg.hash() != man["config_hash"]:
        raise StoreError("manifest is internally inconsistent (config hash)")
    if man["storage"] == "npz":
        with np.load(out / "draws.npz") as z:
            cols = [str(c) for c in z["columns"]]
            mat = z["values"]
    else:
        with open(out / "draws.csv", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            cols = next(reader)
            mat = np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(cols))
    if mat.shape[0] != man["n_records"]:
        raise StoreError(f"draw store has {mat.shape[0]} records, manifest says {man['n_records']}")
    if mat.shape[0] == 0:
        raise StoreError("draw store is empty")
    names = tuple(man["column_names"])
    sites = tuple(man["site_ids"])
    pos = {c: k for k, c in enumerate(cols)}
    fams = {}
    for f in FAMILIES:
        take = lambda keys: mat[:, [pos[k] for k in keys]]  # noqa: E731
        fams[f] = FamilyDraws(
            take([f"{f}:theta:{n}" for n in names]),
            take([f"{f}:incl:{n}" for n in names]).astype(bool),
            take([f"{f}:tau:{s}" for s in sites]),
            mat[:, pos[f"{f}:alpha"]].copy(), mat[:, pos[f"{f}:lambda"]].copy(),
            bool(man["frozen"][f]))
    acc = AcceptanceStats({f: FamilyAcceptance.from_dict(man["acceptance"][f]) for f in FAMILIES})
    draws = PosteriorDraws(fams, mat[:, 0].astype(np.int64), sites, np.asarray(man["coords"]),
                           np.asarray(man["X"]), names, acc, cfg.sampler())
    return draws, man


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

def linear_summary(draws: PosteriorDraws) -> list[tuple]:
    """Per family and term: inclusion probability, model-averaged mean, 95% interval."""
    rows = []
    for f in FAMILIES:
        d = draws.families[f]
        for k, n in enumerate(draws.column_names):
            th = d.theta[:, k]
            lo, hi = np.quantile(th, [0.025, 0.975])
            rows.append((f, n, float(d.mask[:, k].mean()), float(th.mean()), float(lo), float(hi)))
    return rows


def write_summary(out_dir, draws: PosteriorDraws) -> None:
    write_csv(Path(out_dir) / "summary_linear.csv", SUMMARY_HEADER, linear_summary(draws))


def write_acceptance(path, stats_list: Sequence[AcceptanceStats], chain_labels=None) -> None:
    header = list(ACCEPTANCE_HEADER)
    if chain_labels is not None:
        header = ["Chain"] + header
    rows = []
    for k, st in enumerate(stats_list):
        for r in st.table():
            row = [r["Model"]] + [r[h] for h in ACCEPTANCE_HEADER[1:]]
            rows.append(([str(chain_labels[k])] if chain_labels is not None else []) + row)
    write_csv(path, header, rows)


def write_raster(path, rl_map) -> None:
    rows = ((cid, rl_map.lat[i], rl_map.lon[i], rl_map.median[i], rl_map.lower[i],
             rl_map.upper[i]) for i, cid in enumerate(rl_map.cell_ids))
    write_csv(path, RASTER_HEADER, rows)


def write_raster_image(path, rl_map, values: str = "median") -> None:
    """Grayscale render of a regular-grid raster (requires matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lats = np.unique(rl_map.lat)
    lons = np.unique(rl_map.lon)
    img = np.full((lats.size, lons.size), np.nan)
    v = getattr(rl_map, values) if values != "width" else rl_map.width
    img[np.searchsorted(lats, rl_map.lat), np.searchsorted(lons, rl_map.lon)] = v
    fig, ax = plt.subplots(figsize=(5, 6))
    im = ax.imshow(img, origin="lower", cmap="gray",
                   extent=(lons[0], lons[-1], lats[0], lats[-1]), aspect="auto")
    fig.colorbar(im, ax=ax, label=values)
    ax.set_xlabel("lon")
    ax.set_ylabel("lat")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def write_cv_report(out_dir, report) -> None:
    out = Path(out_dir)
    write_csv(out / "cv_scores.csv", ("Scenario", "CRPS", "LS", "Folds", "Failed"),
              ([r["Scenario"], r["CRPS"], r["LS"], r["Folds"], r["Failed"]]
               for r in report.table()))
    rows = []
    for s, sc in report.scenarios.items():
        for f in sc.folds:
            if f.ok:
                rows.append((s, f.station_id, float(f.crps.mean()), float(f.ls.mean()),
                             len(f.crps), ""))
            else:
                rows.append((s, f.station_id, math.nan, math.nan, 0,
                             f.error.splitlines()[0]))
    write_csv(out / "cv_sites.csv", ("Scenario", "station_id", "CRPS", "LS", "n_obs", "error"),
              rows)


def emit_outputs(out_dir, draws: PosteriorDraws | None = None, dataset: Dataset | None = None,
                 config: RunConfig | None = None, maps: Sequence = (), cv=None,
                 input_hashes: dict | None = None, binary: bool = False,
                 image: bool = False) -> list[Path]:
    """Write the draw store, linear-term summary, acceptance table, rasters and CV report.

    Inputs are checked before anything is written so a failure leaves no
    partial output.
    """
    out = Path(out_dir)
    if draws is not None and draws.n_draws == 0:
        raise StoreError("empty draw store; nothing written")
    if draws is not None and (dataset is None or config is None):
        raise StoreError("dataset and config are required to write a draw store")
    written = []
    if draws is not None:
        write_draw_store(out, draws, dataset, config, input_hashes, binary)
        write_summary(out, draws)
        write_acceptance(out / "acceptance.csv", [draws.acceptance])
        written += [out / "manifest.json", out / "summary_linear.csv", out / "acceptance.csv"]
    from .predict import p_label

    for m in maps:
        p = out / f"raster_{p_label(m.p_exceed)}.csv"
        write_raster(p, m)
        written.append(p)
        if image:
            q = p.with_suffix(".png")
            write_raster_image(q, m)
            written.append(q)
    if cv is not None:
        write_cv_report(out, cv)
        written += [out / "cv_scores.csv", out / "cv_sites.csv"]
    return written

