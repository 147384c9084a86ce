"""
File formats: long CSV data, TOML run configs and simulation output.

A data file has a header row, a mandatory ``group`` column and one row per
observation.  A column whose every value parses as a float is numeric;
any other column is categorical.  Empty cells are errors (no imputation).
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, DataFormatError
from .likelihood import FitOptions
from .model import INTERCEPT, GroupedDataset, ObservationRecord, build_dataset

GROUP_COLUMN = "group"


def _parse_float(s):
    try:
        v = float(s)
    except ValueError:
        return None
    return v


def read_records(path, response, subgroups=(), group=GROUP_COLUMN):
    """Read a long-format CSV into :class:`ObservationRecord` objects."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}:1: empty file, header row required") from None
        except csv.Error as exc:
            raise DataFormatError(f"{path}:1: {exc}") from exc
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataFormatError(f"{path}:1: duplicate column names")
        for col in (group, response, *subgroups):
            if col not in header:
                raise DataFormatError(f"{path}:1: missing required column {col!r}")
        rows = []
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise DataFormatError(
                        f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
                cells = [c.strip() for c in row]
                for name, c in zip(header, cells):
                    if c == "":
                        raise DataFormatError(f"{path}:{line}: empty value in column {name!r}")
                rows.append((line, cells))
        except csv.Error as exc:
            raise DataFormatError(f"{path}:{reader.line_num}: {exc}") from exc
    if not rows:
        raise DataFormatError(f"{path}: no data rows")

    cols = {name: [r[1][j] for r in rows] for j, name in enumerate(header)}
    numeric = {}
    for name, vals in cols.items():
        parsed = [_parse_float(v) for v in vals]
        if all(p is not None for p in parsed):
            numeric[name] = parsed
    if response not in numeric:
        bad = next(i for i, v in enumerate(cols[response]) if _parse_float(v) is None)
        raise DataFormatError(
            f"{path}:{rows[bad][0]}: response {response!r} is not numeric "
            f"({cols[response][bad]!r})")

    records = []
    skip = {group, response, *subgroups}
    for i, (line, _) in enumerate(rows):
        y = numeric[response][i]
        if not np.isfinite(y):
            raise DataFormatError(f"{path}:{line}: non-finite response")
        cov = {name: (numeric[name][i] if name in numeric else cols[name][i])
               for name in header if name not in skip}
        sub = {name: cols[name][i] for name in subgroups}
        records.append(ObservationRecord(cols[group][i], y, cov, sub))
    return records


# ---------------------------------------------------------------------------
# run configuration

@dataclass
class RunConfig:
    data: str | None = None
    response: str = "y"
    group: str = GROUP_COLUMN
    subgroups: list = field(default_factory=list)
    mean: list = field(default_factory=lambda: [INTERCEPT])
    variance: list = field(default_factory=lambda: [INTERCEPT])
    correlation: list = field(default_factory=lambda: [INTERCEPT])
    out: str = "out"
    max_iter: int = 100
    tol: float = 1e-7
    restarts: int = 0
    seed: int = 0

    def fit_options(self) -> FitOptions:
        return FitOptions(max_iter=self.max_iter, tol=self.tol,
                          restarts=self.restarts, seed=self.seed)

    def validate(self, base=None):
        if self.data is None:
            raise ConfigError("no data file given")
        path = Path(self.data)
        if base is not None and not path.is_absolute():
            path = Path(base) / path
        if not path.is_file():
            raise ConfigError(f"data file {str(path)!r} does not exist")
        self.data = str(path)
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.restarts < 0:
            raise ConfigError("restarts must be non-negative")
        return self

    def load_dataset(self) -> GroupedDataset:
        records = read_records(self.data, self.response, self.subgroups, self.group)
        return build_dataset(records, self.mean, self.variance, self.correlation)


_LIST_KEYS = ("subgroups", "mean", "variance", "correlation")


def config_from_dict(d: dict) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    fit = d.get("fit", {})
    flat = {k: v for k, v in d.items() if k != "fit"}
    if not isinstance(fit, dict):
        raise ConfigError("[fit] must be a table")
    flat.update(fit)
    unknown = set(flat) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k in _LIST_KEYS:
        if k in flat:
            v = flat[k]
            if isinstance(v, str):
                v = [v]
            if not isinstance(v, list) or not all(isinstance(s, str) for s in v):
                raise ConfigError(f"{k} must be a list of strings")
            flat[k] = v
    try:
        cfg = RunConfig(**flat)
        cfg.max_iter, cfg.restarts, cfg.seed = int(cfg.max_iter), int(cfg.restarts), int(cfg.seed)
        cfg.tol = float(cfg.tol)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return cfg


def load_config(path, **overrides) -> RunConfig:
    """Read a TOML config; non-None ``overrides`` replace file entries.

    Relative ``data`` paths are resolved against the config file's directory.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot open ({exc.strerror})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent
    if overrides.get("data") is not None:
        base = Path.cwd()
    d.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(d).validate(base)


def _toml_value(v):
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v)


def dump_config(d: dict) -> str:
    """Render a flat dict (strings, numbers, string lists) as TOML."""
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in d.items() if v is not None)


# ---------------------------------------------------------------------------
# simulation output

def write_dataset_csv(data: GroupedDataset, path, response="y"):
    """Long-format CSV of a dataset's responses and stored covariates."""
    names = []
    for g in data.groups:
        for k in g.covariates:
            if k not in names:
                names.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([GROUP_COLUMN, response, *names])
        for g in data.groups:
            for j in range(g.size):
                w.writerow([g.group_id, repr(float(g.y[j]))]
                           + [repr(float(g.covariates[k][j])) for k in names])


def write_truth(path, truth, design):
    """JSON sidecar with the generating parameters and the design."""
    payload = {"design": {k: (list(v) if isinstance(v, tuple) else v)
                          for k, v in asdict(design).items()}}
    if truth is not None:
        payload.update(beta=truth.beta.tolist(), alpha=truth.alpha.tolist(),
                       lam=truth.lam.tolist())
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
