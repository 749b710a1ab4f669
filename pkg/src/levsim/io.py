"""Configuration parsing and run serialization.

Run directory layout::

    timeseries.csv   t,price,log_return,xi,m,agg_leverage + per-fund column groups
    events.csv       t,fund,event
    summary.json     run summary statistics (null for absent values)
    manifest.json    config, seed, solver settings, version
    chi.txt          only when the run used externally supplied draws

Floats are written with 17 significant digits so they read back bit-exact.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import tempfile
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .config import ConfigError, ModelConfig
from .engine import RunArtifact
from .rng import save_chi
from .stats import RunSummary, summary

FUND_COLUMNS = ("wealth", "shares", "cash", "leverage", "margin_call", "flow")
BASE_COLUMNS = ("t", "price", "log_return", "xi", "m", "agg_leverage")

_INDEX = re.compile(r"^(\w+)\[(\d+|\*)\]$")


def parse_value(text: str):
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(data: dict, key: str, value) -> None:
    parts = key.split(".")
    node = data
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        m = _INDEX.match(part)
        if m:
            name, idx = m.group(1), m.group(2)
            seq = node.get(name)
            if not isinstance(seq, list):
                raise ConfigError(key, f"'{name}' is not a list")
            targets = range(len(seq)) if idx == "*" else [int(idx)]
            for j in targets:
                if j >= len(seq):
                    raise ConfigError(key, f"index {j} out of range ({len(seq)} entries)")
                if last:
                    seq[j] = value
                else:
                    _set_path(seq[j], ".".join(parts[i + 1:]), value)
            return
        if last:
            node[part] = value
        else:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(key, f"'{part}' is not an object")
            node = child


def apply_overrides(data: dict, overrides: Iterable[str]) -> dict:
    """Apply ``key=value`` overrides in order (last wins).

    Keys are dotted paths; list entries are addressed as ``funds[3]`` and
    ``funds[*]`` addresses every entry.  ``lambda_max`` alone sets every fund's cap.
    """
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, _, text = item.partition("=")
        key = key.strip()
        if key == "lambda_max":
            key = "funds[*].lambda_max"
        _set_path(data, key, parse_value(text.strip()))
    return data


def config_dict_with_defaults(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    base = ModelConfig().to_dict()
    for key, value in raw.items():
        if key == "policy" and isinstance(value, dict):
            base["policy"] = {**base["policy"], **value}
        else:
            base[key] = value
    return base


def parse_config(path: Optional[str | os.PathLike] = None, overrides: Iterable[str] = ()) -> ModelConfig:
    """Read a JSON config (missing keys take defaults) and apply overrides."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"malformed JSON: {exc.msg} at line {exc.lineno}") from None
    data = apply_overrides(config_dict_with_defaults(raw), overrides)
    return ModelConfig.from_dict(data)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def timeseries_header(n_funds: int) -> list[str]:
    cols = list(BASE_COLUMNS)
    for h in range(n_funds):
        cols.extend(f"{c}_{h}" for c in FUND_COLUMNS)
    return cols


def _timeseries_matrix(art: RunArtifact) -> tuple[np.ndarray, list[str]]:
    rec = art.records
    H = rec.n_funds
    cols = [rec.t.astype(np.float64), rec.price, rec.log_return, rec.xi, rec.m, rec.aggregate_leverage]
    fmts = ["%d"] + ["%.17g"] * 5
    lev = rec.leverage
    for h in range(H):
        cols.extend([rec.wealth[:, h], rec.shares[:, h], rec.cash[:, h], lev[:, h],
                     rec.margin_call[:, h].astype(np.float64), rec.flow[:, h]])
        fmts.extend(["%.17g"] * 4 + ["%d", "%.17g"])
    return np.column_stack(cols) if len(rec) else np.empty((0, len(cols))), fmts


def write_timeseries(art: RunArtifact, path: str | os.PathLike) -> None:
    mat, fmts = _timeseries_matrix(art)
    header = ",".join(timeseries_header(art.records.n_funds))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        if len(mat):
            np.savetxt(fh, mat, fmt=fmts, delimiter=",")


def write_events(art: RunArtifact, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write("t,fund,event\n")
        for e in art.events:
            fh.write(f"{e.t},{e.fund},{e.kind}\n")


def manifest(art: RunArtifact) -> dict:
    return {"config": art.config.to_dict(), **art.provenance}


def write_json(obj, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _atomic_dir_write(out_dir: str | os.PathLike, writers: dict) -> list[Path]:
    """Write every file into a scratch directory, then move them in place."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        for name, write in writers.items():
            write(tmp / name)
        paths = []
        for name in writers:
            os.replace(tmp / name, out / name)
            paths.append(out / name)
        return paths
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def emit_run(art: RunArtifact, out_dir: str | os.PathLike, compact: bool = False,
             chi: Optional[np.ndarray] = None) -> list[Path]:
    """Write a run directory; ``compact`` writes only summary and manifest."""
    man = manifest(art)
    writers = {}
    if not compact:
        writers["timeseries.csv"] = lambda p: write_timeseries(art, p)
        writers["events.csv"] = lambda p: write_events(art, p)
    if chi is not None:
        man["chi_file"] = "chi.txt"
        writers["chi.txt"] = lambda p: save_chi(p, chi[: art.config.T])
    writers["summary.json"] = lambda p: write_json(art.summary.to_dict(), p)
    writers["manifest.json"] = lambda p: write_json(man, p)
    return _atomic_dir_write(out_dir, writers)


def load_manifest(path: str | os.PathLike) -> tuple[ModelConfig, dict]:
    man = json.loads(Path(path).read_text())
    return ModelConfig.from_dict(man["config"]), man


def read_timeseries(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return {c: np.empty(0) for c in header}
    return {c: data[:, i] for i, c in enumerate(header)}


def read_events(path: str | os.PathLike) -> list[tuple[int, int, str]]:
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            t, h, kind = line.strip().split(",")
            rows.append((int(t), int(h), kind))
    return rows


def analyze(run_dir: str | os.PathLike) -> RunSummary:
    """Recompute ``summary.json`` from a run's timeseries and events."""
    run_dir = Path(run_dir)
    cfg, _ = load_manifest(run_dir / "manifest.json")
    ts = read_timeseries(run_dir / "timeseries.csv")
    events = read_events(run_dir / "events.csv")
    prices = np.concatenate([[cfg.V], ts["price"]])
    n_defaults = sum(1 for _, _, kind in events if kind == "default")
    margin_cols = [c for c in ts if c.startswith("margin_call_")]
    margin = (np.column_stack([ts[c] for c in margin_cols]).any(axis=1)
              if margin_cols else np.zeros(len(ts["price"]), dtype=bool))
    summ = summary(prices, cfg.V, n_defaults=n_defaults, margin_steps=margin)
    _atomic_dir_write(run_dir, {"summary.json": lambda p: write_json(summ.to_dict(), p)})
    return summ
