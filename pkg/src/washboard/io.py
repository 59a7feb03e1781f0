"""Delimited and JSON output with embedded provenance.

Every CSV starts with one comment line ``# schema=<name> schema_version=<n>
config_sha256=<hash> [key=value ...]`` followed by a header row. JSON files
carry the same three fields at top level. See FORMATS.md for the tables.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from washboard.ramp import EscapeEventSet, RampConfig

FILE_SCHEMA_VERSION = 1
EVENTS_HEADER = ("trial", "t_escape_s", "escaped")

PathLike = Union[str, Path]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _meta_line(schema: str, config_sha256: str, extra: Optional[dict]) -> str:
    parts = [f"schema={schema}", f"schema_version={FILE_SCHEMA_VERSION}", f"config_sha256={config_sha256}"]
    parts += [f"{k}={v}" for k, v in (extra or {}).items()]
    return "# " + " ".join(parts) + "\n"


def write_csv(path: PathLike, schema: str, header: Sequence[str], columns: Sequence[Iterable],
              config_sha256: str, extra: Optional[dict] = None) -> Path:
    """Write equal-length ``columns`` under ``header``; floats keep full precision."""
    cols = [list(c) for c in columns]
    if len(cols) != len(header):
        raise ValueError("header and columns differ in length")
    if len({len(c) for c in cols}) > 1:
        raise ValueError("columns have unequal lengths")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(_meta_line(schema, config_sha256, extra))
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, columns)``; comment lines are parsed as ``key=value`` pairs."""
    meta: dict = {}
    rows = []
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if ln.strip()]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            for tok in ln[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        else:
            body.append(ln)
    reader = csv.reader(body)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: no header row") from None
    rows = [r for r in reader]
    cols = {}
    for k, name in enumerate(header):
        try:
            cols[name.strip()] = np.array([float(r[k]) for r in rows])
        except (ValueError, IndexError):
            raise ValueError(f"{path}: non-numeric or missing value in column {name!r}") from None
    return meta, cols


def write_json(path: PathLike, schema: str, payload: dict, config_sha256: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema": schema, "schema_version": FILE_SCHEMA_VERSION, "config_sha256": config_sha256}
    doc.update(payload)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _ramp_dict(r: RampConfig) -> dict:
    return {"i_start_A": r.i_start, "i_max_A": r.i_max, "di_dt_A_per_s": r.di_dt,
            "n_trials": r.n_trials, "seed": r.seed}


def write_events(out_dir: PathLike, events: EscapeEventSet, config_sha256: str,
                 stem: str = "events") -> tuple[Path, Path]:
    """Event table plus a JSON sidecar holding the ramp and the model parameters."""
    out_dir = Path(out_dir)
    csv_path = write_csv(
        out_dir / f"{stem}.csv", "escape_events", EVENTS_HEADER,
        [np.arange(events.n_trials), events.timestamps, events.escaped], config_sha256,
    )
    sidecar = write_json(
        out_dir / f"{stem}.json", "escape_events_sidecar",
        {"ramp": _ramp_dict(events.config), "n_escaped": events.n_escaped,
         "calibration": {"i_at_t0_A": events.config.i_start, "t0_s": 0.0,
                         "di_dt_A_per_s": events.config.di_dt},
         "meta": events.meta},
        config_sha256,
    )
    return csv_path, sidecar


def read_events(path: PathLike) -> EscapeEventSet:
    """Read an event CSV and, if present, its sidecar (same stem, ``.json``).

    Without a sidecar the ramp is unknown; a placeholder configuration is
    attached and callers must provide the current calibration explicitly.
    """
    path = Path(path)
    meta, cols = read_csv(path)
    missing = [c for c in EVENTS_HEADER if c not in cols]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    order = np.argsort(cols["trial"], kind="stable")
    t = cols["t_escape_s"][order]
    escaped = cols["escaped"][order].astype(bool)
    side = path.with_suffix(".json")
    info: dict = {"file_meta": meta}
    if side.exists():
        doc = json.loads(side.read_text())
        r = doc["ramp"]
        ramp = RampConfig(r["i_start_A"], r["i_max_A"], r["di_dt_A_per_s"], int(r["n_trials"]), int(r["seed"]))
        info.update(doc.get("meta", {}))
        info["calibration"] = doc.get("calibration")
    else:
        ramp = RampConfig(0.0, 1.0, 1.0, max(len(t), 1), 0)
        info["calibration"] = None
    return EscapeEventSet(timestamps=t, escaped=escaped, config=ramp, meta=info)
