"""CSV and JSON readers/writers for observations, tracks, processed series and results."""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError
from .hmm import ObservationSet, Series
from .movement import RawTrack

SIM_COLUMNS = ("id", "t", "step")
TRACK_COLUMNS = ("id", "timestamp", "lat", "lon")
PROCESSED_COLUMNS = ("segment_id", "hour", "step_km", "angle_rad")


def atomic_write(path, text):
    """Write through a temporary file so failures never leave partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj):
    return json.dumps(_plain(obj), indent=1, sort_keys=True) + "\n"


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return _plain(x.item())
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(header, rows):
    import io as _io

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        rows = [(i + 2, r) for i, r in enumerate(reader) if r]
    return header, rows


def _float(text, line, col, allow_missing=False):
    text = text.strip()
    if text == "" and allow_missing:
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"column {col!r}: cannot parse {text!r} as a number", line) from None
    if math.isinf(v) or (not allow_missing and math.isnan(v)):
        raise ParseError(f"column {col!r}: non-finite value", line)
    return v


# -- simulated observations ----------------------------------------------------------------------


def simulation_csv(sim):
    cov_names = sim.obs.covariate_names
    rows = []
    for s in sim.obs.series:
        for t in range(len(s)):
            rows.append([s.id, t + 1, float(s.values[t, 0])] + [float(c) for c in s.covariates[t]])
    return _csv_text(list(SIM_COLUMNS) + list(cov_names), rows)


def write_simulation(sim, csv_path, truth_path):
    atomic_write(csv_path, simulation_csv(sim))
    atomic_write(truth_path, sim.truth_json() + "\n")


# -- generic observation loader ------------------------------------------------------------------


def detect_schema(header):
    if tuple(header[:3]) == SIM_COLUMNS:
        return "simulated"
    if tuple(header[:4]) == PROCESSED_COLUMNS:
        return "processed"
    if tuple(header[:4]) == TRACK_COLUMNS:
        return "track"
    return None


def read_observations(path, covariates=None):
    """Load a simulated (``id,t,step,...``) or processed (``segment_id,hour,step_km,angle_rad,...``) CSV.

    ``covariates`` names the extra columns used as transition covariates;
    ``None`` uses all of them.  Zero step lengths are treated as missing
    because the gamma density has no mass there.
    """
    header, rows = _read_rows(path)
    schema = detect_schema(header)
    if schema == "simulated":
        value_cols, kinds, channels = [2], ("positive",), ("step",)
        extra = header[3:]
    elif schema == "processed":
        value_cols, kinds, channels = [2, 3], ("positive", "angle"), ("step_km", "angle_rad")
        extra = header[4:]
    else:
        raise ParseError(f"{path}: unrecognised header {','.join(header)}; expected "
                         f"{','.join(SIM_COLUMNS)}[,...] or {','.join(PROCESSED_COLUMNS)}[,...]", line=1)
    if covariates is None:
        covariates = list(extra)
    missing = [c for c in covariates if c not in extra]
    if missing:
        raise ParseError(f"{path}: covariate column(s) {missing} not found", line=1)
    cov_idx = [header.index(c) for c in covariates]
    groups, order = {}, []
    for line, r in rows:
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", line)
        key = r[0].strip()
        if key not in groups:
            groups[key] = ([], [])
            order.append(key)
        vals = [_float(r[c], line, header[c], allow_missing=True) for c in value_cols]
        if schema == "simulated" and math.isnan(vals[0]):
            raise ParseError("missing step value", line)
        if vals[0] == 0.0:
            vals[0] = math.nan
        covs = [_float(r[c], line, header[c], allow_missing=True) for c in cov_idx]
        groups[key][0].append(vals)
        groups[key][1].append(covs)
    if not order:
        raise ParseError(f"{path}: no data rows", line=2)
    series = []
    for key in order:
        v, c = groups[key]
        c = np.asarray(c, dtype=float).reshape(len(v), len(cov_idx))
        if np.isnan(c).any():
            # carry the last observed covariate forward (and backward at the start)
            for j in range(c.shape[1]):
                col = c[:, j]
                ok = ~np.isnan(col)
                if not ok.any():
                    raise ParseError(f"series {key}: covariate {covariates[j]!r} is entirely missing")
                idx = np.where(ok, np.arange(len(col)), 0)
                np.maximum.accumulate(idx, out=idx)
                col = col[idx]
                first = np.flatnonzero(ok)[0]
                col[:first] = col[first]
                c[:, j] = col
        try:
            series.append(Series(np.asarray(v), c if cov_idx else None, id=key))
        except (DomainError, ValueError) as exc:
            raise ParseError(f"series {key}: {exc}") from None
    try:
        return ObservationSet(series, channels, tuple(covariates), kinds)
    except (DomainError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None


# -- raw tracks and processed output -------------------------------------------------------------


def parse_timestamp(text, line=None):
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(t)
    except ValueError:
        raise ParseError(f"bad ISO-8601 timestamp {text!r}", line) from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_hour(hour_index):
    return datetime.fromtimestamp(int(hour_index) * 3600, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def read_tracks(path):
    header, rows = _read_rows(path)
    schema = detect_schema(header)
    if schema == "processed":
        raise ParseError(f"{path} is already a processed step/angle file "
                         f"({','.join(PROCESSED_COLUMNS)}); preprocess expects {','.join(TRACK_COLUMNS)}", line=1)
    if schema != "track":
        raise ParseError(f"{path}: expected header {','.join(TRACK_COLUMNS)}[,covariate...], "
                         f"got {','.join(header)}", line=1)
    names = tuple(header[4:])
    groups, order = {}, []
    for line, r in rows:
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", line)
        key = r[0].strip()
        if key not in groups:
            groups[key] = []
            order.append(key)
        t = parse_timestamp(r[1], line)
        lat = _float(r[2], line, "lat")
        lon = _float(r[3], line, "lon")
        if abs(lat) > 90 or abs(lon) > 180:
            raise ParseError("coordinates out of range", line)
        cov = [_float(x, line, n, allow_missing=True) for x, n in zip(r[4:], names)]
        groups[key].append((t, lat, lon, cov, line))
    tracks = []
    for key in order:
        recs = groups[key]
        for a, b in zip(recs[:-1], recs[1:]):
            if b[0] <= a[0]:
                raise ParseError(f"track {key}: timestamps must be strictly increasing", b[4])
        tracks.append(RawTrack(key, [r[0] for r in recs], [r[1] for r in recs], [r[2] for r in recs],
                               np.asarray([r[3] for r in recs], dtype=float).reshape(len(recs), len(names)),
                               names))
    return tracks


def processed_csv(series_list, covariate_names=()):
    header = list(PROCESSED_COLUMNS) + list(covariate_names)
    rows = []
    for s in series_list:
        for i in range(len(s)):
            rows.append([s.segment_id, format_hour(s.hours[i]), s.step_km[i], s.angle_rad[i]]
                        + [float(c) for c in s.covariates[i]])
    return _csv_text(header, rows)
