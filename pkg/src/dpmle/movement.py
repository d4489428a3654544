"""GPS track preprocessing: hourly regularisation, gap splitting, step lengths and turning angles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .emissions import wrap_angle
from .errors import DomainError

EARTH_RADIUS_KM = 6371.0088
HOUR = 3600


@dataclass
class RawTrack:
    """Fixes of one animal; ``times`` are UTC seconds since the epoch."""

    id: str
    times: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    covariates: np.ndarray | None = None
    covariate_names: tuple = ()

    def __post_init__(self):
        self.id = str(self.id)
        self.times = np.asarray(self.times, dtype=np.int64)
        self.lat = np.asarray(self.lat, dtype=float)
        self.lon = np.asarray(self.lon, dtype=float)
        n = self.times.shape[0]
        if self.lat.shape != (n,) or self.lon.shape != (n,):
            raise DomainError(f"track {self.id}: times, lat and lon must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError(f"track {self.id}: timestamps must be strictly increasing")
        if np.any(np.abs(self.lat) > 90) or np.any(np.abs(self.lon) > 180):
            raise DomainError(f"track {self.id}: coordinates out of range")
        self.covariate_names = tuple(self.covariate_names)
        if self.covariates is None:
            self.covariates = np.zeros((n, len(self.covariate_names)))
        self.covariates = np.asarray(self.covariates, dtype=float).reshape(n, len(self.covariate_names))

    def __len__(self):
        return self.times.shape[0]


@dataclass
class HourlyTrack:
    """Track on a contiguous hourly grid; missing hours have NaN coordinates.

    ``hours`` counts hours since the epoch; ``source_times`` keeps the
    original timestamp of each retained fix.
    """

    id: str
    hours: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()
    source_times: np.ndarray | None = None

    @property
    def observed(self):
        return ~np.isnan(self.lat)

    @property
    def n_fixes(self):
        return int(self.observed.sum())

    @property
    def missing_fraction(self):
        return 1.0 - self.n_fixes / len(self.hours) if len(self.hours) else 1.0

    def __len__(self):
        return len(self.hours)

    def slice(self, a, b, new_id=None):
        src = None if self.source_times is None else self.source_times[a:b]
        return HourlyTrack(new_id or self.id, self.hours[a:b], self.lat[a:b], self.lon[a:b],
                           self.covariates[a:b], self.covariate_names, src)


@dataclass
class StepAngleSeries:
    segment_id: str
    hours: np.ndarray
    step_km: np.ndarray
    angle_rad: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.hours)


def round_to_hour(seconds):
    """Nearest hour index; exact half hours round up."""
    return np.floor_divide(np.asarray(seconds, dtype=np.int64) + HOUR // 2, HOUR)


def regularize_hourly(track):
    """Snap fixes to the nearest hour, keeping the latest fix when several share an hour."""
    names = track.covariate_names
    if len(track) == 0:
        e = np.zeros(0)
        return HourlyTrack(track.id, np.zeros(0, dtype=np.int64), e, e, np.zeros((0, len(names))), names,
                           np.zeros(0, dtype=np.int64))
    h = round_to_hour(track.times)
    # times are increasing, so the last occurrence of each hour is the latest fix
    last = np.r_[h[1:] != h[:-1], True]
    h, keep = h[last], np.flatnonzero(last)
    hours = np.arange(h[0], h[-1] + 1, dtype=np.int64)
    pos = h - h[0]
    lat = np.full(len(hours), np.nan)
    lon = np.full(len(hours), np.nan)
    cov = np.full((len(hours), len(names)), np.nan)
    src = np.full(len(hours), -1, dtype=np.int64)
    lat[pos], lon[pos], cov[pos], src[pos] = track.lat[keep], track.lon[keep], track.covariates[keep], \
        track.times[keep]
    return HourlyTrack(track.id, hours, lat, lon, cov, names, src)


def _missing_runs(observed):
    """(start, stop) of each run of missing hours strictly inside the observed span."""
    runs, start = [], None
    for i, ok in enumerate(observed):
        if not ok and start is None:
            start = i
        elif ok and start is not None:
            runs.append((start, i))
            start = None
    return runs


def _trim(tr):
    idx = np.flatnonzero(tr.observed)
    if idx.size == 0:
        return None
    return tr.slice(idx[0], idx[-1] + 1)


def split_segments(track, gap_hours=12, min_len=6, max_missing_frac=0.5):
    """Cut an hourly track into analysable segments.

    A segment ends at any run of more than ``gap_hours`` missing hours.
    Segments whose missing fraction is not below ``max_missing_frac`` are
    cut again at their longest internal gap until they comply, and
    segments with fewer than ``min_len`` fixes are dropped.
    """
    tr = _trim(track)
    if tr is None:
        return []
    pieces, a = [], 0
    for s, e in _missing_runs(tr.observed):
        if e - s > gap_hours:
            pieces.append(tr.slice(a, s))
            a = e
    pieces.append(tr.slice(a, len(tr)))
    out = []
    stack = pieces[::-1]
    while stack:
        p = _trim(stack.pop())
        if p is None or p.n_fixes < min_len:
            continue
        if p.missing_fraction < max_missing_frac:
            out.append(p)
            continue
        runs = _missing_runs(p.observed)
        s, e = max(runs, key=lambda r: (r[1] - r[0], -r[0]))
        stack.extend([p.slice(e, len(p)), p.slice(0, s)])
    return [HourlyTrack(f"{track.id}-{k + 1}", p.hours, p.lat, p.lon, p.covariates, p.covariate_names,
                        p.source_times) for k, p in enumerate(out)]


def haversine(lat1, lon1, lat2, lon2, radius=EARTH_RADIUS_KM):
    """Great-circle distance in km between points given in degrees."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def bearing(lat1, lon1, lat2, lon2):
    """Initial great-circle bearing in radians, clockwise from north."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    x = np.sin(dlmb) * np.cos(p2)
    y = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dlmb)
    return np.arctan2(x, y)


def steps_and_angles(segment):
    """Step length from each hour to the next and the turning angle at each hour.

    Row ``t`` holds the step from fix ``t`` to ``t + 1`` and the turn made at
    fix ``t``: the bearing leaving ``t`` minus the bearing on arrival at
    ``t``, wrapped to (-pi, pi] (reversals give +pi).  Anything touching a
    missing hour is NaN, as are angles next to zero-length steps.
    """
    lat, lon = segment.lat, segment.lon
    n = len(lat)
    step = np.full(n, np.nan)
    angle = np.full(n, np.nan)
    if n >= 2:
        step[:-1] = haversine(lat[:-1], lon[:-1], lat[1:], lon[1:])
    if n >= 3:
        with np.errstate(invalid="ignore"):
            out_b = bearing(lat[1:-1], lon[1:-1], lat[2:], lon[2:])
            # arrival bearing at t = reverse of the initial bearing from t back to t-1
            in_b = bearing(lat[1:-1], lon[1:-1], lat[:-2], lon[:-2]) + np.pi
        ok = (step[:-2] > 0) & (step[1:-1] > 0)
        angle[1:-1] = np.where(ok, wrap_angle(out_b - in_b), np.nan)
    return StepAngleSeries(segment.id, segment.hours.copy(), step, angle, segment.covariates.copy(),
                           segment.covariate_names)


@dataclass
class PreprocessSummary:
    n_tracks: int = 0
    n_fixes_in: int = 0
    n_fixes_kept: int = 0
    segments: list = field(default_factory=list)
    dropped: list = field(default_factory=list)

    def to_dict(self):
        return {"n_tracks": self.n_tracks, "n_fixes_in": self.n_fixes_in, "n_fixes_kept": self.n_fixes_kept,
                "n_segments": len(self.segments), "segments": self.segments, "dropped": self.dropped}


def preprocess(tracks, gap_hours=12, min_len=6, max_missing_frac=0.5):
    """Full pipeline over several animals; returns step/angle series and a summary."""
    summary = PreprocessSummary()
    out = []
    for tr in tracks:
        summary.n_tracks += 1
        summary.n_fixes_in += len(tr)
        hourly = regularize_hourly(tr)
        segs = split_segments(hourly, gap_hours, min_len, max_missing_frac)
        kept = sum(s.n_fixes for s in segs)
        if hourly.n_fixes > kept:
            summary.dropped.append({"id": tr.id, "fixes_dropped": int(hourly.n_fixes - kept),
                                    "collisions": int(len(tr) - hourly.n_fixes)})
        elif len(tr) > hourly.n_fixes:
            summary.dropped.append({"id": tr.id, "fixes_dropped": 0, "collisions": int(len(tr) - hourly.n_fixes)})
        for s in segs:
            summary.n_fixes_kept += s.n_fixes
            summary.segments.append({"segment_id": s.id, "hours": len(s), "fixes": s.n_fixes,
                                     "missing_fraction": round(s.missing_fraction, 6)})
            out.append(steps_and_angles(s))
    return out, summary
