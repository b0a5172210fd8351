"""Event-stream domain types and bit-exact EVTB / CSV serialization.

An event stream is stored struct-of-arrays (int64 t, int32 x/y, int8 p) in
canonical order: sorted by t, ties broken by (y, x, p) ascending.  The EVTB
container is little-endian: a 20-byte header (magic "EVTB", u32 version=1,
u16 width, u16 height, u64 count) followed by 16-byte records
(t i64 microseconds, x u16, y u16, p i8, 3 zero pad bytes).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError, ValidationError

EVTB_MAGIC = b"EVTB"
EVTB_VERSION = 1

_HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("width", "<u2"),
        ("height", "<u2"),
        ("count", "<u8"),
    ]
)

_RECORD = np.dtype(
    [
        ("t", "<i8"),
        ("x", "<u2"),
        ("y", "<u2"),
        ("p", "i1"),
        ("pad", "u1", (3,)),
    ]
)

assert _HEADER.itemsize == 20 and _RECORD.itemsize == 16


@dataclass(frozen=True)
class Event:
    """Single event: column x, row y, timestamp t (microseconds), polarity p."""

    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class ThresholdModel:
    """Spatio-temporally varying contrast threshold.

    Per pixel, a base threshold is drawn from N(c_mean, c_std) and clamped to
    [c_min, c_max]; each individual crossing additionally jitters the
    instantaneous threshold by N(0, temporal_jitter_std).
    """

    c_mean: float = 0.2
    c_std: float = 0.03
    c_min: float = 0.05
    c_max: float = 0.5
    temporal_jitter_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.c_min <= self.c_mean <= self.c_max):
            raise ValidationError(
                f"threshold bounds must satisfy 0 < c_min <= c_mean <= c_max, "
                f"got c_min={self.c_min}, c_mean={self.c_mean}, c_max={self.c_max}"
            )
        if self.c_std < 0:
            raise ValidationError(f"c_std must be >= 0, got {self.c_std}")
        if self.temporal_jitter_std < 0:
            raise ValidationError(
                f"temporal_jitter_std must be >= 0, got {self.temporal_jitter_std}"
            )


def canonical_order(t, y, x, p):
    """Indices sorting events by t, ties by (y, x, p) ascending."""
    return np.lexsort((p, x, y, t))


@dataclass(frozen=True)
class EventStream:
    """Canonically ordered events on a width x height sensor.

    Behaves as a sequence of Event (len / iteration / indexing); the raw
    column arrays t, x, y, p are the primary representation.
    """

    width: int
    height: int
    t: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    x: np.ndarray = field(default_factory=lambda: np.empty(0, np.int32))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, np.int32))
    p: np.ndarray = field(default_factory=lambda: np.empty(0, np.int8))

    def __post_init__(self):
        if not (1 <= self.width <= 65535 and 1 <= self.height <= 65535):
            raise ValidationError(
                f"sensor dims must be in [1, 65535], got {self.width}x{self.height}"
            )
        t = np.asarray(self.t, dtype=np.int64).ravel()
        x = np.asarray(self.x, dtype=np.int64).ravel()
        y = np.asarray(self.y, dtype=np.int64).ravel()
        p = np.asarray(self.p, dtype=np.int64).ravel()
        if not (len(t) == len(x) == len(y) == len(p)):
            raise ValidationError("event columns have mismatched lengths")
        if len(x) and ((x < 0).any() or (x >= self.width).any()):
            raise ValidationError("event x out of sensor bounds")
        if len(y) and ((y < 0).any() or (y >= self.height).any()):
            raise ValidationError("event y out of sensor bounds")
        if len(p) and not np.isin(p, (-1, 1)).all():
            raise ValidationError("event polarity must be +1 or -1")
        order = canonical_order(t, y, x, p)
        object.__setattr__(self, "t", np.ascontiguousarray(t[order]))
        object.__setattr__(self, "x", np.ascontiguousarray(x[order].astype(np.int32)))
        object.__setattr__(self, "y", np.ascontiguousarray(y[order].astype(np.int32)))
        object.__setattr__(self, "p", np.ascontiguousarray(p[order].astype(np.int8)))

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    @property
    def events(self) -> list:
        return list(self)


def slice_events(stream: EventStream, t0: int, t1: int) -> EventStream:
    """Events with t0 <= t < t1, order preserved."""
    if t0 > t1:
        raise ArgumentError(f"slice bounds reversed: t0={t0} > t1={t1}")
    lo = int(np.searchsorted(stream.t, t0, side="left"))
    hi = int(np.searchsorted(stream.t, t1, side="left"))
    return EventStream(
        stream.width,
        stream.height,
        stream.t[lo:hi],
        stream.x[lo:hi],
        stream.y[lo:hi],
        stream.p[lo:hi],
    )


def write_events(stream: EventStream, path) -> None:
    """Write EVTB (default) or CSV "t,x,y,p" when the suffix is .csv."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        lines = ["t,x,y,p"]
        for i in range(len(stream)):
            lines.append(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{stream.p[i]}")
        path.write_text("\n".join(lines) + "\n")
        return
    header = np.zeros(1, dtype=_HEADER)
    header["magic"] = EVTB_MAGIC
    header["version"] = EVTB_VERSION
    header["width"] = stream.width
    header["height"] = stream.height
    header["count"] = len(stream)
    records = np.zeros(len(stream), dtype=_RECORD)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    path.write_bytes(header.tobytes() + records.tobytes())


def _read_evtb(raw: bytes, path) -> EventStream:
    if len(raw) < _HEADER.itemsize:
        raise FormatError(f"{path}: truncated EVTB header")
    header = np.frombuffer(raw, dtype=_HEADER, count=1)[0]
    if bytes(header["magic"]) != EVTB_MAGIC:
        raise FormatError(f"{path}: bad magic {bytes(header['magic'])!r}")
    if int(header["version"]) != EVTB_VERSION:
        raise FormatError(f"{path}: unsupported EVTB version {int(header['version'])}")
    count = int(header["count"])
    body = raw[_HEADER.itemsize :]
    if len(body) != count * _RECORD.itemsize:
        raise FormatError(
            f"{path}: expected {count} records ({count * _RECORD.itemsize} bytes), "
            f"got {len(body)} bytes"
        )
    records = np.frombuffer(body, dtype=_RECORD)
    return EventStream(
        int(header["width"]),
        int(header["height"]),
        records["t"].astype(np.int64),
        records["x"].astype(np.int64),
        records["y"].astype(np.int64),
        records["p"].astype(np.int64),
    )


def _read_csv(text: str, path, width, height) -> EventStream:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "t,x,y,p":
        raise FormatError(f"{path}: CSV events must start with header 't,x,y,p'")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise FormatError(f"{path}: malformed CSV row {ln!r}")
        try:
            rows.append(tuple(int(v) for v in parts))
        except ValueError as exc:
            raise FormatError(f"{path}: non-integer CSV field in {ln!r}") from exc
    if rows:
        arr = np.asarray(rows, dtype=np.int64)
        t, x, y, p = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    else:
        t = x = y = p = np.empty(0, np.int64)
    # CSV carries no sensor dims; infer the tightest bounds unless given.
    if width is None:
        width = int(x.max()) + 1 if len(x) else 1
    if height is None:
        height = int(y.max()) + 1 if len(y) else 1
    return EventStream(width, height, t, x, y, p)


def read_events(path, width: int | None = None, height: int | None = None) -> EventStream:
    """Read an EVTB or CSV event file into a validated, canonical stream.

    width/height override the inferred sensor size for CSV input; for EVTB
    they are checked against the header if supplied.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == EVTB_MAGIC:
        stream = _read_evtb(raw, path)
        if width is not None and width != stream.width:
            raise ValidationError(f"{path}: header width {stream.width} != {width}")
        if height is not None and height != stream.height:
            raise ValidationError(f"{path}: header height {stream.height} != {height}")
        return stream
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not EVTB and not UTF-8 CSV") from exc
    return _read_csv(text, path, width, height)
