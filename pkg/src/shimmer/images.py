"""Float image container and lossless PFM / 16-bit PGM file I/O.

PFM stores float32 samples and round-trips bit-exactly; PGM quantizes to
16 bits and is meant for ground-truth previews.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

LOG_FLOOR = 1e-4  # intensity floor applied before any log conversion


@dataclass(frozen=True, eq=False)
class Image:
    """Intensity image, (H, W) or (H, W, 3) float64, finite and >= 0."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            pass
        elif arr.ndim == 3 and arr.shape[2] == 3:
            pass
        else:
            raise ValidationError(f"image must be (H,W) or (H,W,3), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("image contains non-finite samples")
        if (arr < 0).any():
            raise ValidationError("image contains negative samples")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def log(self) -> np.ndarray:
        """Natural log of the samples, floored at LOG_FLOOR."""
        return np.log(np.maximum(self.data, LOG_FLOOR))


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Single-channel latent frames over one exposure window.

    timestamps are microseconds, strictly increasing, and must lie inside
    [exposure_start, exposure_end].
    """

    frames: tuple
    timestamps: np.ndarray
    exposure_start: int
    exposure_end: int

    def __post_init__(self):
        frames = tuple(f if isinstance(f, Image) else Image(f) for f in self.frames)
        if not frames:
            raise ValidationError("frame sequence must contain at least one frame")
        shape = frames[0].data.shape
        for f in frames:
            if f.channels != 1:
                raise ValidationError("latent frames must be single-channel")
            if f.data.shape != shape:
                raise ValidationError("latent frames must share dimensions")
        ts = np.asarray(self.timestamps, dtype=np.int64).ravel()
        if len(ts) != len(frames):
            raise ValidationError(
                f"{len(frames)} frames but {len(ts)} timestamps"
            )
        if len(ts) > 1 and not (np.diff(ts) > 0).all():
            raise ValidationError("timestamps must be strictly increasing")
        if self.exposure_start > self.exposure_end:
            raise ValidationError("exposure_start must be <= exposure_end")
        if ts[0] < self.exposure_start or ts[-1] > self.exposure_end:
            raise ValidationError("timestamps must lie within the exposure window")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    def stack(self) -> np.ndarray:
        """(N, H, W) float64 array of the frames."""
        return np.stack([f.data for f in self.frames], axis=0)


def as_gray_array(image) -> np.ndarray:
    """float64 (H, W) view of an Image or array; color averages channels."""
    arr = image.data if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return np.asarray(arr, dtype=np.float64)


def _read_pfm(raw: bytes, path) -> Image:
    # header: magic line, "W H" line, scale line; then rows bottom-to-top
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PFM header")
        return raw[start:pos]

    magic = next_token()
    if magic not in (b"Pf", b"PF"):
        raise FormatError(f"{path}: bad PFM magic {magic!r}")
    channels = 1 if magic == b"Pf" else 3
    try:
        width = int(next_token())
        height = int(next_token())
        scale = float(next_token())
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PFM header") from exc
    if width <= 0 or height <= 0 or scale == 0:
        raise FormatError(f"{path}: malformed PFM header")
    pos += 1  # single whitespace byte after the scale line
    count = width * height * channels
    payload = raw[pos : pos + count * 4]
    if len(payload) != count * 4:
        raise FormatError(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    flat = np.frombuffer(payload, dtype=dtype, count=count)
    if channels == 1:
        arr = flat.reshape(height, width)
    else:
        arr = flat.reshape(height, width, 3)
    return Image(np.ascontiguousarray(arr[::-1]).astype(np.float64))


def _write_pfm(image: Image, path: Path) -> None:
    magic = b"Pf" if image.channels == 1 else b"PF"
    header = magic + b"\n%d %d\n-1.0\n" % (image.width, image.height)
    flipped = image.data[::-1].astype("<f4")
    path.write_bytes(header + flipped.tobytes())


def _read_pgm(raw: bytes, path) -> Image:
    pos = 2  # past magic

    def next_token():
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos : pos + 1]
            if ch == b"#":  # comment to end of line
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        return raw[start:pos]

    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if width <= 0 or height <= 0 or maxval not in (255, 65535):
        raise FormatError(f"{path}: unsupported PGM header")
    pos += 1
    if maxval == 255:
        count = width * height
        payload = raw[pos : pos + count]
        if len(payload) != count:
            raise FormatError(f"{path}: truncated PGM payload")
        arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    else:
        count = width * height
        payload = raw[pos : pos + count * 2]
        if len(payload) != count * 2:
            raise FormatError(f"{path}: truncated PGM payload")
        arr = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return Image(arr.astype(np.float64) / maxval)


def _write_pgm(image: Image, path: Path) -> None:
    if image.channels != 1:
        raise ValidationError("PGM output requires a single-channel image")
    q = np.round(np.clip(image.data, 0.0, 1.0) * 65535.0).astype(">u2")
    header = b"P5\n%d %d\n65535\n" % (image.width, image.height)
    path.write_bytes(header + q.tobytes())


def read_image(path) -> Image:
    """Read a PFM ("Pf"/"PF") or binary PGM ("P5") image."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] in (b"Pf", b"PF"):
        return _read_pfm(raw, path)
    if raw[:2] == b"P5":
        return _read_pgm(raw, path)
    raise FormatError(f"{path}: unrecognized image magic {raw[:2]!r}")


def write_image(image: Image, path) -> None:
    """Write PFM or PGM depending on the file suffix (.pfm / .pgm)."""
    if not isinstance(image, Image):
        image = Image(np.asarray(image))
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        _write_pfm(image, path)
    elif suffix == ".pgm":
        _write_pgm(image, path)
    else:
        raise ValidationError(f"unsupported image suffix {suffix!r} (use .pfm/.pgm)")


def save_flow_pfm(u: np.ndarray, v: np.ndarray, path) -> None:
    """Pack a 2D displacement field into a color PFM (u, v, 0)."""
    h, w = u.shape
    packed = np.zeros((h, w, 3), dtype=np.float64)
    packed[:, :, 0] = u
    packed[:, :, 1] = v
    magic = b"PF"
    header = magic + b"\n%d %d\n-1.0\n" % (w, h)
    Path(path).write_bytes(header + packed[::-1].astype("<f4").tobytes())


def load_flow_pfm(path):
    """Inverse of save_flow_pfm; returns a TiltFlow.

    Separate from read_image because displacements may be negative, which
    the Image container rejects.
    """
    from .turbsim import TiltFlow

    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] != b"PF":
        raise FormatError(f"{path}: flow file must be a color PFM")
    pos = 0
    tokens = []
    for _ in range(4):  # magic, width, height, scale
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PFM header")
        tokens.append(raw[start:pos])
    pos += 1
    w, h = int(tokens[1]), int(tokens[2])
    scale = float(tokens[3])
    dtype = "<f4" if scale < 0 else ">f4"
    payload = raw[pos : pos + w * h * 12]
    if len(payload) != w * h * 12:
        raise FormatError(f"{path}: truncated PFM payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(h, w, 3)[::-1].astype(np.float64)
    return TiltFlow(np.ascontiguousarray(arr[:, :, 0]), np.ascontiguousarray(arr[:, :, 1]))
