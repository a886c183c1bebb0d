"""Pose sequence data model, binary file format, validation, and flattening.

A pose sequence is T frames of K keypoints with C coordinates each (C is 2
or 3), plus a per-keypoint confidence in [0, 1] where 0 marks a missing
detection. Keypoints are grouped into named components (body, left-hand,
right-hand, ...) so downstream code can select subsets.

Binary file layout (little-endian), magic ``P2TX``:

    magic            4 bytes  b"P2TX"
    format version   u16      currently 1
    C                u16      coordinates per keypoint, 2 or 3
    fps numerator    u32
    fps denominator  u32
    T                u32      frame count
    K                u32      keypoint count
    component count  u16
    per component:   name length u16, UTF-8 name, start u32, end u32
    coordinates      T*K*C float32, frame-major, keypoint-next, coord-last
    confidences      T*K float32

Coordinates are stored raw (no clamping); ``validate`` reports values that
violate the normalized [0, 1] convention.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import BinaryIO, Iterable, NamedTuple, Sequence

import numpy as np

MAGIC = b"P2TX"
FORMAT_VERSION = 1

_U16_MAX = 0xFFFF
_U32_MAX = 0xFFFFFFFF


class PoseError(Exception):
    """Base class for pose file and pose data errors."""


class PoseFormatError(PoseError):
    """Structurally invalid pose file (bad magic, version, or header fields)."""


class PoseTruncationError(PoseError):
    """Pose stream ends before the declared header or payload is complete."""


class PoseCorruptionError(PoseError):
    """Pose payload contains non-finite values."""

    def __init__(self, message: str, frame: int, keypoint: int):
        super().__init__(message)
        self.frame = frame
        self.keypoint = keypoint


class Component(NamedTuple):
    """A named keypoint group covering index range [start, end)."""

    name: str
    start: int
    end: int


@dataclass
class Diagnostic:
    """One validation finding: machine-readable code plus location."""

    code: str
    severity: str
    message: str
    frame: int | None = None
    keypoint: int | None = None


def _check_components(components: Sequence[Component], k: int) -> None:
    if not components:
        raise ValueError("at least one component is required")
    names = [c.name for c in components]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate component names: {names}")
    spans = sorted(components, key=lambda c: c.start)
    cursor = 0
    for c in spans:
        if c.start != cursor or c.end <= c.start:
            raise ValueError(
                f"component ranges must be disjoint and cover [0, {k}): got {components}"
            )
        cursor = c.end
    if cursor != k:
        raise ValueError(
            f"component ranges cover [0, {cursor}) but K = {k}: got {components}"
        )


@dataclass(eq=False)
class PoseSequence:
    """Immutable T x K x C pose sequence with per-keypoint confidence.

    Structural invariants (shape, C, fps sign, component coverage) are
    enforced at construction. Value-level invariants (finiteness, the
    [0, 1] coordinate convention) are reported by :func:`validate` so raw
    ingests can be represented and then flagged.
    """

    fps: Fraction
    frames: np.ndarray
    confidence: np.ndarray
    components: tuple[Component, ...]

    def __post_init__(self):
        self.fps = Fraction(self.fps)
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 3:
            raise ValueError(f"frames must be T x K x C, got shape {frames.shape}")
        t, k, c = frames.shape
        if t < 1 or k < 1:
            raise ValueError(f"need T >= 1 and K >= 1, got T={t}, K={k}")
        if c not in (2, 3):
            raise ValueError(f"C must be 2 or 3, got {c}")
        confidence = np.asarray(self.confidence, dtype=np.float32)
        if confidence.shape != (t, k):
            raise ValueError(
                f"confidence must be T x K = {(t, k)}, got shape {confidence.shape}"
            )
        self.components = tuple(
            Component(str(name), int(start), int(end))
            for name, start, end in self.components
        )
        _check_components(self.components, k)
        frames = frames.copy()
        confidence = confidence.copy()
        frames.flags.writeable = False
        confidence.flags.writeable = False
        self.frames = frames
        self.confidence = confidence

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_keypoints(self) -> int:
        return self.frames.shape[1]

    @property
    def num_coords(self) -> int:
        return self.frames.shape[2]

    def component_range(self, name: str) -> tuple[int, int]:
        for c in self.components:
            if c.name == name:
                return c.start, c.end
        known = [c.name for c in self.components]
        raise ValueError(f"unknown component {name!r}, have {known}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, PoseSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.components == other.components
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.confidence, other.confidence)
        )


@dataclass(eq=False)
class FeatureSequence:
    """T x D per-frame feature matrix produced by :func:`flatten`.

    ``frame_mask`` is all-true for unpadded sequences; it exists so batched
    consumers can mark padding frames.
    """

    fps: Fraction
    features: np.ndarray
    frame_mask: np.ndarray

    def __post_init__(self):
        self.fps = Fraction(self.fps)
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        features = np.asarray(self.features, dtype=np.float32)
        if features.ndim != 2:
            raise ValueError(f"features must be T x D, got shape {features.shape}")
        mask = np.asarray(self.frame_mask, dtype=bool)
        if mask.shape != (features.shape[0],):
            raise ValueError(
                f"frame_mask must have length {features.shape[0]}, got shape {mask.shape}"
            )
        features = features.copy()
        mask = mask.copy()
        features.flags.writeable = False
        mask.flags.writeable = False
        self.features = features
        self.frame_mask = mask

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.frame_mask, other.frame_mask)
        )


def save_pose(p: PoseSequence) -> bytes:
    """Serialize a pose sequence to the bit-exact binary layout above.

    Two calls on the same sequence produce identical byte streams.
    """
    t, k, c = p.frames.shape
    num, den = p.fps.numerator, p.fps.denominator
    if not (0 < num <= _U32_MAX and 0 < den <= _U32_MAX):
        raise ValueError(f"fps {p.fps} does not fit u32/u32")
    if t > _U32_MAX or k > _U32_MAX or len(p.components) > _U16_MAX:
        raise ValueError("sequence too large for the file format")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HHIIII", FORMAT_VERSION, c, num, den, t, k))
    out.write(struct.pack("<H", len(p.components)))
    for comp in p.components:
        name = comp.name.encode("utf-8")
        if len(name) > _U16_MAX:
            raise ValueError(f"component name too long: {comp.name!r}")
        out.write(struct.pack("<H", len(name)))
        out.write(name)
        out.write(struct.pack("<II", comp.start, comp.end))
    out.write(np.ascontiguousarray(p.frames, dtype="<f4").tobytes())
    out.write(np.ascontiguousarray(p.confidence, dtype="<f4").tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise PoseTruncationError(
                f"stream ends while reading {what}: need {n} bytes at offset "
                f"{self.pos}, have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_pose(data: bytes | BinaryIO) -> PoseSequence:
    """Parse a pose file written by :func:`save_pose`.

    The [0, 1] coordinate convention is deliberately not enforced here;
    run :func:`validate` on the result. Non-finite payload values raise
    :class:`PoseCorruptionError` with the offending frame/keypoint.
    """
    if hasattr(data, "read"):
        data = data.read()
    r = _Reader(bytes(data))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise PoseFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, c, num, den, t, k = r.unpack("<HHIIII", "header")
    if version != FORMAT_VERSION:
        raise PoseFormatError(f"unsupported format version {version}")
    if c not in (2, 3):
        raise PoseFormatError(f"C must be 2 or 3, got {c}")
    if den == 0 or num == 0:
        raise PoseFormatError(f"invalid fps {num}/{den}")
    if t < 1 or k < 1:
        raise PoseFormatError(f"need T >= 1 and K >= 1, got T={t}, K={k}")
    (n_comp,) = r.unpack("<H", "component count")
    components = []
    for i in range(n_comp):
        (name_len,) = r.unpack("<H", f"component {i} name length")
        raw_name = r.take(name_len, f"component {i} name")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as e:
            raise PoseFormatError(f"component {i} name is not valid UTF-8") from e
        start, end = r.unpack("<II", f"component {i} range")
        components.append(Component(name, start, end))
    coords = np.frombuffer(r.take(t * k * c * 4, "coordinates"), dtype="<f4")
    conf = np.frombuffer(r.take(t * k * 4, "confidences"), dtype="<f4")
    if r.pos != len(r.data):
        raise PoseFormatError(f"{len(r.data) - r.pos} trailing bytes after payload")
    frames = coords.reshape(t, k, c)
    bad = ~np.isfinite(frames)
    if bad.any():
        fi, ki, _ = np.argwhere(bad)[0]
        raise PoseCorruptionError(
            f"non-finite coordinate at frame {fi}, keypoint {ki}", int(fi), int(ki)
        )
    conf = conf.reshape(t, k)
    bad = ~np.isfinite(conf)
    if bad.any():
        fi, ki = np.argwhere(bad)[0]
        raise PoseCorruptionError(
            f"non-finite confidence at frame {fi}, keypoint {ki}", int(fi), int(ki)
        )
    try:
        return PoseSequence(Fraction(num, den), frames, conf, tuple(components))
    except ValueError as e:
        raise PoseFormatError(str(e)) from e


def validate(p: PoseSequence) -> list[Diagnostic]:
    """Check value-level invariants; an empty list means the pose is clean.

    Emitted codes: ``non-finite-coord``, ``non-finite-confidence``,
    ``confidence-out-of-range``, and ``coord-out-of-range`` (coordinates of
    keypoints with confidence > 0 must lie in the normalized [0, 1] range).
    """
    diags: list[Diagnostic] = []

    def add(code: str, mask2d: np.ndarray, fmt: str) -> None:
        for fi, ki in np.argwhere(mask2d):
            diags.append(
                Diagnostic(
                    code=code,
                    severity="error",
                    message=fmt.format(frame=fi, keypoint=ki),
                    frame=int(fi),
                    keypoint=int(ki),
                )
            )

    finite_frames = np.isfinite(p.frames)
    add(
        "non-finite-coord",
        ~finite_frames.all(axis=2),
        "non-finite coordinate at frame {frame}, keypoint {keypoint}",
    )
    finite_conf = np.isfinite(p.confidence)
    add(
        "non-finite-confidence",
        ~finite_conf,
        "non-finite confidence at frame {frame}, keypoint {keypoint}",
    )
    conf_bad = finite_conf & ((p.confidence < 0.0) | (p.confidence > 1.0))
    add(
        "confidence-out-of-range",
        conf_bad,
        "confidence outside [0, 1] at frame {frame}, keypoint {keypoint}",
    )
    valid_kp = finite_conf & (p.confidence > 0.0) & ~conf_bad
    in_range = finite_frames & (p.frames >= 0.0) & (p.frames <= 1.0)
    coord_bad = valid_kp & ~(in_range.all(axis=2)) & finite_frames.all(axis=2)
    add(
        "coord-out-of-range",
        coord_bad,
        "coordinate outside [0, 1] at frame {frame}, keypoint {keypoint}",
    )
    return diags


def flatten(p: PoseSequence, selection: Sequence[str], fill: float = 0.0) -> FeatureSequence:
    """Flatten selected components into T x D per-frame feature rows.

    Row layout follows the order of ``selection``, then keypoint index,
    then coordinate (x, y[, z]); D = K' * C for K' selected keypoints.
    Keypoints with confidence exactly 0 are replaced by ``fill`` in all C
    coordinates, so imputation of missing detections is explicit.
    """
    if not selection:
        raise ValueError("selection must name at least one component")
    blocks = []
    for name in selection:
        start, end = p.component_range(name)
        coords = p.frames[:, start:end, :].copy()
        missing = p.confidence[:, start:end] == 0.0
        coords[missing] = np.float32(fill)
        blocks.append(coords.reshape(p.num_frames, -1))
    features = np.concatenate(blocks, axis=1)
    return FeatureSequence(
        fps=p.fps,
        features=features,
        frame_mask=np.ones(p.num_frames, dtype=bool),
    )


def read_pose_jsonl(
    lines: Iterable[str],
    fps: Fraction,
    components: Sequence[Component] | None = None,
) -> PoseSequence:
    """Build a pose sequence from a JSON-lines pose-estimator dump.

    Each line is one frame object with a ``keypoints`` array (K rows of C
    coordinates) and an optional ``confidence`` array (K values, default
    all 1.0). Frame rate and component spans are not part of the
    interchange format and must be supplied by the caller; by default all
    keypoints form a single ``body`` component.
    """
    frames = []
    confs = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise PoseFormatError(f"line {lineno}: invalid JSON: {e}") from e
        if "keypoints" not in obj:
            raise PoseFormatError(f"line {lineno}: missing 'keypoints'")
        kp = np.asarray(obj["keypoints"], dtype=np.float32)
        if kp.ndim != 2:
            raise PoseFormatError(
                f"line {lineno}: keypoints must be a K x C array, got shape {kp.shape}"
            )
        if "confidence" in obj:
            cf = np.asarray(obj["confidence"], dtype=np.float32)
        else:
            cf = np.ones(kp.shape[0], dtype=np.float32)
        if cf.shape != (kp.shape[0],):
            raise PoseFormatError(
                f"line {lineno}: confidence must have K = {kp.shape[0]} values"
            )
        if frames and kp.shape != frames[0].shape:
            raise PoseFormatError(
                f"line {lineno}: keypoint shape {kp.shape} differs from "
                f"first frame {frames[0].shape}"
            )
        frames.append(kp)
        confs.append(cf)
    if not frames:
        raise PoseFormatError("no frames in stream")
    stacked = np.stack(frames)
    if components is None:
        components = (Component("body", 0, stacked.shape[1]),)
    try:
        return PoseSequence(Fraction(fps), stacked, np.stack(confs), tuple(components))
    except ValueError as e:
        raise PoseFormatError(str(e)) from e
