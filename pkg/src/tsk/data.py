"""Feature files, annotation records, dataset manifests and synthetic data.

Feature files (``.tskf``) are little-endian::

    magic  b"TSKF"
    u32    format version (1)
    u32    T   frames
    u32    D   feature dimension
    f32    fps
    f32    T*D values, row-major
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"TSKF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIIf")

ACTIVITY_CLASSES = ("ball", "strike", "swing", "hit", "foul", "in_play", "bunt", "hit_by_pitch")
NO_ACTIVITY = "no_activity"
PITCH_TYPES = ("fastball", "sinker", "curveball", "changeup", "slider", "knuckle_curve")


# -- feature files ------------------------------------------------------------


class FeatureFormatError(ValueError):
    """Base class for unreadable feature files."""


class BadMagicError(FeatureFormatError):
    pass


class UnsupportedVersionError(FeatureFormatError):
    pass


class TruncatedFileError(FeatureFormatError):
    pass


class InvalidHeaderError(FeatureFormatError):
    pass


@dataclass
class FeatureSequence:
    values: np.ndarray
    fps: float = 8.0
    source: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise InvalidHeaderError(f"features must be T x D with T, D >= 1, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidHeaderError("features contain NaN or Inf")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


def encode_features(seq: FeatureSequence) -> bytes:
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, seq.T, seq.D, seq.fps)
    return header + seq.values.astype("<f4").tobytes()


def decode_features(buf: bytes, source: str = "") -> FeatureSequence:
    if len(buf) < _HEADER.size:
        raise TruncatedFileError(f"{source or 'buffer'}: {len(buf)} bytes is shorter than the {_HEADER.size}-byte header")
    magic, version, T, D, fps = _HEADER.unpack_from(buf)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{source or 'buffer'}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise UnsupportedVersionError(f"{source or 'buffer'}: format version {version} (supported: {FEATURE_VERSION})")
    if T == 0 or D == 0:
        raise InvalidHeaderError(f"{source or 'buffer'}: header declares T={T}, D={D}; both must be >= 1")
    need = _HEADER.size + 4 * T * D
    if len(buf) < need:
        raise TruncatedFileError(f"{source or 'buffer'}: expected {need} bytes for T={T}, D={D}, got {len(buf)}")
    values = np.frombuffer(buf, dtype="<f4", count=T * D, offset=_HEADER.size).reshape(T, D)
    return FeatureSequence(values.astype(np.float64), fps=float(fps), source=source)


def write_features(path, seq: FeatureSequence) -> None:
    Path(path).write_bytes(encode_features(seq))


def read_features(path) -> FeatureSequence:
    path = Path(path)
    return decode_features(path.read_bytes(), source=path.stem)


# -- annotations --------------------------------------------------------------


class AnnotationError(ValueError):
    """Base class for invalid annotation records."""


class MalformedAnnotationError(AnnotationError):
    pass


class UnknownClassError(AnnotationError):
    pass


class PitchFieldError(AnnotationError):
    """pitch_type / pitch_speed given for a clip without a pitch."""


def _norm_label(s: str) -> str:
    return s.strip().lower().replace(" ", "_").replace("-", "_")


@dataclass
class SegmentedAnnotation:
    id: str
    labels: tuple[str, ...]
    pitch_type: str | None = None
    pitch_speed: float | None = None

    def multi_hot(self, classes=ACTIVITY_CLASSES) -> np.ndarray:
        z = np.zeros(len(classes))
        for name in self.labels:
            z[list(classes).index(name)] = 1.0
        return z

    def to_dict(self) -> dict:
        d: dict = {"id": self.id, "labels": list(self.labels) or [NO_ACTIVITY]}
        if self.pitch_type is not None:
            d["pitch_type"] = self.pitch_type
        if self.pitch_speed is not None:
            d["pitch_speed"] = self.pitch_speed
        return d


def _load_json_array(text: str, what: str) -> list:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedAnnotationError(f"{what}: invalid JSON ({e})") from None
    if not isinstance(data, list):
        raise MalformedAnnotationError(f"{what}: expected a JSON array of records")
    return data


def parse_segmented_annotations(text: str, classes=ACTIVITY_CLASSES, pitch_types=PITCH_TYPES) -> list[SegmentedAnnotation]:
    """Validate a JSON array of ``{id, labels, pitch_type?, pitch_speed?}`` records.

    ``labels`` lists activity names; ``["no_activity"]`` (or an empty list)
    marks a hard negative.  Pitch fields are only allowed on clips carrying
    at least one activity, since every activity class occurs during a pitch.
    """
    classes = tuple(classes)
    out = []
    for k, rec in enumerate(_load_json_array(text, "segmented annotations")):
        if not isinstance(rec, dict) or not isinstance(rec.get("id"), str):
            raise MalformedAnnotationError(f"record {k}: needs a string 'id'")
        raw = rec.get("labels")
        if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
            raise MalformedAnnotationError(f"record {rec['id']}: 'labels' must be a list of strings")
        extra = set(rec) - {"id", "labels", "pitch_type", "pitch_speed"}
        if extra:
            raise MalformedAnnotationError(f"record {rec['id']}: unexpected fields {sorted(extra)}")
        labels = [_norm_label(x) for x in raw]
        if NO_ACTIVITY in labels:
            if len(labels) > 1:
                raise MalformedAnnotationError(f"record {rec['id']}: no_activity cannot be combined with other labels")
            labels = []
        for name in labels:
            if name not in classes:
                raise UnknownClassError(f"record {rec['id']}: unknown activity {name!r}")
        if len(set(labels)) != len(labels):
            raise MalformedAnnotationError(f"record {rec['id']}: duplicate labels")
        ptype, speed = rec.get("pitch_type"), rec.get("pitch_speed")
        if (ptype is not None or speed is not None) and not labels:
            raise PitchFieldError(f"record {rec['id']}: pitch_type/pitch_speed given for a clip without a pitch")
        if ptype is not None:
            if not isinstance(ptype, str) or _norm_label(ptype) not in pitch_types:
                raise UnknownClassError(f"record {rec['id']}: unknown pitch type {ptype!r}")
            ptype = _norm_label(ptype)
        if speed is not None:
            if isinstance(speed, bool) or not isinstance(speed, (int, float)) or not math.isfinite(speed) or speed <= 0:
                raise MalformedAnnotationError(f"record {rec['id']}: pitch_speed must be a positive number")
            speed = float(speed)
        out.append(SegmentedAnnotation(rec["id"], tuple(labels), ptype, speed))
    return out


def serialize_segmented_annotations(records) -> str:
    return json.dumps([r.to_dict() for r in records], indent=1)


@dataclass
class ContinuousAnnotation:
    """Activity intervals of one video; ``end`` is inclusive."""

    id: str
    num_frames: int
    intervals: list[tuple[str, int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.num_frames < 1:
            raise MalformedAnnotationError(f"video {self.id}: num_frames must be >= 1")
        for label, start, end in self.intervals:
            if not 0 <= start <= end < self.num_frames:
                raise MalformedAnnotationError(
                    f"video {self.id}: interval [{start}, {end}] of {label!r} outside 0..{self.num_frames - 1}"
                )

    def label_matrix(self, classes=ACTIVITY_CLASSES) -> np.ndarray:
        classes = list(classes)
        z = np.zeros((self.num_frames, len(classes)))
        for label, start, end in self.intervals:
            z[start:end + 1, classes.index(label)] = 1.0
        return z

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "num_frames": self.num_frames,
            "intervals": [{"label": l, "start": s, "end": e} for l, s, e in self.intervals],
        }


def parse_continuous_annotations(text: str, classes=ACTIVITY_CLASSES) -> list[ContinuousAnnotation]:
    """Validate ``{id, num_frames, intervals: [{label, start, end}]}`` records."""
    out = []
    for k, rec in enumerate(_load_json_array(text, "continuous annotations")):
        try:
            vid, n, raw = rec["id"], rec["num_frames"], rec["intervals"]
            intervals = [(_norm_label(iv["label"]), int(iv["start"]), int(iv["end"])) for iv in raw]
        except (KeyError, TypeError, ValueError, AttributeError):
            raise MalformedAnnotationError(f"record {k}: needs id, num_frames and intervals of {{label, start, end}}") from None
        for label, _, _ in intervals:
            if label not in classes:
                raise UnknownClassError(f"video {vid}: unknown activity {label!r}")
        out.append(ContinuousAnnotation(str(vid), int(n), intervals))
    return out


def serialize_continuous_annotations(records) -> str:
    return json.dumps([r.to_dict() for r in records], indent=1)


# -- labeled sets -------------------------------------------------------------


@dataclass
class Example:
    id: str
    features: np.ndarray
    target: object  # multi-hot (C,), per-frame (T, C), mph, or pitch-type index


@dataclass
class LabeledSet:
    task: str
    examples: list[Example]
    classes: list[str] | None = None

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i) -> Example:
        return self.examples[i]

    def __iter__(self):
        return iter(self.examples)

    def subset(self, indices) -> "LabeledSet":
        return LabeledSet(self.task, [self.examples[i] for i in indices], self.classes)


# -- seeding ------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed; stable across runs and platforms."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & _MASK64))
    return h


def _rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(mix_seed(*parts))


_CLASS_STREAM = 1
_CLIP_STREAM = 2


# -- synthetic data -----------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Planted-motif data: class evidence is a short burst along a class direction.

    Each class owns a unit direction in feature space and a preferred relative
    position inside a clip.  A present class adds ``amplitude`` times its
    direction over a sub-interval around that position (``jitter`` is the
    spread of the interval centre as a fraction of T) on top of Gaussian noise.
    Directions are non-negative and touch ``support`` channels, like sparse
    post-ReLU CNN features.  With probability ``decoy_prob`` an *absent* class
    still shows its motif, but at the mirrored position ``1 - p``: the
    evidence only counts at the right time.
    """

    C: int = 6
    T_range: tuple[int, int] = (40, 80)
    D: int = 32
    motif_length: tuple[int, int] = (4, 8)
    amplitude: float = 2.0
    noise: float = 1.0
    label_prob: float = 0.3
    jitter: float = 0.05
    support: int = 1
    decoy_prob: float = 0.15
    fps: float = 8.0
    seed: int = 0

    def __post_init__(self):
        self.T_range = tuple(self.T_range)
        self.motif_length = tuple(self.motif_length)
        lo, hi = self.T_range
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid T range {self.T_range}")
        if not 1 <= self.motif_length[0] <= self.motif_length[1] <= lo:
            raise ValueError(f"motif lengths {self.motif_length} must lie within [1, min T={lo}]")
        if self.C < 1 or self.D < 1:
            raise ValueError("C and D must be >= 1")
        if not 0 <= self.label_prob <= 1 or not 0 <= self.decoy_prob <= 1:
            raise ValueError("label_prob and decoy_prob must be within [0, 1]")

    @property
    def class_names(self) -> list[str]:
        if self.C <= len(ACTIVITY_CLASSES):
            return list(ACTIVITY_CLASSES[: self.C])
        return [f"class_{c}" for c in range(self.C)]


def class_motifs(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-class unit directions (C x D) and preferred relative positions (C,)."""
    rng = _rng(spec.seed, _CLASS_STREAM)
    k = min(spec.support, spec.D)
    dirs = np.zeros((spec.C, spec.D))
    # disjoint channel supports while they fit, so classes never share a channel
    perm = rng.permutation(spec.D)
    for c in range(spec.C):
        if (c + 1) * k <= spec.D:
            dims = perm[c * k:(c + 1) * k]
        else:
            dims = rng.choice(spec.D, size=k, replace=False)
        dirs[c, dims] = rng.uniform(0.5, 1.0, size=k)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # spread positions over the clip so classes are told apart by timing too
    slots = (np.arange(spec.C) + 0.5) / spec.C
    pos = 0.15 + 0.7 * slots[rng.permutation(spec.C)]
    return dirs, pos


def _place(rng, T: int, length: int, center_frac: float, jitter: float) -> int:
    center = center_frac * T + rng.normal(0.0, jitter * T)
    start = int(round(center - length / 2))
    return min(max(start, 0), T - length)


def synthetic_segmented_clip(spec: SyntheticSpec, index: int, single_label: bool = False):
    """Features (T x D) and the list of present class indices for clip ``index``."""
    dirs, pos = class_motifs(spec)
    rng = _rng(spec.seed, _CLIP_STREAM, index)
    T = int(rng.integers(spec.T_range[0], spec.T_range[1] + 1))
    v = rng.standard_normal((T, spec.D)) * spec.noise
    if single_label:
        present = [int(rng.integers(spec.C))]
    else:
        present = [c for c in range(spec.C) if rng.random() < spec.label_prob]
    for c in range(spec.C):
        if c in present:
            where = pos[c]
        elif spec.decoy_prob and rng.random() < spec.decoy_prob:
            where = 1.0 - pos[c]
        else:
            continue
        length = int(rng.integers(spec.motif_length[0], spec.motif_length[1] + 1))
        start = _place(rng, T, length, where, spec.jitter)
        v[start:start + length] += spec.amplitude * dirs[c]
    return v, present


def generate_synthetic_segmented(spec: SyntheticSpec, n: int, prefix: str = "clip"):
    """``n`` multi-label clips: (list of FeatureSequence, list of SegmentedAnnotation)."""
    names = spec.class_names
    seqs, anns = [], []
    for i in range(n):
        v, present = synthetic_segmented_clip(spec, i)
        cid = f"{prefix}{i:05d}"
        seqs.append(FeatureSequence(v, spec.fps, cid))
        anns.append(SegmentedAnnotation(cid, tuple(names[c] for c in present)))
    return seqs, anns


def generate_synthetic_pitch_type(spec: SyntheticSpec, n: int, prefix: str = "pitch"):
    """Single-label clips, one class per clip, labelled by pitch type.

    Every clip is tagged with the ``ball`` activity so its pitch fields
    validate.
    """
    types = list(PITCH_TYPES[: spec.C]) if spec.C <= len(PITCH_TYPES) else [f"type_{c}" for c in range(spec.C)]
    seqs, anns = [], []
    for i in range(n):
        v, (c,) = synthetic_segmented_clip(spec, i, single_label=True)
        cid = f"{prefix}{i:05d}"
        seqs.append(FeatureSequence(v, spec.fps, cid))
        anns.append(SegmentedAnnotation(cid, ("ball",), pitch_type=types[c]))
    return seqs, anns


def synthetic_continuous_video(spec: SyntheticSpec, index: int, events: int):
    """Features and (class, start, end) intervals for video ``index``.

    Events never overlap and are separated by at least ``motif_length[0]``
    background frames.
    """
    dirs, _ = class_motifs(spec)
    rng = _rng(spec.seed, _CLIP_STREAM, index)
    T = int(rng.integers(spec.T_range[0], spec.T_range[1] + 1))
    gap = spec.motif_length[0]
    lengths = rng.integers(spec.motif_length[0], spec.motif_length[1] + 1, size=events)
    slack = T - int(lengths.sum()) - gap * (events + 1)
    if slack < 0:
        raise ValueError(
            f"{events} events of up to {spec.motif_length[1]} frames with {gap}-frame gaps do not fit in T={T}"
        )
    # distribute the slack over the events + 1 gaps uniformly at random
    cuts = np.sort(rng.integers(0, slack + 1, size=events))
    extra = np.diff(np.concatenate([[0], cuts, [slack]]))
    v = rng.standard_normal((T, spec.D)) * spec.noise
    classes = rng.integers(0, spec.C, size=events)
    intervals = []
    t = 0
    for k in range(events):
        t += gap + int(extra[k])
        L = int(lengths[k])
        v[t:t + L] += spec.amplitude * dirs[classes[k]]
        intervals.append((int(classes[k]), t, t + L - 1))
        t += L
    return v, intervals


def generate_synthetic_continuous(spec: SyntheticSpec, n: int, events: int = 7, prefix: str = "video"):
    """``n`` untrimmed videos with ``events`` planted activities each."""
    names = spec.class_names
    seqs, anns = [], []
    for i in range(n):
        v, ivs = synthetic_continuous_video(spec, i, events)
        vid = f"{prefix}{i:05d}"
        seqs.append(FeatureSequence(v, spec.fps, vid))
        anns.append(ContinuousAnnotation(vid, v.shape[0], [(names[c], s, e) for c, s, e in ivs]))
    return seqs, anns


# 60.5 ft from mound to plate / (1.4667 ft/s per mph): flight seconds = K / mph
FLIGHT_K = 60.5 / (5280 / 3600)


def speed_duration(mph: float, fps: float = 60.0, K: float = FLIGHT_K) -> int:
    """Frames the ball is in flight: round(fps * K / mph), halves rounded up."""
    return int(math.floor(fps * K / mph + 0.5))


def flight_direction(spec: SyntheticSpec) -> np.ndarray:
    return class_motifs(replace(spec, C=3))[0][0]


def duration_oracle(features: np.ndarray, spec: SyntheticSpec, K: float = FLIGHT_K) -> float:
    """Speed estimate from the measured flight duration of one clip.

    Each frame is assigned to the nearest of the windup / flight / catch
    patterns; the flight frame count d gives ``fps * K / d``.
    """
    dirs = class_motifs(replace(spec, C=3))[0] * spec.amplitude
    dist = ((features[:, None, :] - dirs[None, :, :]) ** 2).sum(axis=2)
    d = int(np.sum(np.argmin(dist, axis=1) == 0))
    return spec.fps * K / max(d, 1)


def generate_synthetic_speed(spec: SyntheticSpec, n: int, K: float = FLIGHT_K, mph_range=(70.0, 100.0), prefix: str = "speed"):
    """Pitch clips whose flight phase lasts ``speed_duration(mph)`` frames.

    Each clip runs windup, flight and catch phases, each along its own
    direction, so speed is recoverable from the flight duration alone.  The
    release frame is placed uniformly at random.  Returns (sequences,
    annotations) with ``pitch_speed`` set; features run at ``spec.fps``.
    """
    dirs, _ = class_motifs(replace(spec, C=3))
    seqs, anns = [], []
    for i in range(n):
        rng = _rng(spec.seed, _CLIP_STREAM, i)
        T = int(rng.integers(spec.T_range[0], spec.T_range[1] + 1))
        mph = float(rng.uniform(*mph_range))
        dur = speed_duration(mph, spec.fps, K)
        if dur > T:
            raise ValueError(f"flight of {dur} frames does not fit in T={T}")
        v = rng.standard_normal((T, spec.D)) * spec.noise
        release = int(rng.integers(0, T - dur + 1))
        v[:release] += spec.amplitude * dirs[1]
        v[release:release + dur] += spec.amplitude * dirs[0]
        v[release + dur:] += spec.amplitude * dirs[2]
        cid = f"{prefix}{i:05d}"
        seqs.append(FeatureSequence(v, spec.fps, cid))
        anns.append(SegmentedAnnotation(cid, ("ball",), pitch_speed=mph))
    return seqs, anns


# -- labeled sets from records, and on-disk datasets ----------------------------

TASK_PRESETS = {
    "multilabel": {},
    "pitch_type": {},
    "detection": {"T_range": (240, 320), "motif_length": (8, 24)},
    "speed": {"T_range": (60, 60), "fps": 60.0, "noise": 0.0, "C": 1, "motif_length": (1, 1)},
}
CONTINUOUS_EVENTS = 7
MANIFEST_NAME = "manifest.json"


class DatasetError(OSError):
    """A dataset manifest or one of the files it lists cannot be read."""


def preset_spec(task: str, seed: int = 0, **overrides) -> SyntheticSpec:
    if task not in TASK_PRESETS:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(TASK_PRESETS)}")
    return SyntheticSpec(seed=seed, **{**TASK_PRESETS[task], **overrides})


def task_classes(task: str, spec: SyntheticSpec) -> list[str]:
    if task == "pitch_type":
        return list(PITCH_TYPES[: spec.C]) if spec.C <= len(PITCH_TYPES) else [f"type_{c}" for c in range(spec.C)]
    if task == "speed":
        return []
    return spec.class_names


def synthesize(task: str, spec: SyntheticSpec, n: int):
    """Generate ``n`` items for ``task``: (sequences, annotations, class names)."""
    if task == "multilabel":
        seqs, anns = generate_synthetic_segmented(spec, n)
    elif task == "pitch_type":
        seqs, anns = generate_synthetic_pitch_type(spec, n)
    elif task == "detection":
        seqs, anns = generate_synthetic_continuous(spec, n, CONTINUOUS_EVENTS)
    elif task == "speed":
        seqs, anns = generate_synthetic_speed(spec, n)
    else:
        raise ValueError(f"unknown task {task!r}")
    return seqs, anns, task_classes(task, spec)


def make_example(task: str, seq: FeatureSequence, ann, classes) -> Example:
    if task == "multilabel":
        target = ann.multi_hot(classes)
    elif task == "detection":
        target = ann.label_matrix(classes)
    elif task == "speed":
        if ann.pitch_speed is None:
            raise MalformedAnnotationError(f"{ann.id}: speed task needs pitch_speed")
        target = ann.pitch_speed
    elif task == "pitch_type":
        if ann.pitch_type not in classes:
            raise MalformedAnnotationError(f"{ann.id}: pitch type {ann.pitch_type!r} not in {classes}")
        target = list(classes).index(ann.pitch_type)
    else:
        raise ValueError(f"unknown task {task!r}")
    return Example(ann.id, seq.values, target)


def labeled_set(task: str, seqs, anns, classes) -> LabeledSet:
    return LabeledSet(task, [make_example(task, s, a, classes) for s, a in zip(seqs, anns)], list(classes))


def split_of(index: int, n: int, train_fraction: float = 0.7) -> str:
    """The first ``round(train_fraction * n)`` items train, the rest test."""
    return "train" if index < round(train_fraction * n) else "test"


def write_dataset(out, task: str, seqs, anns, classes, train_fraction: float = 0.7) -> Path:
    """Write features, one annotation file and a manifest under ``out``."""
    out = Path(out)
    (out / "features").mkdir(parents=True, exist_ok=True)
    items = []
    for k, (seq, ann) in enumerate(zip(seqs, anns)):
        rel = f"features/{ann.id}.tskf"
        write_features(out / rel, seq)
        items.append({"id": ann.id, "features": rel, "split": split_of(k, len(seqs), train_fraction)})
    serialize = serialize_continuous_annotations if task == "detection" else serialize_segmented_annotations
    (out / "annotations.json").write_text(serialize(anns) + "\n")
    manifest = {"task": task, "classes": list(classes), "annotations": "annotations.json", "items": items}
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetError(f"cannot read manifest {path}: {e}") from None
    if not isinstance(manifest, dict) or not {"task", "items"} <= set(manifest):
        raise DatasetError(f"{path}: manifest needs 'task' and 'items'")
    manifest["_root"] = path.parent
    return manifest


def load_dataset(path, split: str | None = None) -> LabeledSet:
    """LabeledSet for a manifest (file or its directory), optionally one split."""
    manifest = read_manifest(path)
    root, task = manifest["_root"], manifest["task"]
    classes = list(manifest.get("classes", []))
    ann_path = root / manifest.get("annotations", "annotations.json")
    try:
        text = ann_path.read_text()
    except OSError as e:
        raise DatasetError(f"cannot read annotations {ann_path}: {e}") from None
    if task == "detection":
        anns = parse_continuous_annotations(text, classes)
    elif task == "pitch_type":
        anns = parse_segmented_annotations(text, pitch_types=classes)
    else:
        anns = parse_segmented_annotations(text, classes=classes or ACTIVITY_CLASSES)
    by_id = {a.id: a for a in anns}
    examples = []
    for item in manifest["items"]:
        if split is not None and item.get("split") != split:
            continue
        if item["id"] not in by_id:
            raise DatasetError(f"{ann_path}: no annotation for {item['id']!r}")
        try:
            seq = read_features(root / item["features"])
        except OSError as e:
            raise DatasetError(f"cannot read features for {item['id']!r}: {e}") from None
        examples.append(make_example(task, seq, by_id[item["id"]], classes))
    return LabeledSet(task, examples, classes)
