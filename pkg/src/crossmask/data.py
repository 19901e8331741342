"""Synthetic kinematic-tree sequences, their file format, and augmentation.

The generator drives a fixed 25-joint tree with class-specific joint
oscillations through forward kinematics, adds Gaussian coordinate noise,
and is fully deterministic given the spec seed. Classes use disjoint
moving-joint subsets so a nearest-centroid probe on raw displacement
statistics already beats chance.

On-disk format: header (magic ``HACMSEQ1``, version u32, L, J, count as
little-endian u32) followed by count*L*J*3 float32 coordinates, plus a
JSON sidecar ``<path>.json`` holding labels, splits, and the joint tree.
Coordinates are stored at 32-bit and widened to 64-bit in memory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .refine import SkeletonSequence

MAGIC = b"HACMSEQ1"
VERSION = 1


class DataFormatError(ValueError):
    """Base class for sequence-file failures."""


class HeaderError(DataFormatError):
    """Bad magic bytes or malformed header."""


class VersionError(DataFormatError):
    """File version not supported."""


class PayloadError(DataFormatError):
    """Truncated or inconsistent payload."""


# 25-joint tree: trunk chain 0-6 (pelvis..head top), arms 7-11 / 12-16
# hanging off joint 3, legs 17-20 / 21-24 off the pelvis.
PARENTS = (
    -1, 0, 1, 2, 3, 4, 5,           # trunk
    3, 7, 8, 9, 10,                 # right arm
    3, 12, 13, 14, 15,              # left arm
    0, 17, 18, 19,                  # right leg
    0, 21, 22, 23,                  # left leg
)

_OFFSETS = {
    "trunk": np.array([0.0, 0.12, 0.0]),
    "right_arm0": np.array([0.18, 0.0, 0.0]),
    "arm": np.array([0.14, -0.03, 0.0]),
    "right_leg0": np.array([0.09, -0.1, 0.0]),
    "leg": np.array([0.02, -0.22, 0.0]),
}


def joint_offsets() -> np.ndarray:
    """Rest-pose bone vector from parent to each joint."""
    off = np.zeros((25, 3))
    for j in range(1, 7):
        off[j] = _OFFSETS["trunk"]
    off[7] = _OFFSETS["right_arm0"]
    off[12] = _OFFSETS["right_arm0"] * np.array([-1.0, 1.0, 1.0])
    for j in (8, 9, 10, 11):
        off[j] = _OFFSETS["arm"]
    for j in (13, 14, 15, 16):
        off[j] = _OFFSETS["arm"] * np.array([-1.0, 1.0, 1.0])
    off[17] = _OFFSETS["right_leg0"]
    off[21] = _OFFSETS["right_leg0"] * np.array([-1.0, 1.0, 1.0])
    for j in (18, 19, 20):
        off[j] = _OFFSETS["leg"]
    for j in (22, 23, 24):
        off[j] = _OFFSETS["leg"]
    return off


@dataclass(frozen=True)
class MotionFamily:
    """One action class: which joints articulate and in what frequency band."""

    moving_joints: tuple
    freq_range: tuple = (1.0, 2.0)
    amp_range: tuple = (0.3, 0.8)
    axis: tuple = (0.0, 0.0, 1.0)


DEFAULT_FAMILIES = (
    MotionFamily(moving_joints=(7, 8, 9), freq_range=(1.0, 2.0)),
    MotionFamily(moving_joints=(12, 13, 14), freq_range=(1.0, 2.0)),
    MotionFamily(moving_joints=(17, 18), freq_range=(0.5, 1.5), axis=(1.0, 0.0, 0.0)),
    MotionFamily(moving_joints=(21, 22), freq_range=(0.5, 1.5), axis=(1.0, 0.0, 0.0)),
)


@dataclass
class SyntheticSpec:
    n_classes: int = 4
    train_per_class: int = 64
    test_per_class: int = 16
    joints: int = 25
    frames: int = 96
    noise_sigma: float = 0.01
    seed: int = 0
    families: tuple = DEFAULT_FAMILIES

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("spec needs at least one class")
        if self.n_classes > len(self.families):
            raise ValueError(f"only {len(self.families)} motion families defined")
        if self.joints != len(PARENTS):
            raise ValueError("generator supports the fixed 25-joint tree only")


@dataclass
class LabeledSequence:
    sequence: SkeletonSequence
    label: int
    split: str = "train"


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    t = 1.0 - c
    return np.array([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])


def _pose_sequence(family: MotionFamily, frames: int, rng: np.random.Generator) -> np.ndarray:
    """Forward-kinematics poses for one sample of one class."""
    offsets = joint_offsets()
    axis = np.asarray(family.axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    params = {}
    for j in family.moving_joints:
        params[j] = (
            rng.uniform(*family.amp_range),
            rng.uniform(*family.freq_range),
            rng.uniform(0.0, 2.0 * np.pi),
        )
    coords = np.zeros((frames, 25, 3))
    eye = np.eye(3)
    for t in range(frames):
        rots = [eye] * 25
        pos = np.zeros((25, 3))
        for j in range(1, 25):
            p = PARENTS[j]
            local = eye
            if j in params:
                amp, freq, phase = params[j]
                angle = amp * np.sin(2.0 * np.pi * freq * t / frames + phase)
                local = _axis_rotation(axis, angle)
            rots[j] = rots[p] @ local
            pos[j] = pos[p] + rots[p] @ offsets[j]
        coords[t] = pos
    return coords


def generate(spec: SyntheticSpec) -> list:
    """Deterministic labeled dataset for the given spec."""
    out = []
    for cls in range(spec.n_classes):
        family = spec.families[cls]
        for split, count in (("train", spec.train_per_class), ("test", spec.test_per_class)):
            for i in range(count):
                tag = 0 if split == "train" else 1
                rng = np.random.default_rng(
                    np.random.SeedSequence([spec.seed, cls, tag, i]))
                coords = _pose_sequence(family, spec.frames, rng)
                if spec.noise_sigma > 0:
                    coords = coords + rng.normal(scale=spec.noise_sigma, size=coords.shape)
                seq = SkeletonSequence(coords=coords, joint_tree=np.array(PARENTS))
                out.append(LabeledSequence(sequence=seq, label=cls, split=split))
    return out


def crop_resample(seq: SkeletonSequence, p: float, length_out: int,
                  rng: np.random.Generator) -> SkeletonSequence:
    """Contiguous crop of proportion p, then linear time-resampling.

    The crop offset is drawn from the caller's generator; the resampler is
    exact on signals linear in time and on the identity (p=1, same length).
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"crop proportion must be in (0, 1], got {p}")
    coords = seq.coords
    n = coords.shape[0]
    if n < 2:
        raise ValueError("sequence too short to crop")
    crop_len = int(round(p * n))
    if crop_len < 2:
        raise ValueError(f"crop of {crop_len} frames is too short")
    offset = int(rng.integers(0, n - crop_len + 1))
    clip = coords[offset:offset + crop_len]
    pos = np.linspace(0.0, crop_len - 1.0, length_out)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, crop_len - 1)
    w = (pos - lo)[:, None, None]
    resampled = (1.0 - w) * clip[lo] + w * clip[hi]
    return SkeletonSequence(coords=resampled, joint_tree=seq.joint_tree.copy(),
                            torso_set=seq.torso_set)


def save_sequences(path, sequences) -> None:
    """Write the binary coordinate file and its JSON sidecar."""
    path = Path(path)
    if sequences:
        l, j, _ = sequences[0].sequence.coords.shape
        for s in sequences:
            if s.sequence.coords.shape != (l, j, 3):
                raise PayloadError("all sequences in one file must share L and J")
        tree = [int(x) for x in sequences[0].sequence.joint_tree]
    else:
        l = j = 0
        tree = []
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIII", VERSION, l, j, len(sequences)))
        for s in sequences:
            f.write(s.sequence.coords.astype("<f4").tobytes())
    sidecar = {
        "labels": [int(s.label) for s in sequences],
        "splits": [s.split for s in sequences],
        "parents": tree,
        "n_classes": int(max((s.label for s in sequences), default=-1)) + 1,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar))


def load_sequences(path) -> list:
    """Read a sequence file written by save_sequences."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 16:
        raise HeaderError(f"{path}: file shorter than the header")
    if raw[:len(MAGIC)] != MAGIC:
        raise HeaderError(f"{path}: bad magic bytes {raw[:len(MAGIC)]!r}")
    version, l, j, count = struct.unpack("<IIII", raw[len(MAGIC):len(MAGIC) + 16])
    if version != VERSION:
        raise VersionError(f"{path}: version {version}, expected {VERSION}")
    body = raw[len(MAGIC) + 16:]
    expected = count * l * j * 3 * 4
    if len(body) != expected:
        raise PayloadError(f"{path}: payload {len(body)} bytes, expected {expected}")
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise PayloadError(f"{path}: missing sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    labels = sidecar["labels"]
    splits = sidecar["splits"]
    if len(labels) != count or len(splits) != count:
        raise PayloadError(f"{path}: sidecar lists {len(labels)} labels for {count} records")
    parents = np.array(sidecar["parents"], dtype=np.int64)
    coords = np.frombuffer(body, dtype="<f4").astype(np.float64)
    coords = coords.reshape(count, l, j, 3) if count else coords.reshape(0, l, j or 0, 3)
    out = []
    for i in range(count):
        seq = SkeletonSequence(coords=coords[i].copy(), joint_tree=parents.copy())
        out.append(LabeledSequence(sequence=seq, label=int(labels[i]), split=splits[i]))
    return out


def nearest_centroid_accuracy(dataset) -> float:
    """Sanity floor: classify by displacement statistics per joint."""
    feats, labels, splits = [], [], []
    for item in dataset:
        disp = np.linalg.norm(np.diff(item.sequence.coords, axis=0), axis=-1)
        feats.append(disp.mean(axis=0))
        labels.append(item.label)
        splits.append(item.split)
    feats = np.stack(feats)
    labels = np.array(labels)
    splits = np.array(splits)
    train, test = splits == "train", splits == "test"
    classes = np.unique(labels)
    centroids = np.stack([feats[train & (labels == c)].mean(axis=0) for c in classes])
    d = np.linalg.norm(feats[test][:, None] - centroids[None], axis=-1)
    pred = classes[np.argmin(d, axis=1)]
    return float(np.mean(pred == labels[test]))
