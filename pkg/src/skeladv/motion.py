"""Core motion types: skeleton topologies, motions, joint masks, and the
on-disk motion format.

Coordinates live in a normalized [0,1] space. A motion is a T x N x D array
(frames x joints x coordinate dimensions) tied to a named topology; the
topology is a rooted tree over the N joints and drives bone geometry and
graph convolution elsewhere in the package.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

REGION_TAGS = ("left-hand", "right-hand", "left-leg", "right-leg", "spine", "head")

MOTION_FORMAT_VERSION = 1


class MotionFormatError(ValueError):
    """Raised for malformed motion/topology files; names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{message} (field: {field})")


class DegenerateExtentError(ValueError):
    """Raised when a raw motion has zero spatial extent and cannot be normalized."""


# ---------------------------------------------------------------------------
# float serialization: 17 significant digits round-trips doubles bit-exactly
# ---------------------------------------------------------------------------

def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} cannot be serialized")
    return format(float(x), ".17g")


def dumps_decimal(obj) -> str:
    """JSON text with every float written at 17 significant digits."""
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps_decimal(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_decimal(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}:{dumps_decimal(v)}" for k, v in obj.items())
        return "{" + ",".join(items) + "}"
    raise TypeError(f"cannot serialize {type(obj)!r}")


# ---------------------------------------------------------------------------
# topologies
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SkeletonTopology:
    """A rooted tree over N joints plus per-joint region tags.

    parent[root] == root is the only fixed point; every joint reaches the
    root by following parent links.
    """

    name: str
    joint_count: int
    parent: tuple[int, ...]
    root: int
    regions: tuple[str, ...]

    def __post_init__(self):
        n = self.joint_count
        if len(self.parent) != n:
            raise MotionFormatError("parent", f"parent array has {len(self.parent)} entries, expected {n}")
        if not (0 <= self.root < n):
            raise MotionFormatError("root", f"root index {self.root} out of range")
        if self.parent[self.root] != self.root:
            raise MotionFormatError("root", "parent[root] must equal root")
        fixed = [j for j in range(n) if self.parent[j] == j]
        if fixed != [self.root]:
            raise MotionFormatError("parent", f"expected exactly one root, found fixed points {fixed}")
        for j in range(n):
            seen, k = 0, j
            while k != self.root:
                k = self.parent[k]
                seen += 1
                if seen >= n:
                    raise MotionFormatError("parent", f"joint {j} does not reach root (cycle?)")
        if len(self.regions) != n:
            raise MotionFormatError("regions", f"regions has {len(self.regions)} entries, expected {n}")
        for j, tag in enumerate(self.regions):
            if tag not in REGION_TAGS:
                raise MotionFormatError("regions", f"joint {j} has unknown region tag {tag!r}")

    @property
    def non_root_joints(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.joint_count) if j != self.root)

    def children(self, j: int) -> tuple[int, ...]:
        return tuple(k for k in range(self.joint_count) if self.parent[k] == j and k != j)

    def breadth_first_order(self) -> tuple[int, ...]:
        """Joints ordered root-outward; parents always precede children."""
        order, queue = [], [self.root]
        while queue:
            j = queue.pop(0)
            order.append(j)
            queue.extend(self.children(j))
        return tuple(order)

    def descendants(self, j: int) -> frozenset[int]:
        out, queue = set(), list(self.children(j))
        while queue:
            k = queue.pop()
            out.add(k)
            queue.extend(self.children(k))
        return frozenset(out)

    def adjacency(self) -> np.ndarray:
        """Symmetric binary adjacency (no self loops). Shape (N, N)."""
        a = np.zeros((self.joint_count, self.joint_count))
        for j in range(self.joint_count):
            p = self.parent[j]
            if p != j:
                a[j, p] = a[p, j] = 1.0
        return a

    def normalized_adjacency(self) -> np.ndarray:
        """Row-normalized adjacency-plus-self-loops; every row sums to 1."""
        a = self.adjacency() + np.eye(self.joint_count)
        return a / a.sum(axis=1, keepdims=True)


def load_topology(path: str | Path) -> SkeletonTopology:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MotionFormatError("file", f"not valid structured text: {exc}") from exc
    return _topology_from_doc(doc)


def _topology_from_doc(doc: dict) -> SkeletonTopology:
    for field in ("name", "joint_count", "parent", "root", "regions"):
        if field not in doc:
            raise MotionFormatError(field, "missing required field")
    return SkeletonTopology(
        name=str(doc["name"]),
        joint_count=int(doc["joint_count"]),
        parent=tuple(int(p) for p in doc["parent"]),
        root=int(doc["root"]),
        regions=tuple(str(r) for r in doc["regions"]),
    )


_REGISTRY: dict[str, SkeletonTopology] = {}


def register_topology(topo: SkeletonTopology) -> None:
    _REGISTRY[topo.name] = topo


def get_topology(name: str) -> SkeletonTopology:
    """Look up a topology by name; built-in ones load lazily from data files."""
    if name not in _REGISTRY:
        pkg = resources.files("skeladv").joinpath(f"data/topologies/{name}.json")
        if not pkg.is_file():
            raise KeyError(f"unknown topology {name!r}")
        register_topology(_topology_from_doc(json.loads(pkg.read_text())))
    return _REGISTRY[name]


def known_topology_names() -> tuple[str, ...]:
    builtin = [p.stem for p in resources.files("skeladv").joinpath("data/topologies").iterdir()
               if p.name.endswith(".json")]
    return tuple(sorted(set(builtin) | set(_REGISTRY)))


# ---------------------------------------------------------------------------
# motions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Motion:
    """An immutable T x N x D coordinate array in [0,1] with an optional label.

    T >= 3 so that second differences (acceleration) are defined.
    """

    frames: np.ndarray
    label: int | None = None
    topology: str = "ntu25"

    def __post_init__(self):
        arr = np.array(self.frames, dtype=float, copy=True)
        if arr.ndim != 3:
            raise ValueError(f"frames must be T x N x D, got shape {arr.shape}")
        t, n, _ = arr.shape
        if t < 3:
            raise ValueError(f"need at least 3 frames, got {t}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("frames contain non-finite coordinates")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("coordinate out of range [0,1]; normalize first")
        try:
            topo = get_topology(self.topology)
        except KeyError:
            topo = None
        if topo is not None and n != topo.joint_count:
            raise ValueError(f"motion has {n} joints but topology {self.topology!r} has {topo.joint_count}")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def N(self) -> int:
        return self.frames.shape[1]

    @property
    def D(self) -> int:
        return self.frames.shape[2]

    def with_frames(self, frames: np.ndarray) -> "Motion":
        return Motion(frames=frames, label=self.label, topology=self.topology)

    def allclose(self, other: "Motion", atol: float = 0.0) -> bool:
        return self.frames.shape == other.frames.shape and np.allclose(
            self.frames, other.frames, rtol=0.0, atol=atol)


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine map raw -> normalized: y = (x + offset) * scale, scale > 0."""

    offset: tuple[float, ...]
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def identity(cls, d: int) -> "NormalizationRecord":
        return cls(offset=(0.0,) * d, scale=1.0)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, float) + np.asarray(self.offset)) * self.scale

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        return np.asarray(normalized, float) / self.scale - np.asarray(self.offset)


def normalize(raw_frames: np.ndarray, topology: str, label: int | None = None,
              ) -> tuple[Motion, NormalizationRecord]:
    """Map raw coordinates into [0,1] with a single uniform scale.

    The scale is shared across coordinate dimensions so the skeleton's aspect
    ratio is preserved; the record inverts the map exactly.
    """
    arr = np.asarray(raw_frames, dtype=float)
    if arr.ndim != 3:
        raise ValueError(f"raw frames must be T x N x D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("raw frames contain non-finite coordinates")
    mins = arr.min(axis=(0, 1))
    extent = arr.max(axis=(0, 1)) - mins
    span = float(extent.max())
    if span <= 0.0:
        raise DegenerateExtentError("degenerate extent: motion has zero spatial size")
    if span == 1.0 and np.all(mins == 0.0):
        record = NormalizationRecord.identity(arr.shape[2])
        coords = arr
    else:
        record = NormalizationRecord(offset=tuple(float(-m) for m in mins), scale=1.0 / span)
        coords = record.apply(arr)
    coords = np.clip(coords, 0.0, 1.0)  # guard float rounding at the box edge
    return Motion(frames=coords, label=label, topology=topology), record


def denormalize(motion: Motion, record: NormalizationRecord) -> np.ndarray:
    """Restore the original coordinate frame of a normalized motion."""
    return record.invert(motion.frames)


def bone_lengths(motion: Motion, topo: SkeletonTopology) -> np.ndarray:
    """Per-frame Euclidean length of each non-root joint's bone to its parent.

    Shape (T, N-1); column k corresponds to topo.non_root_joints[k].
    """
    if motion.N != topo.joint_count:
        raise ValueError("motion does not conform to topology")
    non_root = list(topo.non_root_joints)
    parents = [topo.parent[j] for j in non_root]
    diff = motion.frames[:, non_root, :] - motion.frames[:, parents, :]
    return np.linalg.norm(diff, axis=2)


# ---------------------------------------------------------------------------
# joint masks
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JointMask:
    """Binary per-joint selector, broadcast over frames and coordinate dims."""

    selected: np.ndarray

    def __post_init__(self):
        arr = np.array(self.selected, dtype=bool, copy=True)
        if arr.ndim != 1:
            raise ValueError("mask must be one boolean per joint")
        if arr.sum() == 0:
            raise ValueError("mask selects no joints")
        arr.setflags(write=False)
        object.__setattr__(self, "selected", arr)

    @classmethod
    def from_indices(cls, joint_count: int, indices) -> "JointMask":
        sel = np.zeros(joint_count, dtype=bool)
        sel[list(indices)] = True
        return cls(selected=sel)

    @classmethod
    def full(cls, joint_count: int) -> "JointMask":
        return cls(selected=np.ones(joint_count, dtype=bool))

    @property
    def joint_count(self) -> int:
        return int(self.selected.shape[0])

    @property
    def count(self) -> int:
        return int(self.selected.sum())

    @property
    def rho(self) -> float:
        return self.count / self.joint_count

    def indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.selected))

    def flat(self, t: int, d: int) -> np.ndarray:
        """Flattened (T*N*D,) boolean mask, frame-major then joint then dim."""
        return np.broadcast_to(self.selected[None, :, None], (t, self.joint_count, d)).ravel().copy()

    def __eq__(self, other) -> bool:
        return isinstance(other, JointMask) and np.array_equal(self.selected, other.selected)


# ---------------------------------------------------------------------------
# motion files
# ---------------------------------------------------------------------------

def save_motion(motion: Motion, path: str | Path) -> None:
    doc = {
        "format_version": MOTION_FORMAT_VERSION,
        "topology": motion.topology,
        "label": motion.label,
        "T": motion.T,
        "N": motion.N,
        "D": motion.D,
        "frames": motion.frames,
    }
    Path(path).write_text(dumps_decimal(doc), encoding="utf-8")


def load_motion(path: str | Path) -> Motion:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MotionFormatError("file", f"not valid structured text: {exc}") from exc
    return motion_from_doc(doc)


def motion_from_doc(doc: dict) -> Motion:
    """Build a Motion from a parsed motion-file object, with field-level errors."""
    if not isinstance(doc, dict):
        raise MotionFormatError("file", "top-level value must be an object")
    if doc.get("format_version") != MOTION_FORMAT_VERSION:
        raise MotionFormatError("format_version", f"unsupported version {doc.get('format_version')!r}")
    topology = doc.get("topology")
    if not isinstance(topology, str):
        raise MotionFormatError("topology", "must be a string")
    label = doc.get("label")
    if label is not None and not isinstance(label, int):
        raise MotionFormatError("label", "must be an integer or null")
    dims = {}
    for field in ("T", "N", "D"):
        v = doc.get(field)
        if not isinstance(v, int) or v <= 0:
            raise MotionFormatError(field, "must be a positive integer")
        dims[field] = v
    try:
        frames = np.asarray(doc["frames"], dtype=float)
    except (KeyError, ValueError) as exc:
        raise MotionFormatError("frames", f"not a numeric T x N x D array: {exc}") from exc
    if frames.shape != (dims["T"], dims["N"], dims["D"]):
        raise MotionFormatError("frames", f"shape {frames.shape} does not match "
                                          f"declared T/N/D {tuple(dims.values())}")
    try:
        topo = get_topology(topology)
    except KeyError:
        topo = None
    if topo is not None and topo.joint_count != dims["N"]:
        raise MotionFormatError("topology", f"topology mismatch: {topology!r} has "
                                            f"{topo.joint_count} joints, file declares N={dims['N']}")
    if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
        raise MotionFormatError("frames", "coordinate out of range [0,1]")
    return Motion(frames=frames, label=label, topology=topology)


def motion_to_doc(motion: Motion) -> dict:
    """Motion-file object for a motion (the HTTP request body reuses this)."""
    return {
        "format_version": MOTION_FORMAT_VERSION,
        "topology": motion.topology,
        "label": motion.label,
        "T": motion.T,
        "N": motion.N,
        "D": motion.D,
        "frames": motion.frames.tolist(),
    }
