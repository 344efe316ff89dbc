"""Procedural generation of labeled skeleton motions.

Each class is a static posture offset from a canonical standing pose plus
per-joint sinusoidal displacement, with seeded coordinate jitter on top.
Classes are hand-designed to be cleanly separable so small classifiers train
to near-perfect accuracy; three of the five default classes (raise-arm, wave,
clap) are defined purely by upper-body joints so that lower-body replacement
does not change their identity.

All randomness flows through numpy's PCG64 generator, so regeneration with
the same seed is bit-identical across platforms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .motion import Motion, SkeletonTopology, get_topology, load_motion, normalize, save_motion

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class MotionClassSpec:
    """Trajectory recipe for one action class.

    base_offsets: static per-joint displacement from the canonical pose.
    amplitude/frequency/phase: per-joint sinusoid added on top, evaluated at
        tau = t / (T-1); frequency counts cycles over the clip.
    noise_sigma: std-dev of i.i.d. coordinate jitter (pre-normalization).
    """

    class_id: int
    name: str
    base_offsets: dict[int, Vec3] = field(default_factory=dict)
    amplitude: dict[int, Vec3] = field(default_factory=dict)
    frequency: dict[int, float] = field(default_factory=dict)
    phase: dict[int, float] = field(default_factory=dict)
    noise_sigma: float = 0.01

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class Dataset:
    motions: tuple[Motion, ...]
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    seed: int
    topology: str
    class_names: tuple[str, ...]

    def subset(self, indices) -> tuple[Motion, ...]:
        return tuple(self.motions[i] for i in indices)


# canonical standing poses, one per shipped topology -------------------------

_NTU25_POSE = np.array([
    [0.500, 0.420, 0.500],   # 0  base of spine
    [0.500, 0.540, 0.500],   # 1  middle of spine
    [0.500, 0.680, 0.500],   # 2  neck
    [0.500, 0.760, 0.500],   # 3  head
    [0.420, 0.620, 0.500],   # 4  left shoulder
    [0.380, 0.500, 0.500],   # 5  left elbow
    [0.360, 0.400, 0.500],   # 6  left wrist
    [0.355, 0.370, 0.500],   # 7  left hand
    [0.580, 0.620, 0.500],   # 8  right shoulder
    [0.620, 0.500, 0.500],   # 9  right elbow
    [0.640, 0.400, 0.500],   # 10 right wrist
    [0.645, 0.370, 0.500],   # 11 right hand
    [0.455, 0.400, 0.500],   # 12 left hip
    [0.450, 0.220, 0.500],   # 13 left knee
    [0.445, 0.060, 0.500],   # 14 left ankle
    [0.445, 0.030, 0.560],   # 15 left foot
    [0.545, 0.400, 0.500],   # 16 right hip
    [0.550, 0.220, 0.500],   # 17 right knee
    [0.555, 0.060, 0.500],   # 18 right ankle
    [0.555, 0.030, 0.560],   # 19 right foot
    [0.500, 0.620, 0.500],   # 20 spine shoulder (root)
    [0.340, 0.325, 0.500],   # 21 left hand tip
    [0.345, 0.345, 0.500],   # 22 left thumb
    [0.660, 0.325, 0.500],   # 23 right hand tip
    [0.655, 0.345, 0.500],   # 24 right thumb
])

_TOY5_POSE = np.array([
    [0.500, 0.350, 0.500],   # hip
    [0.500, 0.600, 0.500],   # chest (root)
    [0.500, 0.800, 0.500],   # head
    [0.300, 0.550, 0.500],   # hand
    [0.500, 0.050, 0.500],   # foot
])

_POSES = {"ntu25": _NTU25_POSE, "toy5": _TOY5_POSE}


def canonical_pose(topology: str) -> np.ndarray:
    if topology not in _POSES:
        raise KeyError(f"no canonical pose for topology {topology!r}")
    return _POSES[topology].copy()


def default_class_specs(noise_sigma: float = 0.01) -> list[MotionClassSpec]:
    """The five shipped classes on the 25-joint topology."""
    r_arm = {9: (0.0, 0.18, 0.0), 10: (0.0, 0.30, 0.0), 11: (0.0, 0.33, 0.0),
             23: (0.0, 0.36, 0.0), 24: (0.0, 0.34, 0.0)}
    l_forearm_up = {5: (0.00, 0.12, 0.0), 6: (0.02, 0.22, 0.0), 7: (0.02, 0.26, 0.0),
                    21: (0.03, 0.30, 0.0), 22: (0.025, 0.28, 0.0)}
    squat_down = {0: (0.0, -0.14, 0.0), 1: (0.0, -0.12, 0.0), 2: (0.0, -0.12, 0.0),
                  3: (0.0, -0.12, 0.0), 4: (0.0, -0.12, 0.0), 5: (0.0, -0.12, 0.0),
                  6: (0.0, -0.12, 0.0), 7: (0.0, -0.12, 0.0), 8: (0.0, -0.12, 0.0),
                  9: (0.0, -0.12, 0.0), 10: (0.0, -0.12, 0.0), 11: (0.0, -0.12, 0.0),
                  20: (0.0, -0.12, 0.0), 21: (0.0, -0.12, 0.0), 22: (0.0, -0.12, 0.0),
                  23: (0.0, -0.12, 0.0), 24: (0.0, -0.12, 0.0),
                  12: (0.0, -0.14, 0.0), 16: (0.0, -0.14, 0.0),
                  13: (0.0, -0.06, 0.10), 17: (0.0, -0.06, 0.10)}
    kick_leg = {17: (0.0, 0.06, 0.16), 18: (0.0, 0.10, 0.30), 19: (0.0, 0.12, 0.34)}
    clap_hands = {6: (0.09, 0.18, -0.06), 7: (0.12, 0.21, -0.08),
                  21: (0.14, 0.24, -0.10), 22: (0.13, 0.23, -0.09),
                  10: (-0.09, 0.18, -0.06), 11: (-0.12, 0.21, -0.08),
                  23: (-0.14, 0.24, -0.10), 24: (-0.13, 0.23, -0.09)}
    return [
        MotionClassSpec(
            class_id=0, name="raise-arm", base_offsets=r_arm,
            amplitude={10: (0.0, 0.03, 0.0), 11: (0.0, 0.04, 0.0),
                       23: (0.0, 0.05, 0.0), 24: (0.0, 0.045, 0.0)},
            frequency={10: 1.0, 11: 1.0, 23: 1.0, 24: 1.0},
            noise_sigma=noise_sigma),
        MotionClassSpec(
            class_id=1, name="wave", base_offsets=l_forearm_up,
            amplitude={6: (0.06, 0.0, 0.0), 7: (0.09, 0.0, 0.0),
                       21: (0.12, 0.0, 0.0), 22: (0.10, 0.0, 0.0)},
            frequency={6: 2.0, 7: 2.0, 21: 2.0, 22: 2.0},
            noise_sigma=noise_sigma),
        MotionClassSpec(
            class_id=2, name="squat", base_offsets=squat_down,
            amplitude={0: (0.0, 0.025, 0.0), 1: (0.0, 0.025, 0.0), 20: (0.0, 0.025, 0.0)},
            frequency={0: 1.5, 1: 1.5, 20: 1.5},
            noise_sigma=noise_sigma),
        MotionClassSpec(
            class_id=3, name="kick", base_offsets=kick_leg,
            amplitude={18: (0.0, 0.02, 0.06), 19: (0.0, 0.02, 0.08)},
            frequency={18: 1.0, 19: 1.0},
            noise_sigma=noise_sigma),
        MotionClassSpec(
            class_id=4, name="clap", base_offsets=clap_hands,
            amplitude={6: (0.04, 0.0, 0.0), 7: (0.04, 0.0, 0.0),
                       21: (0.04, 0.0, 0.0), 22: (0.04, 0.0, 0.0),
                       10: (-0.04, 0.0, 0.0), 11: (-0.04, 0.0, 0.0),
                       23: (-0.04, 0.0, 0.0), 24: (-0.04, 0.0, 0.0)},
            frequency={6: 2.0, 7: 2.0, 21: 2.0, 22: 2.0,
                       10: 2.0, 11: 2.0, 23: 2.0, 24: 2.0},
            noise_sigma=noise_sigma),
    ]


def _raw_trajectory(spec: MotionClassSpec, t_frames: int, pose: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    n, d = pose.shape
    raw = np.tile(pose[None, :, :], (t_frames, 1, 1))
    for j, off in spec.base_offsets.items():
        raw[:, j, :] += np.asarray(off)
    tau = np.arange(t_frames) / (t_frames - 1)
    for j, amp in spec.amplitude.items():
        f = spec.frequency.get(j, 1.0)
        ph = spec.phase.get(j, 0.0)
        wave = np.sin(2.0 * np.pi * f * tau + ph)
        raw[:, j, :] += wave[:, None] * np.asarray(amp)
    if spec.noise_sigma > 0:
        raw += rng.normal(0.0, spec.noise_sigma, size=(t_frames, n, d))
    return raw


def generate_dataset(specs: list[MotionClassSpec], n_per_class: int, t_frames: int,
                     topo: SkeletonTopology, seed: int, train_fraction: float = 0.8,
                     check_separability: bool = True) -> Dataset:
    """Deterministic labeled dataset; same arguments always give the same bytes."""
    if not specs:
        raise ValueError("need at least one class spec")
    if n_per_class < 2:
        raise ValueError("need at least 2 samples per class")
    if t_frames < 3:
        raise ValueError("need at least 3 frames")
    pose = canonical_pose(topo.name)
    if pose.shape[0] != topo.joint_count:
        raise ValueError("canonical pose does not match topology")
    rng = np.random.default_rng(np.random.PCG64(seed))
    motions: list[Motion] = []
    for spec in specs:
        for _ in range(n_per_class):
            raw = _raw_trajectory(spec, t_frames, pose, rng)
            motion, _ = normalize(raw, topology=topo.name, label=spec.class_id)
            motions.append(motion)
    n_train = max(1, min(n_per_class - 1, round(train_fraction * n_per_class)))
    train_idx, test_idx = [], []
    for c in range(len(specs)):
        block = range(c * n_per_class, (c + 1) * n_per_class)
        train_idx.extend(block[:n_train])
        test_idx.extend(block[n_train:])
    ds = Dataset(motions=tuple(motions), train_indices=tuple(train_idx),
                 test_indices=tuple(test_idx), seed=seed, topology=topo.name,
                 class_names=tuple(s.name for s in specs))
    if check_separability and len(motions) <= 2000:
        _assert_separable(ds, n_per_class)
    return ds


def _assert_separable(ds: Dataset, n_per_class: int) -> None:
    """Mean inter-class distance must exceed both classes' intra-class means."""
    flat = np.stack([m.frames.ravel() for m in ds.motions])
    sq = (flat ** 2).sum(axis=1)
    dists = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T, 0.0))
    k = len(ds.class_names)
    blocks = [range(c * n_per_class, (c + 1) * n_per_class) for c in range(k)]
    intra = []
    for c in range(k):
        b = dists[np.ix_(blocks[c], blocks[c])]
        intra.append(b.sum() / (len(blocks[c]) * (len(blocks[c]) - 1)))
    for a in range(k):
        for b in range(a + 1, k):
            inter = dists[np.ix_(blocks[a], blocks[b])].mean()
            if not (inter > intra[a] and inter > intra[b]):
                raise ValueError(
                    f"classes {ds.class_names[a]!r} and {ds.class_names[b]!r} are not separable "
                    f"(inter {inter:.4f} vs intra {intra[a]:.4f}/{intra[b]:.4f})")


# ---------------------------------------------------------------------------
# on-disk layout: one motion file per sample plus a manifest with splits
# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    (out / "motions").mkdir(parents=True, exist_ok=True)
    samples = []
    train = set(ds.train_indices)
    for i, motion in enumerate(ds.motions):
        rel = f"motions/m_{i:05d}.skel"
        save_motion(motion, out / rel)
        samples.append({"file": rel, "label": motion.label,
                        "split": "train" if i in train else "test"})
    manifest = {
        "format_version": 1,
        "topology": ds.topology,
        "seed": ds.seed,
        "classes": list(ds.class_names),
        "samples": samples,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return out / "manifest.json"


def load_dataset(data_dir: str | Path) -> Dataset:
    root = Path(data_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    motions, train_idx, test_idx = [], [], []
    for i, rec in enumerate(manifest["samples"]):
        motions.append(load_motion(root / rec["file"]))
        (train_idx if rec["split"] == "train" else test_idx).append(i)
    return Dataset(motions=tuple(motions), train_indices=tuple(train_idx),
                   test_indices=tuple(test_idx), seed=int(manifest["seed"]),
                   topology=manifest["topology"], class_names=tuple(manifest["classes"]))


def toy_dataset(seed: int = 7, n_per_class: int = 20, t_frames: int = 8) -> Dataset:
    """Small fast dataset on the 5-joint topology, for tests."""
    topo = get_topology("toy5")
    specs = [
        MotionClassSpec(class_id=0, name="reach", base_offsets={3: (0.0, 0.25, 0.0)},
                        amplitude={3: (0.05, 0.0, 0.0)}, frequency={3: 1.0}, noise_sigma=0.01),
        MotionClassSpec(class_id=1, name="bow", base_offsets={2: (0.0, -0.25, 0.15)},
                        amplitude={2: (0.0, 0.05, 0.0)}, frequency={2: 1.0}, noise_sigma=0.01),
        MotionClassSpec(class_id=2, name="step", base_offsets={4: (0.0, 0.1, 0.25)},
                        amplitude={4: (0.0, 0.0, 0.06)}, frequency={4: 1.5}, noise_sigma=0.01),
    ]
    return generate_dataset(specs, n_per_class=n_per_class, t_frames=t_frames,
                            topo=topo, seed=seed)
