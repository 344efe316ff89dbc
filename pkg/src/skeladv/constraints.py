"""Kinematic constraint projection for perturbed motions.

Two building blocks and their composition:

* temporal correction — per-frame perturbation directions are blended toward
  the previous frame's (corrected) direction when they disagree, with an
  exponentially decaying weight, removing frame-to-frame flicker;
* bone projection — walking the skeleton tree from the root, every bone's
  length is clipped back into a fractional tolerance band around its
  original per-frame length.

The composed operator also keeps all coordinates inside the [0,1] box.
Inputs to these functions are raw coordinate arrays because intermediate
perturbed states legitimately leave the box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .motion import Motion, SkeletonTopology

DEFAULT_EPSILON_B = 0.1
DEFAULT_ALPHA = 10.0


@dataclass(frozen=True)
class ConstraintConfig:
    """Tolerances of the constraint projection.

    epsilon_b: fractional bone-length band (a bone may stretch or shrink by
        this fraction of its original length).
    alpha: decay constant for the temporal interpolation weight.
    zero_norm_threshold: direction norms below this are treated as "no
        direction"; consistency is then defined as 1 (no correction signal).
    """

    epsilon_b: float = DEFAULT_EPSILON_B
    alpha: float = DEFAULT_ALPHA
    zero_norm_threshold: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.epsilon_b < 1.0:
            raise ValueError("epsilon_b must lie in (0, 1)")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if not self.zero_norm_threshold > 0.0:
            raise ValueError("zero_norm_threshold must be positive")


def direction_consistency(dir_prev: np.ndarray, dir_curr: np.ndarray,
                          zero_norm_threshold: float = 1e-9) -> float:
    """Rescaled cosine similarity of two frame perturbation directions, in [0,1].

    1 means same direction, 0 opposite, 0.5 orthogonal. Degenerate (near-zero)
    directions yield 1 so that no correction is applied.
    """
    a = np.asarray(dir_prev, float).ravel()
    b = np.asarray(dir_curr, float).ravel()
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < zero_norm_threshold or nb < zero_norm_threshold:
        return 1.0
    cos = float(np.dot(a, b) / (na * nb))
    cos = max(-1.0, min(1.0, cos))
    return 0.5 * cos + 0.5


def decay_weight(consistency: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Interpolation weight exp(-alpha * consistency), in (0, 1]."""
    return math.exp(-alpha * consistency)


def temporal_correct(original: np.ndarray, perturbed: np.ndarray,
                     cfg: ConstraintConfig = ConstraintConfig()) -> np.ndarray:
    """Sweep frames 1..T-1, steering each frame's perturbation direction
    toward the corrected direction of its predecessor.

    Frame 0 has no predecessor and is left untouched. The sweep is sequential:
    each frame blends against the already-corrected previous frame.
    """
    x = np.asarray(original, float)
    raw = np.asarray(perturbed, float)
    if x.shape != raw.shape:
        raise ValueError("original and perturbed shapes differ")
    out = raw.copy()
    prev_dir = (out[0] - x[0]).ravel()
    for k in range(1, x.shape[0]):
        cur_dir = (raw[k] - x[k]).ravel()
        lam = decay_weight(
            direction_consistency(prev_dir, cur_dir, cfg.zero_norm_threshold), cfg.alpha)
        blended = lam * prev_dir + (1.0 - lam) * cur_dir
        out[k] = x[k] + blended.reshape(x[k].shape)
        prev_dir = blended
    return out


def _in_box(p: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(p.min() >= -tol and p.max() <= 1.0 + tol)


def _fit_length_in_box(parent: np.ndarray, direction: np.ndarray, length: float) -> np.ndarray:
    """Place a point at `length` from `parent`, as close as possible to the
    requested direction, while staying inside the unit box.

    Bisects the blend between the requested direction and the direction toward
    the box center; the center direction is feasible whenever length <= 0.5.
    Falls back to a plain clamp (sacrificing exact length) if nothing fits.
    """
    target = parent + length * direction
    if _in_box(target):
        return target
    center = np.full_like(parent, 0.5)
    cdir = center - parent
    ncd = float(np.linalg.norm(cdir))
    cdir = -direction if ncd < 1e-12 else cdir / ncd
    if not _in_box(parent + length * cdir):
        return np.clip(target, 0.0, 1.0)
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        v = (1.0 - mid) * direction + mid * cdir
        nv = float(np.linalg.norm(v))
        if nv < 1e-12 or not _in_box(parent + length * (v / nv)):
            lo = mid
        else:
            hi = mid
    v = (1.0 - hi) * direction + hi * cdir
    v /= np.linalg.norm(v)
    return np.clip(parent + length * v, 0.0, 1.0)


def bone_project(original: np.ndarray, perturbed: np.ndarray, topo: SkeletonTopology,
                 cfg: ConstraintConfig = ConstraintConfig(), *, box: bool = False) -> np.ndarray:
    """Clip every bone's length into [1-eps_b, 1+eps_b] times its original
    per-frame length, traversing the tree breadth-first from the root.

    The root joint is taken as-is. Each non-root joint keeps its perturbed
    direction from its (already-projected) parent; only the length is clipped.
    A joint whose bone is already in range and whose parent did not move is
    left bit-exactly unchanged. With box=True the root is clamped into [0,1]
    and children are re-aimed (preserving clipped length) when their placement
    would leave the box.
    """
    x = np.asarray(original, float)
    out = np.array(perturbed, float, copy=True)
    if x.shape != out.shape:
        raise ValueError("original and perturbed shapes differ")
    if box:
        out[:, topo.root, :] = np.clip(out[:, topo.root, :], 0.0, 1.0)
    lo_f, hi_f = 1.0 - cfg.epsilon_b, 1.0 + cfg.epsilon_b
    for j in topo.breadth_first_order()[1:]:
        p = topo.parent[j]
        d_ori = x[:, j, :] - x[:, p, :]
        l_ori = np.linalg.norm(d_ori, axis=1)
        d_adv = out[:, j, :] - out[:, p, :]
        l_adv = np.linalg.norm(d_adv, axis=1)
        l_new = np.clip(l_adv, lo_f * l_ori, hi_f * l_ori)
        # frames needing work; bone already in range (and in box) stays bit-exact
        need = l_new != l_adv
        if box:
            need |= (out[:, j, :].min(axis=1) < -1e-12) | (out[:, j, :].max(axis=1) > 1.0 + 1e-12)
        if not need.any():
            continue
        idx = np.flatnonzero(need)
        d_a, l_a = d_adv[idx], l_adv[idx]
        d_o, l_o = d_ori[idx], l_ori[idx]
        adv_ok = l_a >= 1e-12
        ori_ok = l_o >= 1e-12
        u = np.where(adv_ok[:, None], d_a / np.maximum(l_a, 1e-300)[:, None],
                     np.where(ori_ok[:, None], d_o / np.maximum(l_o, 1e-300)[:, None], 0.0))
        pos = out[idx, p, :] + u * l_new[idx][:, None]
        both_degenerate = ~adv_ok & ~ori_ok
        if both_degenerate.any():
            pos[both_degenerate] = out[idx[both_degenerate], p, :] + d_o[both_degenerate]
        if box:
            escaped = (pos.min(axis=1) < -1e-12) | (pos.max(axis=1) > 1.0 + 1e-12)
            for i in np.flatnonzero(escaped):
                pos[i] = _fit_length_in_box(out[idx[i], p, :], u[i], float(l_new[idx[i]]))
        out[idx, j, :] = pos
    return out


def apply_constraints(original: Motion, perturbed: np.ndarray, topo: SkeletonTopology,
                      cfg: ConstraintConfig = ConstraintConfig()) -> Motion:
    """Full constraint projection: temporal correction, then bone projection,
    then a final [0,1] clamp. Returns a valid Motion."""
    x = original.frames
    corrected = temporal_correct(x, np.asarray(perturbed, float), cfg)
    projected = bone_project(x, corrected, topo, cfg, box=True)
    return original.with_frames(np.clip(projected, 0.0, 1.0))
