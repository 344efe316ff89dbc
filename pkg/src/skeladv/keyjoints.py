"""Key-joint extraction from a white-box surrogate classifier.

Per frame, each feature map at the chosen layer is weighted by its
joint-averaged class-logit gradient; the rectified weighted sum gives a
per-joint significance score. Frames can disagree about the top joints, so
the per-frame top sets are aggregated by appearance count into a single
per-joint mask used by the sparse attacks.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .motion import JointMask, Motion
from .surrogate import GraphConvClassifier, feature_gradients, forward


@dataclass(frozen=True)
class SignificanceMap:
    """Nonnegative per-frame, per-joint significance scores. Shape (T, N)."""

    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, float)
        if arr.ndim != 2:
            raise ValueError("scores must be frames x joints")
        if arr.min() < 0:
            raise ValueError("significance scores must be nonnegative")
        object.__setattr__(self, "scores", arr)


def gradcam_scores(model: GraphConvClassifier, motion: Motion, class_id: int,
                   layer: int | None = None) -> SignificanceMap:
    """Significance of every joint for the class logit, computed per frame.

    layer indexes the feature tape: 0 is the input coordinates, L the last
    conv output (the default).
    """
    if layer is None:
        layer = model.layer_count
    if not 0 <= layer <= model.layer_count:
        raise ValueError(f"layer index {layer} out of range 0..{model.layer_count}")
    grads, tape = feature_gradients(model, motion, class_id)
    g = grads[layer]             # (T, N, C)
    f = tape.layers[layer]       # (T, N, C)
    alpha = g.mean(axis=1)       # per-frame, joint-averaged weights (T, C)
    raw = np.einsum("tc,tnc->tn", alpha, f)
    return SignificanceMap(scores=np.maximum(raw, 0.0))


def top_joints_per_frame(sig_map: SignificanceMap, n_k: int) -> list[tuple[int, ...]]:
    """The n_k highest-scoring joints of each frame; ties break toward the
    lower joint index."""
    t, n = sig_map.scores.shape
    if not 1 <= n_k <= n:
        raise ValueError(f"n_k must be in 1..{n}")
    out = []
    for f in range(t):
        order = np.lexsort((np.arange(n), -sig_map.scores[f]))
        out.append(tuple(sorted(int(j) for j in order[:n_k])))
    return out


def aggregate_key_joints(per_frame_sets: list[tuple[int, ...]], n_k: int,
                         joint_count: int) -> JointMask:
    """Select the n_k joints appearing in the most frames (ties toward the
    lower index)."""
    if not per_frame_sets:
        raise ValueError("no per-frame joint sets given")
    counts = Counter()
    for s in per_frame_sets:
        counts.update(s)
    ranked = sorted(range(joint_count), key=lambda j: (-counts.get(j, 0), j))
    return JointMask.from_indices(joint_count, ranked[:n_k])


def extract_key_joints(model: GraphConvClassifier, motion: Motion, n_k: int,
                       layer: int | None = None, class_id: int | None = None) -> JointMask:
    """End-to-end extraction. The class defaults to the surrogate's own
    prediction on the motion (all the attacker can know locally)."""
    if class_id is None:
        logits, _ = forward(model, motion)
        class_id = int(np.argmax(logits))
    sig = gradcam_scores(model, motion, class_id, layer=layer)
    return aggregate_key_joints(top_joints_per_frame(sig, n_k), n_k, motion.N)


def mask_cosine_similarity(a: JointMask, b: JointMask) -> float:
    """Cosine similarity of two 0/1 joint indicator vectors, in [0, 1]."""
    if a.joint_count != b.joint_count:
        raise ValueError("masks cover different joint counts")
    if a.count == 0 or b.count == 0:
        raise ValueError("cosine similarity undefined for an empty mask")
    overlap = int((a.selected & b.selected).sum())
    return overlap / float(np.sqrt(a.count * b.count))


def frame_similarity_stats(per_frame_sets: list[tuple[int, ...]], n_k: int,
                           joint_count: int) -> dict[str, float]:
    """Two ways of summarizing frame-to-frame key-joint agreement: the mean
    cosine similarity over all frame pairs, and the mean similarity of each
    frame against the count-aggregated mask."""
    masks = [JointMask.from_indices(joint_count, s) for s in per_frame_sets]
    agg = aggregate_key_joints(per_frame_sets, n_k, joint_count)
    pairwise = [mask_cosine_similarity(a, b) for a, b in combinations(masks, 2)]
    vs_aggregate = [mask_cosine_similarity(m, agg) for m in masks]
    return {
        "pairwise_mean": float(np.mean(pairwise)) if pairwise else 1.0,
        "vs_aggregate_mean": float(np.mean(vs_aggregate)),
    }
