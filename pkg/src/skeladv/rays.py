"""Hard-label ray-search attacks over masked sign directions.

The search space is the sign vectors {-1,+1} on the masked coordinate
dimensions (a per-joint mask broadcast over frames and dims). A direction is
scored by its constraint-projected decision-boundary distance, found by a
fast rejection check followed by binary search; the hierarchical driver
flips contiguous sign blocks, doubling the block count whenever a full pass
stops improving. Success means the pre-projection per-coordinate magnitude
of the best verified ray fell below the l-inf budget.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constraints import ConstraintConfig, apply_constraints
from .motion import JointMask, Motion, SkeletonTopology

DEFAULT_EPSILON = 0.4
DEFAULT_QUERY_LIMIT = 2000
DEFAULT_TOLERANCE = 1e-3


class Oracle:
    """Hard-label query counter around an opaque motion -> label function."""

    def __init__(self, label_fn: Callable[[Motion], int]):
        self._label_fn = label_fn
        self._queries = 0

    def query(self, motion: Motion) -> int:
        self._queries += 1
        return int(self._label_fn(motion))

    @property
    def queries(self) -> int:
        return self._queries


def model_oracle(model) -> Oracle:
    from .surrogate import predict
    return Oracle(lambda m: predict(model, m))


@dataclass
class AttackConfig:
    epsilon: float = DEFAULT_EPSILON
    query_limit: int = DEFAULT_QUERY_LIMIT
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    mask: JointMask | None = None
    tolerance: float = DEFAULT_TOLERANCE
    targeted: bool = False
    target_class: int | None = None
    targeted_init: str = "sign"          # "sign" (from the target anchor) or "ones"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.query_limit < 0:
            raise ValueError("query_limit must be >= 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.targeted_init not in ("sign", "ones"):
            raise ValueError("targeted_init must be 'sign' or 'ones'")


@dataclass
class SearchState:
    """Mutable state of one hierarchical search."""

    direction: np.ndarray               # signs on the full flattened tensor
    masked_indices: np.ndarray          # flattened dims the mask selects
    r_best: float | None = None
    best_motion: Motion | None = None
    stage: int = 0
    block_cursor: int = 0
    queries_used: int = 0


@dataclass
class AttackReport:
    method: str
    success: bool
    queries_used: int
    radius: float | None                 # best verified l2 ray radius
    linf: float | None                   # pre-projection per-coordinate magnitude
    stopped: str                         # success | budget | stall | not-adversarial
    stage: int = 0
    verification_queries: int = 0
    adversarial: Motion | None = None
    sample_id: int | None = None
    per_donor_queries: list[int] | None = None

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "method": self.method,
            "success": self.success,
            "queries": self.queries_used,
            "verification_queries": self.verification_queries,
            "radius": self.radius,
            "linf": self.linf,
            "stopped": self.stopped,
            "stage": self.stage,
            "per_donor_queries": self.per_donor_queries,
        }


@dataclass
class BoundaryProbe:
    """Result of one boundary-distance estimate along a fixed direction."""

    radius: float | None
    motion: Motion | None
    queries: int
    aborted: bool = False

    @property
    def adversarial(self) -> bool:
        return self.radius is not None


def candidate_point(x: Motion, direction: np.ndarray, radius: float,
                    topo: SkeletonTopology, ccfg: ConstraintConfig) -> Motion:
    """Constraint-projected point at `radius` along the normalized direction.

    Consumes no oracle queries."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    d = np.asarray(direction, float).ravel()
    norm = float(np.linalg.norm(d))
    if norm == 0:
        raise ValueError("direction is zero")
    perturbed = x.frames + (radius / norm) * d.reshape(x.frames.shape)
    return apply_constraints(x, perturbed, topo, ccfg)


def boundary_distance(x: Motion, direction: np.ndarray, oracle: Oracle,
                      predicate: Callable[[int], bool], r_hi: float, tolerance: float,
                      topo: SkeletonTopology, ccfg: ConstraintConfig,
                      max_queries: int | None = None) -> BoundaryProbe:
    """Smallest query-verified adversarial radius in (0, r_hi].

    One query rejects the direction outright if the far end is not
    adversarial; otherwise each bisection step costs one query until the
    interval is narrower than `tolerance`. Running out of `max_queries`
    mid-search aborts with the best verified radius so far.
    """
    if max_queries is not None and max_queries < 1:
        return BoundaryProbe(None, None, 0, aborted=True)
    used = 0

    def ask(r: float) -> tuple[bool, Motion]:
        nonlocal used
        cand = candidate_point(x, direction, r, topo, ccfg)
        used += 1
        return predicate(oracle.query(cand)), cand

    ok, cand = ask(r_hi)
    if not ok:
        return BoundaryProbe(None, None, used)
    lo, hi, best = 0.0, float(r_hi), cand
    while hi - lo >= tolerance:
        if max_queries is not None and used >= max_queries:
            return BoundaryProbe(hi, best, used, aborted=True)
        mid = 0.5 * (lo + hi)
        ok, cand = ask(mid)
        if ok:
            hi, best = mid, cand
        else:
            lo = mid
    return BoundaryProbe(hi, best, used)


# ---------------------------------------------------------------------------
# hierarchical sign search
# ---------------------------------------------------------------------------

def _run_search(x: Motion, oracle: Oracle, predicate, config: AttackConfig,
                topo: SkeletonTopology, state: SearchState, queries_start: int,
                method: str) -> AttackReport:
    m_idx = state.masked_indices
    n_mask = int(m_idx.size)
    sqrt_n = float(np.sqrt(n_mask))
    success_radius = config.epsilon * sqrt_n

    def remaining() -> int:
        return config.query_limit - (oracle.queries - queries_start)

    stopped = None
    if state.r_best is not None and state.r_best <= success_radius:
        stopped = "success-pending"
    while stopped is None:
        improved = False
        n_blocks = min(2 ** state.stage, n_mask)
        blocks = np.array_split(np.arange(n_mask), n_blocks)
        for cursor, blk in enumerate(blocks):
            state.block_cursor = cursor
            if remaining() <= 0:
                stopped = "budget"
                break
            flip = m_idx[blk]
            state.direction[flip] *= -1
            r_hi = state.r_best if state.r_best is not None else sqrt_n
            probe = boundary_distance(x, state.direction, oracle, predicate, r_hi,
                                      config.tolerance, topo, config.constraint,
                                      max_queries=remaining())
            better = probe.adversarial and (state.r_best is None or probe.radius < state.r_best)
            if better:
                state.r_best, state.best_motion = probe.radius, probe.motion
                improved = True
            else:
                state.direction[flip] *= -1
            if probe.aborted:
                stopped = "budget"
                break
            if better and state.r_best <= success_radius:
                stopped = "success-pending"
                break
        if stopped:
            break
        if not improved:
            if n_blocks >= n_mask:
                stopped = "stall"
                break
            state.stage += 1

    success = False
    verification = 0
    if stopped == "success-pending":
        if remaining() >= 1:
            success = predicate(oracle.query(state.best_motion))
            stopped = "success" if success else "not-verified"
        else:
            stopped = "budget"
    state.queries_used = oracle.queries - queries_start
    linf = state.r_best / sqrt_n if state.r_best is not None else None
    return AttackReport(method=method, success=success, queries_used=state.queries_used,
                        radius=state.r_best, linf=linf, stopped=stopped, stage=state.stage,
                        verification_queries=verification, adversarial=state.best_motion)


def _initial_state(x: Motion, mask: JointMask, signs: np.ndarray | None = None) -> SearchState:
    flat = mask.flat(x.T, x.D)
    m_idx = np.flatnonzero(flat)
    if m_idx.size == 0:
        raise ValueError("mask selects no dimensions")
    direction = np.zeros(flat.size)
    direction[m_idx] = 1.0 if signs is None else signs
    return SearchState(direction=direction, masked_indices=m_idx)


def hierarchical_search(x: Motion, oracle: Oracle, config: AttackConfig,
                        topo: SkeletonTopology, method: str = "isaac-k") -> AttackReport:
    """Untargeted attack: make the oracle's label differ from x.label.

    Assumes the oracle classifies x correctly (the campaign runner enforces
    this protocol and records failures as skipped)."""
    if config.mask is None:
        raise ValueError("attack config needs a joint mask")
    if x.label is None:
        raise ValueError("motion needs a label for an untargeted attack")
    y = int(x.label)
    state = _initial_state(x, config.mask)
    return _run_search(x, oracle, lambda lbl: lbl != y, config, topo, state,
                       oracle.queries, method)


def attack_targeted(x: Motion, target_class: int, target_motion: Motion, oracle: Oracle,
                    config: AttackConfig, topo: SkeletonTopology,
                    method: str = "isaac-k-targeted") -> AttackReport:
    """Targeted attack initialized from an anchor motion of the target class.

    The anchor is verified with one counted query; the initial direction is
    the sign of (anchor - x) on the mask (zeros map to +1), and the initial
    radius is the boundary distance along that direction."""
    if config.mask is None:
        raise ValueError("attack config needs a joint mask")
    queries_start = oracle.queries
    if oracle.query(target_motion) != target_class:
        raise ValueError("invalid target anchor: not classified as the target class")
    predicate = lambda lbl: lbl == target_class

    flat = config.mask.flat(x.T, x.D)
    m_idx = np.flatnonzero(flat)
    if config.targeted_init == "ones":
        signs = np.ones(m_idx.size)
    else:
        diff = (target_motion.frames - x.frames).ravel()[m_idx]
        signs = np.sign(diff)
        signs[signs == 0] = 1.0
    state = _initial_state(x, config.mask, signs)

    def remaining() -> int:
        return config.query_limit - (oracle.queries - queries_start)

    sqrt_n = float(np.sqrt(m_idx.size))
    probe = boundary_distance(x, state.direction, oracle, predicate, sqrt_n,
                              config.tolerance, topo, config.constraint,
                              max_queries=remaining())
    if probe.adversarial:
        state.r_best, state.best_motion = probe.radius, probe.motion
    if probe.aborted:
        state.queries_used = oracle.queries - queries_start
        linf = state.r_best / sqrt_n if state.r_best is not None else None
        return AttackReport(method=method, success=False, queries_used=state.queries_used,
                            radius=state.r_best, linf=linf, stopped="budget",
                            adversarial=state.best_motion)
    return _run_search(x, oracle, predicate, config, topo, state, queries_start, method)


def random_joint_mask(joint_count: int, n_k: int, seed: int) -> JointMask:
    """Uniformly random n_k-joint mask, seeded (the random-selection baseline)."""
    if n_k > joint_count:
        raise ValueError("n_k cannot exceed the joint count")
    rng = np.random.default_rng(np.random.PCG64(seed))
    picks = rng.choice(joint_count, size=n_k, replace=False)
    return JointMask.from_indices(joint_count, picks)
