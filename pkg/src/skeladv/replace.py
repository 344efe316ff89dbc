"""Part-wise replacement attacks: swap a non-semantic body region wholesale.

A posture template (or a donor motion) supplies coordinates for a body
region; splicing translates each replaced subtree so its attachment joint
lands on the host's, uniformly rescales it so the attachment bone keeps the
host's length, and renormalizes the result into [0,1] if it escaped the box.

Three strategies build on this: replacement only (one verification query,
zero optimization queries), replacement plus ray search over the replaced
region, and replacement plus ray search over all joints.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace as dc_replace
from importlib import resources
from pathlib import Path

import numpy as np

from .motion import (JointMask, Motion, MotionFormatError, NormalizationRecord,
                     SkeletonTopology, dumps_decimal, normalize)
from .rays import AttackConfig, AttackReport, Oracle, attack_targeted, hierarchical_search

BUILTIN_TEMPLATES = ("sit", "crouch", "kneel", "half-kneel")


@dataclass(frozen=True)
class PostureTemplate:
    """A static pose for one body region, repeated across frames when spliced.

    joints maps joint index -> coordinates and must cover every joint of the
    named regions plus each replaced subtree's attachment parent (needed to
    measure the template's attachment bone for scaling).
    """

    name: str
    topology: str
    regions: tuple[str, ...]
    joints: dict[int, tuple[float, ...]]
    attachment_joints: tuple[int, ...]


def region_partition(topo: SkeletonTopology) -> dict[str, tuple[int, ...]]:
    """Joints grouped by region tag; disjoint and exhaustive over all joints."""
    out: dict[str, list[int]] = {}
    for j, tag in enumerate(topo.regions):
        out.setdefault(tag, []).append(j)
    if not out:
        raise ValueError("topology carries no region tags")
    return {tag: tuple(joints) for tag, joints in out.items()}


def replacement_mask(topo: SkeletonTopology, region_tags) -> JointMask:
    """Mask selecting exactly the union of the named regions' joints."""
    parts = region_partition(topo)
    joints: list[int] = []
    for tag in region_tags:
        if tag not in parts:
            raise ValueError(f"topology {topo.name!r} has no region {tag!r}")
        joints.extend(parts[tag])
    return JointMask.from_indices(topo.joint_count, joints)


def lower_body_mask(topo: SkeletonTopology) -> JointMask:
    parts = region_partition(topo)
    tags = [t for t in ("left-leg", "right-leg") if t in parts]
    if not tags:
        raise ValueError(f"topology {topo.name!r} has no leg regions")
    return replacement_mask(topo, tags)


def _subtree_components(topo: SkeletonTopology, mask: JointMask) -> list[tuple[int, list[int]]]:
    """Split the masked joints into subtrees; each component's root is the
    unique masked joint whose parent lies outside the mask."""
    selected = set(mask.indices())
    if topo.root in selected:
        raise ValueError("replacement region may not contain the topology root")
    roots = [j for j in selected if topo.parent[j] not in selected]
    components = []
    for r in roots:
        members = [r]
        queue = list(topo.children(r))
        while queue:
            k = queue.pop()
            if k in selected:
                members.append(k)
                queue.extend(topo.children(k))
        components.append((r, sorted(members)))
    covered = {j for _, members in components for j in members}
    if covered != selected:
        stray = sorted(selected - covered)
        raise ValueError(f"disconnected replacement region: joints {stray} do not "
                         "form subtrees hanging off unmasked parents")
    return components


def _donor_frames(donor, mask: JointMask, topo: SkeletonTopology, t_frames: int,
                  needed: set[int]) -> np.ndarray:
    """Coordinates (T, N, D) providing the replacement joints and anchors."""
    if isinstance(donor, Motion):
        if donor.topology != topo.name:
            raise ValueError("donor motion uses a different topology")
        if donor.T != t_frames:
            raise ValueError("donor motion has a different frame count")
        return donor.frames
    if isinstance(donor, PostureTemplate):
        if donor.topology != topo.name:
            raise ValueError(f"template {donor.name!r} targets topology {donor.topology!r}")
        missing = needed - set(donor.joints)
        if missing:
            raise ValueError(f"template {donor.name!r} lacks coordinates for joints {sorted(missing)}")
        d = len(next(iter(donor.joints.values())))
        frames = np.zeros((t_frames, topo.joint_count, d))
        for j, coords in donor.joints.items():
            frames[:, j, :] = coords
        return frames
    raise TypeError(f"donor must be a Motion or PostureTemplate, got {type(donor)!r}")


def splice(x: Motion, donor, mask: JointMask, topo: SkeletonTopology,
           ) -> tuple[Motion, NormalizationRecord]:
    """Replace the masked joints of x with the donor's, subtree by subtree.

    Per frame and per replaced subtree: the donor geometry is translated so
    its attachment joint coincides with the host's, then uniformly scaled
    about that joint by the ratio of attachment-bone lengths. Unselected
    joints are untouched; a final renormalization into [0,1] runs only when
    the spliced coordinates leave the box, and the returned record maps the
    result back to the pre-renormalization frame.
    """
    if x.topology != topo.name:
        raise ValueError("host motion uses a different topology")
    components = _subtree_components(topo, mask)
    needed = {j for root, members in components for j in members}
    needed |= {topo.parent[root] for root, _ in components}
    donor_frames = _donor_frames(donor, mask, topo, x.T, needed)
    frames = x.frames.copy()
    for root, members in components:
        parent = topo.parent[root]
        host_bone = np.linalg.norm(x.frames[:, root, :] - x.frames[:, parent, :], axis=1)
        donor_bone = np.linalg.norm(donor_frames[:, root, :] - donor_frames[:, parent, :], axis=1)
        scale = np.where(donor_bone < 1e-12, 1.0, host_bone / np.maximum(donor_bone, 1e-300))
        anchor_host = x.frames[:, root, :]
        anchor_donor = donor_frames[:, root, :]
        for j in members:
            frames[:, j, :] = anchor_host + scale[:, None] * (donor_frames[:, j, :] - anchor_donor)
    if frames.min() < 0.0 or frames.max() > 1.0:
        return normalize(frames, topology=x.topology, label=x.label)
    return Motion(frames=frames, label=x.label, topology=x.topology), \
        NormalizationRecord.identity(x.D)


# ---------------------------------------------------------------------------
# attack strategies
# ---------------------------------------------------------------------------

def attack_replace_only(x: Motion, donor, mask: JointMask, oracle: Oracle,
                        topo: SkeletonTopology) -> AttackReport:
    """Replacement-only attack: splice once, verify with a single query.

    The verification query is logged separately; the optimization query count
    is zero by definition."""
    spliced, _ = splice(x, donor, mask, topo)
    label = oracle.query(spliced)
    success = label != x.label
    return AttackReport(method="isaac-nr", success=success, queries_used=0,
                        verification_queries=1, radius=None, linf=None,
                        stopped="replaced", adversarial=spliced if success else None)


def _replace_then_search(x: Motion, donor, region_mask: JointMask, oracle: Oracle,
                         config: AttackConfig, topo: SkeletonTopology,
                         search_mask: JointMask, method: str) -> AttackReport:
    spliced, _ = splice(x, donor, region_mask, topo)
    label = oracle.query(spliced)
    if label != x.label:
        return AttackReport(method=method, success=True, queries_used=0,
                            verification_queries=1, radius=None, linf=None,
                            stopped="replaced", adversarial=spliced)
    search_cfg = dc_replace(config, mask=search_mask)
    report = hierarchical_search(spliced, oracle, search_cfg, topo, method=method)
    return dc_replace(report, verification_queries=1)


def attack_replace_local(x: Motion, donor, mask: JointMask, oracle: Oracle,
                         config: AttackConfig, topo: SkeletonTopology) -> AttackReport:
    """Replacement followed by ray search restricted to the replaced region.

    Perturbations (and constraints) are measured from the spliced motion.
    With a zero query budget this degenerates to replacement-only."""
    return _replace_then_search(x, donor, mask, oracle, config, topo, mask, "isaac-nrl")


def attack_replace_all(x: Motion, donor, mask: JointMask, oracle: Oracle,
                       config: AttackConfig, topo: SkeletonTopology) -> AttackReport:
    """Replacement followed by ray search over every joint."""
    full = JointMask.full(topo.joint_count)
    return _replace_then_search(x, donor, mask, oracle, config, topo, full, "isaac-nra")


def targeted_replace(x: Motion, donors, mask: JointMask, target_class: int,
                     oracle: Oracle, config: AttackConfig, topo: SkeletonTopology,
                     ) -> AttackReport:
    """Targeted replacement: splice each donor in turn, then run the targeted
    ray search from the spliced motion with the donor as anchor; the first
    success wins and donors share one query budget."""
    donors = list(donors)
    if not donors:
        raise ValueError("need at least one donor motion")
    queries_start = oracle.queries
    verification = 0
    per_donor: list[int] = []
    best: AttackReport | None = None
    for donor in donors:
        donor_start = oracle.queries
        spliced, _ = splice(x, donor, mask, topo)
        label = oracle.query(spliced)
        verification += 1
        if label == target_class:
            per_donor.append(0)
            report = AttackReport(method="isaac-n-targeted", success=True, queries_used=0,
                                  verification_queries=verification, radius=None, linf=None,
                                  stopped="replaced", adversarial=spliced,
                                  per_donor_queries=per_donor)
            return dc_replace(report,
                              queries_used=oracle.queries - queries_start - verification)
        budget_left = config.query_limit - (oracle.queries - queries_start)
        if budget_left <= 0:
            per_donor.append(oracle.queries - donor_start - 1)
            break
        search_cfg = dc_replace(config, mask=mask, query_limit=budget_left,
                                targeted=True, target_class=target_class)
        try:
            report = attack_targeted(spliced, target_class, donor, oracle, search_cfg,
                                     topo, method="isaac-n-targeted")
        except ValueError:
            per_donor.append(oracle.queries - donor_start - 1)
            continue  # donor not classified as the target class
        per_donor.append(report.queries_used)
        best = report
        if report.success:
            break
    total = oracle.queries - queries_start
    if best is None:
        best = AttackReport(method="isaac-n-targeted", success=False, queries_used=0,
                            radius=None, linf=None, stopped="donors-exhausted")
    return dc_replace(best, queries_used=total - verification,
                      verification_queries=verification, per_donor_queries=per_donor)


# ---------------------------------------------------------------------------
# template files
# ---------------------------------------------------------------------------

def save_template(template: PostureTemplate, path: str | Path) -> None:
    doc = {
        "format_version": 1,
        "name": template.name,
        "topology": template.topology,
        "regions": list(template.regions),
        "attachment_joints": list(template.attachment_joints),
        "joints": {str(j): list(c) for j, c in sorted(template.joints.items())},
    }
    Path(path).write_text(dumps_decimal(doc), encoding="utf-8")


def _template_from_doc(doc: dict) -> PostureTemplate:
    for field in ("name", "topology", "regions", "attachment_joints", "joints"):
        if field not in doc:
            raise MotionFormatError(field, "missing required field")
    return PostureTemplate(
        name=str(doc["name"]),
        topology=str(doc["topology"]),
        regions=tuple(doc["regions"]),
        joints={int(j): tuple(float(v) for v in c) for j, c in doc["joints"].items()},
        attachment_joints=tuple(int(j) for j in doc["attachment_joints"]),
    )


def load_template(path: str | Path) -> PostureTemplate:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MotionFormatError("file", f"not valid structured text: {exc}") from exc
    return _template_from_doc(doc)


def builtin_template(name: str) -> PostureTemplate:
    """One of the shipped lower-body postures: sit, crouch, kneel, half-kneel."""
    fname = name.replace("-", "_")
    res = resources.files("skeladv").joinpath(f"data/templates/{fname}.json")
    if not res.is_file():
        raise KeyError(f"unknown template {name!r}; shipped: {BUILTIN_TEMPLATES}")
    return _template_from_doc(json.loads(res.read_text()))
