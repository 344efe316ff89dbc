"""Attack-quality metrics.

Two perturbation distances compare a clean/adversarial motion pair: the
off-centered deviation sums, over frames and non-root joints, how much each
joint's distance to the root joint changed (translation of the whole
skeleton therefore costs nothing); the acceleration deviation measures the
change in discrete second differences over time (offsets affine in time
cost nothing). Campaign aggregates: success rate over attempted samples,
mean queries over successes, and the two deviations over successful pairs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motion import Motion


def _coords(m) -> np.ndarray:
    return m.frames if isinstance(m, Motion) else np.asarray(m, float)


def off_center_deviation(pairs, root: int) -> float:
    """Mean over pairs of the summed |change in joint-to-root distance|,
    summed over frames and non-root joints."""
    if not pairs:
        raise ValueError("no motion pairs given")
    total = 0.0
    for orig, adv in pairs:
        a, b = _coords(orig), _coords(adv)
        if a.shape != b.shape:
            raise ValueError("paired motions have different shapes")
        da = np.linalg.norm(a - a[:, root:root + 1, :], axis=2)
        db = np.linalg.norm(b - b[:, root:root + 1, :], axis=2)
        diff = np.abs(da - db)
        total += diff.sum() - diff[:, root].sum()  # exclude the root column
    return total / len(pairs)


def second_difference(frames: np.ndarray) -> np.ndarray:
    """Discrete acceleration x[t+1] - 2 x[t] + x[t-1], unit time step.
    Shape (T-2, N, D)."""
    x = np.asarray(frames, float)
    if x.shape[0] < 3:
        raise ValueError("need at least 3 frames for accelerations")
    return x[2:] - 2.0 * x[1:-1] + x[:-2]


def acceleration_deviation(pairs) -> float:
    """Mean (over pairs, frames, joints) norm of the acceleration change;
    the norm is taken over each motion's full acceleration array."""
    if not pairs:
        raise ValueError("no motion pairs given")
    total = 0.0
    t = n = None
    for orig, adv in pairs:
        a, b = _coords(orig), _coords(adv)
        if a.shape != b.shape:
            raise ValueError("paired motions have different shapes")
        t, n = a.shape[0], a.shape[1]
        total += float(np.linalg.norm(second_difference(a) - second_difference(b)))
    return total / (len(pairs) * t * n)


@dataclass(frozen=True)
class CampaignStats:
    attempted: int
    successes: int
    asr: float
    aq: float | None                 # mean queries over successes; None if no success
    l_c: float | None                # over successful pairs only
    delta_a: float | None
    skipped: int = 0


def aggregate(reports, query_limit: int, pairs=None, root: int | None = None,
              skipped: int = 0) -> CampaignStats:
    """Campaign aggregates honoring the budget rule: a nominal success that
    spent more than `query_limit` queries counts as a failure.

    `pairs`, aligned with `reports`, supplies (original, adversarial) motions
    for the deviation metrics; only successful pairs enter them."""
    reports = list(reports)
    if not reports:
        raise ValueError("no attack reports to aggregate")
    ok = [r.success and r.queries_used <= query_limit for r in reports]
    successes = sum(ok)
    asr = successes / len(reports)
    aq = (sum(r.queries_used for r, good in zip(reports, ok) if good) / successes
          if successes else None)
    l_c = delta_a = None
    if pairs is not None and successes:
        good_pairs = [p for p, good in zip(pairs, ok)
                      if good and p is not None and p[1] is not None]
        if good_pairs:
            if root is None:
                raise ValueError("root joint index needed for the deviation metrics")
            l_c = off_center_deviation(good_pairs, root)
            delta_a = acceleration_deviation(good_pairs)
    return CampaignStats(attempted=len(reports), successes=successes, asr=asr,
                         aq=aq, l_c=l_c, delta_a=delta_a, skipped=skipped)
