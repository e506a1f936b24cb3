"""Scene-realization sampling: plausible combinations of object candidates.

A realization is a subset of the detected candidates treated as a
hypothetical scene. Its size budget K is drawn from Binomial(N, 0.5); members
are then drawn without replacement with probability proportional to
exp(-(1 - score)^2), and a draw only joins the set when its bounding box
does not intersect any member already accepted.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .types import SceneRealization


def candidate_probability(score: float) -> float:
    """Unnormalized inclusion weight of a candidate from its score in [0, 1]."""
    if not (0.0 <= score <= 1.0):
        raise ConfigError("score must lie in [0, 1]")
    return float(np.exp(-((1.0 - score) ** 2)))


def aabbs_intersect(a, b, inflate: float = 0.0) -> bool:
    """Axis-aligned box overlap test; each box grows by ``inflate`` first."""
    (alo, ahi), (blo, bhi) = a, b
    alo = np.asarray(alo) - inflate
    ahi = np.asarray(ahi) + inflate
    blo = np.asarray(blo) - inflate
    bhi = np.asarray(bhi) + inflate
    return bool(np.all(alo <= bhi) and np.all(blo <= ahi))


def plausible(members: list[int], extra: int, aabbs, inflate: float) -> bool:
    """Whether candidate ``extra`` can join ``members`` without intersection."""
    return not any(aabbs_intersect(aabbs[extra], aabbs[m], inflate) for m in members)


def sample_combinations(
    scores,
    aabbs,
    n_comb: int,
    rng,
    inflate: float = 0.002,
) -> list[SceneRealization]:
    """Draw ``n_comb`` plausible candidate combinations.

    ``scores`` are the candidates' match scores in [0, 1]; ``aabbs`` their
    bounding boxes, parallel arrays. Realizations may repeat, and a
    realization may come out empty when plausibility rejects every draw.
    Deterministic for a given generator state.
    """
    if n_comb < 1:
        raise ConfigError("n_comb must be >= 1")
    scores = np.asarray(scores, dtype=float)
    n_obj = scores.size
    if n_obj < 1:
        raise ConfigError("need at least one candidate")
    rng = np.random.default_rng(rng)
    weights = np.array([candidate_probability(s) for s in scores])
    out: list[SceneRealization] = []
    for _ in range(n_comb):
        k = int(rng.binomial(n_obj, 0.5))
        members: list[int] = []
        for _ in range(k):
            avail = [i for i in range(n_obj) if i not in members]
            if not avail:
                break
            p = weights[avail]
            p = p / p.sum()
            pick = int(rng.choice(avail, p=p))
            if plausible(members, pick, aabbs, inflate):
                members.append(pick)
        out.append(SceneRealization(members=tuple(sorted(members))))
    return out
