"""The managing loop: analysis over ranked classes, planning, knowledge base.

Each cycle the analysis stage walks the preference ranking from the best
class down and, inside it, a freshly shuffled option order.  Options are
verified at most once per (cycle, environment digest) thanks to the
knowledge base cache; verified points either belong to a known class
with enough membership or feed an outlier counter that, once exceeded,
admits everything.  The first admitted point whose class equals the
current target class wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, InvalidStateError
from .gmm import GmmModel, classify, model_to_dict
from .network import AdaptationOption, QualityPoint, Topology, UncertaintySample, assign_power

PROB_THR = 0.001
COUNTER_THR = 10

ResultKey = tuple[int, str, int]
Verifier = Callable[[AdaptationOption, UncertaintySample], QualityPoint]


@dataclass(frozen=True)
class PreferenceModel:
    """Ordered class ids, rank 1 first.  Classes left out are unranked
    and never become selection targets."""

    ranking: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranking", tuple(int(c) for c in self.ranking))
        if not self.ranking:
            raise InvalidInputError("preference ranking is empty")
        if len(set(self.ranking)) != len(self.ranking):
            raise InvalidInputError(f"duplicate class ids in ranking: {self.ranking}")

    def rank_of(self, class_id: int) -> int:
        try:
            return self.ranking.index(class_id) + 1
        except ValueError:
            raise InvalidInputError(f"class {class_id} is unranked") from None

    def validate_against(self, model: GmmModel) -> None:
        known = set(model.class_ids())
        missing = [c for c in self.ranking if c not in known]
        if missing:
            raise InvalidInputError(
                f"ranking refers to classes the classifier lacks: {missing}")


@dataclass(frozen=True)
class CachedResult:
    """Verification plus classification of one option under one key."""

    verification: QualityPoint
    class_id: int
    membership: float


@dataclass
class KnowledgeBase:
    """Shared state of the managing loop.

    results is keyed by (cycle, uncertainty digest, option id); a key is
    verified at most once, so a second store on the same key is a bug.
    """

    classifier: GmmModel
    preference: PreferenceModel
    results: dict[ResultKey, CachedResult] = field(default_factory=dict)
    retention_window: int = 1000

    def store(self, key: ResultKey, result: CachedResult) -> None:
        if key in self.results:
            raise InvalidStateError(f"result key {key} verified twice")
        self.results[key] = result

    def snapshot_to_dict(self) -> dict:
        """Immutable export for the operator service: full classifier,
        ranking, and a digest count instead of the raw cache."""
        return {
            "classifier": model_to_dict(self.classifier),
            "preference": list(self.preference.ranking),
            "results_count": len(self.results),
            "retention_window": self.retention_window,
        }


@dataclass(frozen=True)
class AnalysisResult:
    """Outcome of one analysis stage.

    For a normal selection the stored membership exceeds PROB_THR or the
    outlier counter was exceeded at selection time.  A fallback result
    relaxes that: it is the best verified point of the best reachable
    class after both loops exhausted.
    """

    option_id: int
    class_id: int
    rank: int
    membership: float
    verifications: int
    outliers: int
    fallback: bool


def analyse(
    kb: KnowledgeBase,
    options: Sequence[AdaptationOption],
    uncs: UncertaintySample,
    cycle: int,
    rng: np.random.Generator,
    verifier: Verifier,
    counter_thr: float = COUNTER_THR,
) -> AnalysisResult:
    """Select the adaptation option for this cycle.

    Walks the preference ranking outer, a single per-call shuffle of the
    options inner.  A point is admitted when its membership exceeds
    PROB_THR or the outlier counter has exceeded counter_thr; an
    admitted point is selected iff its class equals the current target.
    A point below the threshold increments the counter instead.  The
    counter is one per call, shared across the class loop.

    Every verification and classification lands in kb.results before the
    admission test, so crashes never lose work and re-analysis of the
    same (cycle, digest) is pure cache.

    Args:
        kb: knowledge base; classifier and preference must be set.
        options: candidate options, at least one.
        uncs: the cycle's environment sample.
        cycle: current cycle number.
        rng: source for the one shuffle.
        verifier: callback running the managed system, (option, uncs)
            to a quality point.
        counter_thr: outlier counter bound; math.inf turns the counter
            escape off (exhaustive-scan test configurations).

    Raises:
        InvalidInputError: empty option list.
        InvalidStateError: loops exhausted and no ranked class has a
            verified member (only reachable with a partial ranking).
    """
    if not options:
        raise InvalidInputError("no adaptation options to analyse")
    kb.preference.validate_against(kb.classifier)

    shuffled = [options[int(i)] for i in rng.permutation(len(options))]
    digest = uncs.digest()
    outlier_counter = 0
    outliers = 0
    verifications = 0

    def lookup(option: AdaptationOption) -> CachedResult:
        nonlocal verifications
        key = (cycle, digest, option.option_id)
        hit = kb.results.get(key)
        if hit is None:
            point = verifier(option, uncs)
            c = classify(kb.classifier, point.as_array())
            hit = CachedResult(verification=point, class_id=c.class_id,
                               membership=c.membership)
            kb.store(key, hit)
            verifications += 1
        return hit

    for rank, target in enumerate(kb.preference.ranking, start=1):
        for option in shuffled:
            res = lookup(option)
            if res.membership > PROB_THR or outlier_counter > counter_thr:
                if res.class_id == target:
                    return AnalysisResult(
                        option_id=option.option_id,
                        class_id=target,
                        rank=rank,
                        membership=res.membership,
                        verifications=verifications,
                        outliers=outliers,
                        fallback=False,
                    )
            else:
                outlier_counter += 1
                outliers += 1

    return _fallback(kb, shuffled, digest, cycle, verifications, outliers)


def _fallback(
    kb: KnowledgeBase,
    shuffled: Sequence[AdaptationOption],
    digest: str,
    cycle: int,
    verifications: int,
    outliers: int,
) -> AnalysisResult:
    # no ranked-class member admitted anywhere: take the best verified
    # point of the highest-ranked class that has one at all
    by_option = {
        o.option_id: kb.results[(cycle, digest, o.option_id)] for o in shuffled
    }
    for rank, target in enumerate(kb.preference.ranking, start=1):
        candidates = [
            (res.membership, -oid) for oid, res in by_option.items()
            if res.class_id == target
        ]
        if candidates:
            membership, neg_oid = max(candidates)
            return AnalysisResult(
                option_id=-neg_oid,
                class_id=target,
                rank=rank,
                membership=membership,
                verifications=verifications,
                outliers=outliers,
                fallback=True,
            )
    raise InvalidStateError("no verified point falls in any ranked class")


@dataclass(frozen=True)
class AppliedConfiguration:
    """What the executor pushes to the managed network for the next cycle."""

    option_id: int
    split_indices: tuple[int, ...]
    powers: dict[int, int]


def plan_and_execute(
    result: AnalysisResult,
    options: Sequence[AdaptationOption],
    topology: Topology,
    uncs: UncertaintySample,
) -> AppliedConfiguration:
    """Turn the selected option into the active network configuration.

    Fallback results apply exactly like normal ones.  Powers are the
    cycle's minimal assignment, shared by all options.
    """
    for option in options:
        if option.option_id == result.option_id:
            return AppliedConfiguration(
                option_id=option.option_id,
                split_indices=option.split_indices,
                powers=assign_power(topology, uncs),
            )
    raise InvalidInputError(f"selected option {result.option_id} not in option list")


def prune_results(kb: KnowledgeBase, current_cycle: int) -> int:
    """Drop cache entries older than the retention window.

    Keeps cycle >= current_cycle - retention_window, returns the number
    of entries removed.
    """
    cutoff = current_cycle - kb.retention_window
    stale = [k for k in kb.results if k[0] < cutoff]
    for k in stale:
        del kb.results[k]
    return len(stale)
