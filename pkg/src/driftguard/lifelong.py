"""Lifelong learning layer: state collection, novelty detection, evolution.

Every `period` cycles the layer looks at the verified quality pairs of
the last `period` cycles.  When enough of them fall outside every known
class, it fits a mixture to the strays, merges it into the current
classifier, and asks an operator to refine and rank the result.  The
automated operator accepts the proposal and ranks classes by the
scenario preference; the human operator works through the console
service; the inactive operator never even receives a proposal, so the
classifier stays frozen for the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidFeedbackError, InvalidInputError, InvalidStateError
from .gmm import (
    GmmModel,
    classify_batch,
    fit_gmm,
    merge_models,
    model_to_dict,
    out_of_class_mask,
    select_component_count,
)
from .mapek import KnowledgeBase, PreferenceModel
from .metrics import rank_classes
from .network import QualityPoint
from .scenarios import OPERATOR_AUTOMATED, OPERATOR_HUMAN, OPERATOR_INACTIVE, OPERATOR_MODES

OUT_OF_CLASS_PERCENT_THR = 20.0
LIFELONG_PERIOD = 10
DETECTION_K_MAX = 5
# a proposed component needs this many supporting points to be credible
DETECTION_MIN_SUPPORT = 5
STORE_RETENTION = 1000

REQUEST_PENDING = "pending"
REQUEST_ANSWERED = "answered"
REQUEST_EXPIRED = "expired"


class QualityAttribute(NamedTuple):
    """One verified pair of a cycle, with its classification at the time."""

    option_id: int
    point: QualityPoint
    class_id: int
    membership: float


@dataclass(frozen=True)
class StateSnapshot:
    """Immutable record of one completed cycle.

    classifier and preference are the knowledge-base references at
    collection time; evolution replaces those objects rather than
    mutating them, so the snapshot keeps seeing the original.
    """

    cycle: int
    quality_attributes: tuple[QualityAttribute, ...]
    classifier: GmmModel
    preference: PreferenceModel


@dataclass(frozen=True)
class DetectionOutcome:
    """Result of one detection pass over the window.

    window_labels maps each windowed cycle to the class ids of its
    quality pairs, recomputed against the merged model; present only
    when detected.
    """

    out_of_class_fraction: float
    detected: bool
    new_model: GmmModel | None = None
    merged_model: GmmModel | None = None
    out_of_class_points: np.ndarray | None = None
    window_labels: dict[int, tuple[int, ...]] | None = None

    def __post_init__(self) -> None:
        if self.detected != (self.out_of_class_fraction >= OUT_OF_CLASS_PERCENT_THR):
            raise InvalidStateError(
                f"detected={self.detected} contradicts fraction "
                f"{self.out_of_class_fraction:.1f}%")


@dataclass
class FeedbackRequest:
    """One proposal awaiting operator refinement and ranking."""

    request_id: int
    proposal: GmmModel
    window: tuple[StateSnapshot, ...]
    new_class_ids: tuple[int, ...]
    new_class_points: np.ndarray
    status: str = REQUEST_PENDING

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "model": model_to_dict(self.proposal),
            "window": [
                {
                    "cycle": snap.cycle,
                    "option_ids": [a.option_id for a in snap.quality_attributes],
                    "points": [[a.point.packet_loss, a.point.energy]
                               for a in snap.quality_attributes],
                    "class_ids": [a.class_id for a in snap.quality_attributes],
                    "memberships": [a.membership for a in snap.quality_attributes],
                }
                for snap in self.window
            ],
            "new_class_ids": list(self.new_class_ids),
            "status": self.status,
        }


@dataclass(frozen=True)
class Box:
    """Axis-aligned selector in (packet loss %, energy mC), edges inclusive."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidFeedbackError(
                f"degenerate box [{self.x_min}, {self.x_max}] x "
                f"[{self.y_min}, {self.y_max}]")
        if self.x_min < 0.0 or self.x_max > 100.0 or self.y_min < 0.0:
            raise InvalidFeedbackError("box leaves the quality domain")

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return ((pts[:, 0] >= self.x_min) & (pts[:, 0] <= self.x_max)
                & (pts[:, 1] >= self.y_min) & (pts[:, 1] <= self.y_max))

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, data: dict) -> "Box":
        try:
            return cls(x_min=float(data["x_min"]), x_max=float(data["x_max"]),
                       y_min=float(data["y_min"]), y_max=float(data["y_max"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidFeedbackError(f"malformed box: {data!r}") from exc


@dataclass(frozen=True)
class OperatorFeedback:
    """What the operator sends back: optional box edits plus a total ranking."""

    boxes: tuple[Box, ...]
    ranking: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"boxes": [b.to_dict() for b in self.boxes],
                "ranking": list(self.ranking)}

    @classmethod
    def from_dict(cls, data: dict) -> "OperatorFeedback":
        boxes = tuple(Box.from_dict(b) for b in data.get("boxes", []))
        try:
            ranking = tuple(int(c) for c in data["ranking"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidFeedbackError(f"malformed ranking: {data!r}") from exc
        return cls(boxes=boxes, ranking=ranking)


# ---------------------------------------------------------------------------
# detection

def detect_new_classes(
    states: Sequence[StateSnapshot],
    model: GmmModel,
    seed: int,
    first_new_class_id: int | None = None,
) -> DetectionOutcome:
    """Check the windowed quality pairs for points outside every class.

    Below the 20% threshold nothing happens.  At or above it, the
    out-of-class points get their own mixture: component count selected
    in 1..5 (capped by the point count), fitted by EM, relabeled with
    fresh class ids, and merged into the given model without touching
    its components.  All windowed pairs are then relabeled against the
    merged model.

    Args:
        states: the window's snapshots, each with its quality pairs.
        model: the classifier the fraction is measured against.
        seed: drives count selection and fitting.
        first_new_class_id: first id for new components; defaults to one
            past the model's highest id.

    Raises:
        InvalidInputError: no snapshot carries any quality pair.
    """
    points, cycles = _window_points(states)
    if points.shape[0] == 0:
        raise InvalidInputError("detection window holds no quality pairs")
    mask = out_of_class_mask(model, points)
    fraction = 100.0 * float(mask.mean())
    if fraction < OUT_OF_CLASS_PERCENT_THR:
        return DetectionOutcome(out_of_class_fraction=fraction, detected=False)

    out_points = points[mask]
    k = select_component_count(
        out_points, k_max=_k_cap(out_points.shape[0]), seed=seed)
    fitted = fit_gmm(out_points, k, seed=seed)
    start = first_new_class_id
    if start is None:
        start = max(model.class_ids()) + 1
    new_model = _relabel(fitted, start)
    merged = merge_models(model, new_model)

    window_labels = {}
    for snap in states:
        if snap.quality_attributes:
            snap_points = np.array(
                [[a.point.packet_loss, a.point.energy] for a in snap.quality_attributes])
            ids, _ = classify_batch(merged, snap_points)
            window_labels[snap.cycle] = tuple(int(i) for i in ids)
        else:
            window_labels[snap.cycle] = ()
    return DetectionOutcome(
        out_of_class_fraction=fraction,
        detected=True,
        new_model=new_model,
        merged_model=merged,
        out_of_class_points=out_points,
        window_labels=window_labels,
    )


def _k_cap(n_points: int) -> int:
    """Candidate component ceiling for a refit on n_points."""
    return max(1, min(DETECTION_K_MAX, n_points // DETECTION_MIN_SUPPORT))


def _window_points(states: Sequence[StateSnapshot]) -> tuple[np.ndarray, list[int]]:
    rows = []
    cycles = []
    for snap in states:
        for attr in snap.quality_attributes:
            rows.append([attr.point.packet_loss, attr.point.energy])
            cycles.append(snap.cycle)
    if not rows:
        return np.empty((0, 2)), cycles
    return np.array(rows, dtype=float), cycles


def _relabel(model: GmmModel, start: int) -> GmmModel:
    comps = []
    for i, c in enumerate(model.components):
        comps.append(type(c)(
            mean=c.mean.copy(),
            covariance=c.covariance.copy(),
            weight=c.weight,
            support_count=c.support_count,
            class_id=start + i,
        ))
    return GmmModel(components=comps, outlier_threshold=model.outlier_threshold)


# ---------------------------------------------------------------------------
# operator feedback

def apply_box_feedback(
    request: FeedbackRequest, boxes: Sequence[Box], seed: int = 0
) -> GmmModel:
    """Refine the proposal's new components with the operator's boxes.

    The request's out-of-class points are partitioned by box membership
    (first box containing a point claims it, remainder is its own
    partition); every nonempty partition is refit independently with its
    own count selection.  The refit components replace the proposal's
    new components; base components stay untouched.  No boxes means no
    edit: the proposal comes back as-is.

    Raises:
        InvalidStateError: request not pending.
        InvalidFeedbackError: a box holds none of the new-class points.
    """
    if request.status != REQUEST_PENDING:
        raise InvalidStateError(f"request {request.request_id} is {request.status}")
    if not boxes:
        return request.proposal

    points = np.asarray(request.new_class_points, dtype=float)
    claimed = np.zeros(points.shape[0], dtype=bool)
    partitions = []
    for i, box in enumerate(boxes):
        inside = box.contains(points) & ~claimed
        if not inside.any():
            raise InvalidFeedbackError(f"box {i} selects no new-class points")
        claimed |= inside
        partitions.append(points[inside])
    if (~claimed).any():
        partitions.append(points[~claimed])

    new_ids = set(request.new_class_ids)
    base = [c for c in request.proposal.components if c.class_id not in new_ids]
    base_model = GmmModel(components=base,
                          outlier_threshold=request.proposal.outlier_threshold)

    next_id = max(request.proposal.class_ids()) + 1
    refit_comps = []
    for part in partitions:
        k = select_component_count(part, k_max=_k_cap(part.shape[0]), seed=seed)
        fitted = _relabel(fit_gmm(part, k, seed=seed), next_id)
        next_id += len(fitted.components)
        refit_comps.extend(fitted.components)
    refit_model = GmmModel(components=refit_comps,
                           outlier_threshold=request.proposal.outlier_threshold)
    return merge_models(base_model, refit_model)


def apply_ranking(refined: GmmModel, ranking: Sequence[int]) -> PreferenceModel:
    """Total order over the refined model's classes, as a preference.

    Raises:
        InvalidFeedbackError: ranking is not a permutation of the
            refined model's class ids.
    """
    wanted = tuple(int(c) for c in ranking)
    if sorted(wanted) != sorted(refined.class_ids()):
        raise InvalidFeedbackError(
            f"ranking {list(wanted)} is not a permutation of classes "
            f"{sorted(refined.class_ids())}")
    return PreferenceModel(ranking=wanted)


def evolve(kb: KnowledgeBase, refined: GmmModel, preference: PreferenceModel) -> None:
    """Install the refined classifier and preference into the knowledge base.

    Validation happens before either field changes, so a failed evolve
    leaves the knowledge base exactly as it was.
    """
    refined.validate()
    preference.validate_against(refined)
    kb.classifier = refined
    kb.preference = preference


def automated_operator(
    request: FeedbackRequest, preference_order: Sequence[str]
) -> OperatorFeedback:
    """Scripted stand-in for the human: accept the proposal, rank by means.

    No box edits; the ranking sorts all classes lexicographically on
    component means in the scenario's preference order, with near-ties
    on the first axis resolved by the second.
    """
    ranking = rank_classes(request.proposal, preference_order)
    return OperatorFeedback(boxes=(), ranking=ranking)


# ---------------------------------------------------------------------------
# the loop

@dataclass
class LifelongLoop:
    """Knowledge manager plus task manager, one instance per run.

    Owns the snapshot store, the single pending feedback request, and
    the fresh class id allocator.  The run loop calls collect_state
    every cycle and tick at every period boundary; feedback arrives
    either inline (automated mode) or through deliver_feedback (human
    mode, via the console service).
    """

    mode: str = OPERATOR_AUTOMATED
    preference_order: tuple[str, ...] = ("packet_loss", "energy")
    period: int = LIFELONG_PERIOD
    seed: int = 0
    store: dict[int, StateSnapshot] = field(default_factory=dict)
    pending: FeedbackRequest | None = None
    _next_request_id: int = 1
    _next_class_id: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in OPERATOR_MODES:
            raise InvalidInputError(f"unknown operator mode {self.mode!r}")
        if self.period < 1:
            raise InvalidInputError(f"period must be >= 1, got {self.period}")

    # -- knowledge manager

    def collect_state(self, kb: KnowledgeBase, cycle: int) -> StateSnapshot:
        """Snapshot the cycle's verified pairs; duplicate collects are no-ops.

        The stored window is bounded to the last STORE_RETENTION cycles.
        """
        existing = self.store.get(cycle)
        if existing is not None:
            return existing
        attrs = []
        for key in sorted(k for k in kb.results if k[0] == cycle):
            res = kb.results[key]
            attrs.append(QualityAttribute(
                option_id=key[2],
                point=res.verification,
                class_id=res.class_id,
                membership=res.membership,
            ))
        snap = StateSnapshot(
            cycle=cycle,
            quality_attributes=tuple(attrs),
            classifier=kb.classifier,
            preference=kb.preference,
        )
        self.store[cycle] = snap
        for old in [c for c in self.store if c < cycle - STORE_RETENTION]:
            del self.store[old]
        return snap

    def window(self, cycle: int) -> list[StateSnapshot]:
        """Snapshots of the last `period` cycles up to and including cycle."""
        lo = cycle - self.period
        return [self.store[c] for c in sorted(self.store) if lo < c <= cycle]

    # -- task manager

    def propose_model(
        self, outcome: DetectionOutcome, states: Sequence[StateSnapshot]
    ) -> FeedbackRequest:
        """Open a feedback request for a detection.

        Raises:
            InvalidStateError: nothing detected, or a request is
                already pending.
        """
        if not outcome.detected:
            raise InvalidStateError("nothing detected, nothing to propose")
        if self.pending is not None:
            raise InvalidStateError(
                f"request {self.pending.request_id} is still pending")
        request = FeedbackRequest(
            request_id=self._next_request_id,
            proposal=outcome.merged_model,
            window=tuple(states),
            new_class_ids=tuple(outcome.new_model.class_ids()),
            new_class_points=outcome.out_of_class_points,
        )
        self._next_request_id += 1
        self._next_class_id = max(request.new_class_ids) + 1
        self.pending = request
        return request

    def tick(self, kb: KnowledgeBase, cycle: int) -> DetectionOutcome | None:
        """Run detection at a period boundary.

        Off-period cycles return None.  In inactive mode a detection is
        reported but no request is created and nothing ever evolves.  In
        automated mode the scripted operator answers inline.  In human
        mode the request stays pending for the console.

        Raises:
            InvalidStateError: called while a request is pending (the
                run loop must pause instead).
        """
        if cycle % self.period != 0:
            return None
        if self.pending is not None:
            raise InvalidStateError(
                f"tick at cycle {cycle} with request "
                f"{self.pending.request_id} pending")
        states = self.window(cycle)
        first_new = self._next_class_id
        if first_new is not None:
            first_new = max(first_new, max(kb.classifier.class_ids()) + 1)
        outcome = detect_new_classes(
            states, kb.classifier, seed=self._detection_seed(cycle),
            first_new_class_id=first_new)
        if not outcome.detected or self.mode == OPERATOR_INACTIVE:
            return outcome
        request = self.propose_model(outcome, states)
        if self.mode == OPERATOR_AUTOMATED:
            feedback = automated_operator(request, self.preference_order)
            self.deliver_feedback(kb, feedback)
        return outcome

    def deliver_feedback(
        self, kb: KnowledgeBase, feedback: OperatorFeedback, seed: int = 0
    ) -> GmmModel:
        """Apply operator feedback to the pending request and evolve.

        Raises:
            InvalidStateError: no pending request.
            InvalidFeedbackError: bad boxes or ranking; the request
                stays pending and the knowledge base untouched.
        """
        if self.pending is None:
            raise InvalidStateError("no pending feedback request")
        request = self.pending
        refined = apply_box_feedback(request, feedback.boxes, seed=seed)
        preference = apply_ranking(refined, feedback.ranking)
        evolve(kb, refined, preference)
        request.status = REQUEST_ANSWERED
        self.pending = None
        self._next_class_id = max(refined.class_ids()) + 1
        return refined

    def _detection_seed(self, cycle: int) -> int:
        return int(np.random.SeedSequence([self.seed, cycle]).generate_state(1)[0])
