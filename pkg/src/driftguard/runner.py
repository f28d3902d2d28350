"""Run orchestration: training, the approach loops, reports, and the matrix.

Everything between a scenario spec and a report on disk lives here: the
exhaustive verification archive, the pre-deployment classifier fit, the
per-cycle MAPE loop for each approach, lifelong ticks, and deterministic
export.  A RunContext carries the spec-level precomputation so the
approaches of one evaluation cell share the archive and the training fit.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cmp_to_key
from pathlib import Path

import numpy as np

from . import ml2asr
from .errors import InvalidInputError, InvalidStateError
from .gmm import GmmModel, fit_gmm, select_component_count
from .lifelong import LIFELONG_PERIOD, FeedbackRequest, LifelongLoop, OperatorFeedback
from .mapek import (
    KnowledgeBase,
    PreferenceModel,
    analyse,
    plan_and_execute,
    prune_results,
)
from .metrics import (
    AXIS_INDEX,
    RANK_TIE_TOLERANCE,
    ArchiveCycle,
    IdealBaseline,
    QualityArchive,
    build_ideal_baseline,
    rank_classes,
    utility,
    windowed_rsm,
)
from .network import QualityPoint, assign_power
from .regimes import Regime
from .scenarios import (
    OPERATOR_AUTOMATED,
    OPERATOR_HUMAN,
    OPERATOR_INACTIVE,
    ScenarioSpec,
    enumerate_matrix,
    scenario_from_dict,
    scenario_to_dict,
)

APPROACH_BASELINE = "baseline"
APPROACH_PREDEFINED = "predefined"
APPROACH_ML2ASR = "ml2asr"
APPROACH_LSA_FEEDBACK = "lsa_feedback"
APPROACH_LSA_NOFEEDBACK = "lsa_nofeedback"
APPROACHES = (
    APPROACH_BASELINE,
    APPROACH_PREDEFINED,
    APPROACH_ML2ASR,
    APPROACH_LSA_FEEDBACK,
    APPROACH_LSA_NOFEEDBACK,
)

# seed streams 0 and 1 belong to the regime machinery
STREAM_ANALYSIS = 2
STREAM_TRAINING = 3

TRAINING_SUBSAMPLE = 4000
# headroom above the largest true cluster count so the BIC elbow is interior
TRAINING_K_MAX = 7
ML2ASR_HISTORY_PER_CYCLE = 100

REPORT_VERSION = 1
RUNNER_CSV_HEADER = "cycle,approach,option_id,pl,ec,utility,rank,ideal_rank"

FeedbackProvider = Callable[[FeedbackRequest], OperatorFeedback]


@dataclass(frozen=True)
class CycleRecord:
    """One executed adaptation: what ran and how well it scored."""

    cycle: int
    approach: str
    option_id: int
    packet_loss: float
    energy: float
    utility: float
    selected_rank: int
    ideal_rank: int
    fallback: bool = False


@dataclass(frozen=True)
class WindowAggregate:
    """Plot-ready per-window numbers; window ids count from 1."""

    window_id: int
    start_cycle: int
    end_cycle: int
    mean_utility: float
    rsm: float


@dataclass
class RunReport:
    """Everything a run leaves behind, JSON- and CSV-exportable."""

    approach: str
    config: dict
    m: int
    records: list[CycleRecord] = field(default_factory=list)
    windows: list[WindowAggregate] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)


@dataclass
class RunContext:
    """Spec-level precomputation shared by every approach of one cell.

    points holds the exhaustively verified qualities of every option for
    every cycle; approaches verify against it instead of re-running the
    managed system, which is sound because verification is deterministic
    per (spec, cycle, option).
    """

    spec: ScenarioSpec
    regime: Regime
    points: dict[int, np.ndarray]
    archive: QualityArchive
    ideal: IdealBaseline
    classifier: GmmModel
    ranking: tuple[int, ...]
    training_rows: list[tuple[int, int, float, float, float, int, int]]
    training_history: list[tuple[np.ndarray, QualityPoint]]


def _lex_best(points: np.ndarray, preference: Sequence[str]) -> int:
    """Index of the best row under the tolerant-lexicographic order.

    Same comparison rule as the class ranking: the preferred axis decides
    outside the tie tolerance, the second axis inside it, lowest index last.
    """
    primary = AXIS_INDEX[preference[0]]
    secondary = AXIS_INDEX[preference[1]]

    def compare(i: int, j: int) -> int:
        d0 = float(points[i, primary] - points[j, primary])
        if abs(d0) > RANK_TIE_TOLERANCE:
            return -1 if d0 < 0.0 else 1
        d1 = float(points[i, secondary] - points[j, secondary])
        if d1 < 0.0:
            return -1
        if d1 > 0.0:
            return 1
        return i - j

    return sorted(range(points.shape[0]), key=cmp_to_key(compare))[0]


def prepare_run(spec: ScenarioSpec) -> RunContext:
    """Archive every cycle exhaustively, build the ideal baseline, and fit
    the pre-deployment classifier on the training window."""
    regime = Regime(spec)
    n_options = len(regime.options)
    points: dict[int, np.ndarray] = {}
    cycles: dict[int, ArchiveCycle] = {}
    for cycle in range(1, spec.cycles + 1):
        sample = regime.sample_uncertainties(cycle)
        state = regime.active_regime(cycle)
        verified = regime.verify_all(sample, state)
        pts = np.array([[p.packet_loss, p.energy] for p in verified])
        labels = tuple(state.cluster_of(o.option_id) for o in regime.options)
        points[cycle] = pts
        cycles[cycle] = ArchiveCycle(points=pts, labels=labels)
    archive = QualityArchive(n_options=n_options, cycles=cycles)
    ideal = build_ideal_baseline(archive, spec.preference)

    train_cycles = range(1, spec.training_window + 1)
    pool = np.vstack([points[c] for c in train_cycles])
    rng = np.random.default_rng([spec.seed, STREAM_TRAINING, 0])
    if pool.shape[0] > TRAINING_SUBSAMPLE:
        keep = rng.choice(pool.shape[0], TRAINING_SUBSAMPLE, replace=False)
        pool = pool[keep]
    k = select_component_count(pool, k_max=TRAINING_K_MAX, seed=spec.seed)
    classifier = fit_gmm(pool, k, seed=spec.seed)
    ranking = rank_classes(classifier, spec.preference)

    training_rows = []
    for cycle in train_cycles:
        pts = points[cycle]
        oid = _lex_best(pts, spec.preference)
        q = QualityPoint(float(pts[oid, 0]), float(pts[oid, 1]))
        training_rows.append((
            cycle,
            oid,
            q.packet_loss,
            q.energy,
            utility(q),
            ideal.rank_of_point(q.as_array()),
            ideal.r_star[cycle],
        ))

    rng_h = np.random.default_rng([spec.seed, STREAM_TRAINING, 1])
    history: list[tuple[np.ndarray, QualityPoint]] = []
    per_cycle = min(ML2ASR_HISTORY_PER_CYCLE, n_options)
    for cycle in train_cycles:
        sample = regime.sample_uncertainties(cycle)
        powers = assign_power(regime.topology, sample)
        chosen = rng_h.choice(n_options, size=per_cycle, replace=False)
        for oid in sorted(int(i) for i in chosen):
            feats = ml2asr.option_features(
                regime.topology, regime.options[oid], sample, powers)
            history.append(
                (feats, QualityPoint(float(points[cycle][oid, 0]),
                                     float(points[cycle][oid, 1]))))

    return RunContext(
        spec=spec,
        regime=regime,
        points=points,
        archive=archive,
        ideal=ideal,
        classifier=classifier,
        ranking=ranking,
        training_rows=training_rows,
        training_history=history,
    )


def _effective_mode(spec: ScenarioSpec, approach: str) -> str | None:
    """Operator mode actually used by a run; the approach wins over the
    spec axis so either lsa variant can run against any cell."""
    if approach == APPROACH_LSA_NOFEEDBACK:
        return OPERATOR_INACTIVE
    if approach == APPROACH_LSA_FEEDBACK:
        if spec.operator_mode == OPERATOR_HUMAN:
            return OPERATOR_HUMAN
        return OPERATOR_AUTOMATED
    return None


def run(
    spec: ScenarioSpec,
    approach: str,
    context: RunContext | None = None,
    feedback_provider: FeedbackProvider | None = None,
    on_record: Callable[[CycleRecord], None] | None = None,
    on_event: Callable[[dict], None] | None = None,
) -> RunReport:
    """Execute one (spec, approach) cell and return its report.

    The training window is recorded with the tolerant-lexicographic
    selection over exhaustive verification (the pre-deployment protocol,
    identical for every approach); the remaining cycles run the
    approach's own loop.  Deterministic given (spec, approach): every
    random draw comes from streams keyed by the spec seed.

    Args:
        spec: the evaluation cell.
        approach: one of APPROACHES.
        context: shared precomputation; built on the fly when absent.
        feedback_provider: answers human-mode feedback requests; rejecting
            or raising aborts the run.  Required iff the effective
            operator mode is human.
        on_record: called with each record as it completes; the operator
            service streams progress through this.
        on_event: called with each lifelong event as it is logged.

    Raises:
        InvalidInputError: unknown approach, mismatched context, or a
            human-mode run without a provider.
    """
    if approach not in APPROACHES:
        raise InvalidInputError(f"unknown approach {approach!r}")
    ctx = context if context is not None else prepare_run(spec)
    if ctx.spec != spec:
        raise InvalidInputError("context was prepared for a different spec")

    mode = _effective_mode(spec, approach)
    if mode == OPERATOR_HUMAN and feedback_provider is None:
        raise InvalidInputError(
            "human operator mode needs a feedback provider; use the service")

    regime = ctx.regime
    ideal = ctx.ideal

    # a few cycles of verified results is all anything downstream reads;
    # the default retention would hold every post-drift full scan
    if approach == APPROACH_BASELINE:
        kb = KnowledgeBase(
            classifier=ideal.model, preference=PreferenceModel(ideal.ranking),
            retention_window=50)
    else:
        kb = KnowledgeBase(
            classifier=ctx.classifier, preference=PreferenceModel(ctx.ranking),
            retention_window=50)

    loop: LifelongLoop | None = None
    if mode is not None:
        loop = LifelongLoop(
            mode=mode, preference_order=spec.preference, seed=spec.seed)

    regressor = None
    history: list[tuple[np.ndarray, QualityPoint]] = []
    if approach == APPROACH_ML2ASR:
        history = list(ctx.training_history)
        regressor = ml2asr.train(history)

    records = [
        CycleRecord(cycle, approach, oid, pl, ec, u, rank, ideal_rank)
        for cycle, oid, pl, ec, u, rank, ideal_rank in ctx.training_rows
    ]
    events: list[dict] = []
    if on_record is not None:
        for rec in records:
            on_record(rec)

    def _log_event(event: dict) -> None:
        events.append(event)
        if on_event is not None:
            on_event(event)

    for cycle in range(spec.training_window + 1, spec.cycles + 1):
        sample = regime.sample_uncertainties(cycle)
        pts = ctx.points[cycle]

        def verifier(option, uncs, _pts=pts):
            return QualityPoint(float(_pts[option.option_id, 0]),
                                float(_pts[option.option_id, 1]))

        rng = np.random.default_rng([spec.seed, cycle, STREAM_ANALYSIS])
        if approach == APPROACH_ML2ASR:
            result = ml2asr.reduce_and_select(
                regime.options, sample, regressor, kb, cycle, rng, verifier,
                topology=regime.topology)
        else:
            result = analyse(kb, regime.options, sample, cycle, rng, verifier)
        plan_and_execute(result, regime.options, regime.topology, sample)

        q = QualityPoint(float(pts[result.option_id, 0]),
                         float(pts[result.option_id, 1]))
        selected_rank = ideal.rank_of_point(q.as_array())
        ideal_rank = ideal.r_star[cycle]
        if selected_rank < ideal_rank:
            raise InvalidStateError(
                f"cycle {cycle}: selected rank {selected_rank} beats the "
                f"exhaustive ideal {ideal_rank}; rank bookkeeping is broken")
        record = CycleRecord(
            cycle=cycle,
            approach=approach,
            option_id=result.option_id,
            packet_loss=q.packet_loss,
            energy=q.energy,
            utility=utility(q),
            selected_rank=selected_rank,
            ideal_rank=ideal_rank,
            fallback=result.fallback,
        )
        records.append(record)
        if on_record is not None:
            on_record(record)

        if loop is not None:
            loop.collect_state(kb, cycle)
            if cycle % loop.period == 0:
                outcome = loop.tick(kb, cycle)
                if outcome is not None and outcome.detected:
                    _log_event({
                        "kind": "new_class_detected",
                        "cycle": cycle,
                        "out_of_class_fraction": outcome.out_of_class_fraction,
                        "new_class_ids": [
                            int(c) for c in outcome.new_model.class_ids()],
                        "evolved": mode != OPERATOR_INACTIVE,
                    })
                    if mode == OPERATOR_AUTOMATED:
                        # tick answered inline; log the installed ranking
                        _log_event({
                            "kind": "feedback_applied",
                            "cycle": cycle,
                            "mode": mode,
                            "boxes": 0,
                            "ranking": [int(c)
                                        for c in kb.preference.ranking],
                        })
                    elif mode == OPERATOR_HUMAN:
                        request = loop.pending
                        feedback = feedback_provider(request)
                        loop.deliver_feedback(kb, feedback)
                        _log_event({
                            "kind": "feedback_applied",
                            "cycle": cycle,
                            "request_id": request.request_id,
                            "mode": mode,
                            "boxes": len(feedback.boxes),
                            "ranking": [int(c) for c in feedback.ranking],
                        })

        if approach == APPROACH_ML2ASR:
            powers = assign_power(regime.topology, sample)
            for key in sorted(k for k in kb.results if k[0] == cycle):
                res = kb.results[key]
                feats = ml2asr.option_features(
                    regime.topology, regime.options[key[2]], sample, powers)
                history.append((feats, res.verification))
            if cycle % LIFELONG_PERIOD == 0:
                regressor = ml2asr.train(history[-regressor.training_window:])

        prune_results(kb, cycle)

    report = RunReport(
        approach=approach,
        config=scenario_to_dict(spec),
        m=ideal.m,
        records=records,
        events=events,
    )
    report.windows = _aggregate_windows(report)
    return report


def _aggregate_windows(report: RunReport) -> list[WindowAggregate]:
    ranks = [r.selected_rank for r in report.records]
    stars = [r.ideal_rank for r in report.records]
    rsms = windowed_rsm(ranks, stars, report.m)
    windows = []
    for idx, value in enumerate(rsms):
        chunk = report.records[idx * 10:(idx + 1) * 10]
        windows.append(WindowAggregate(
            window_id=idx + 1,
            start_cycle=chunk[0].cycle,
            end_cycle=chunk[-1].cycle,
            mean_utility=float(np.mean([r.utility for r in chunk])),
            rsm=value,
        ))
    return windows


# ---------------------------------------------------------------------------
# persistence


def report_to_dict(report: RunReport) -> dict:
    return {
        "version": REPORT_VERSION,
        "approach": report.approach,
        "config": report.config,
        "m": report.m,
        "records": [
            {
                "cycle": r.cycle,
                "approach": r.approach,
                "option_id": r.option_id,
                "pl": r.packet_loss,
                "ec": r.energy,
                "utility": r.utility,
                "rank": r.selected_rank,
                "ideal_rank": r.ideal_rank,
                "fallback": r.fallback,
            }
            for r in report.records
        ],
        "windows": [
            {
                "window_id": w.window_id,
                "start_cycle": w.start_cycle,
                "end_cycle": w.end_cycle,
                "mean_utility": w.mean_utility,
                "rsm": w.rsm,
            }
            for w in report.windows
        ],
        "events": report.events,
    }


def report_from_dict(data: dict) -> RunReport:
    if not isinstance(data, dict):
        raise InvalidInputError("report payload must be a JSON object")
    if data.get("version") != REPORT_VERSION:
        raise InvalidInputError(
            f"unsupported report version {data.get('version')!r}")
    records = [
        CycleRecord(
            cycle=r["cycle"],
            approach=r["approach"],
            option_id=r["option_id"],
            packet_loss=r["pl"],
            energy=r["ec"],
            utility=r["utility"],
            selected_rank=r["rank"],
            ideal_rank=r["ideal_rank"],
            fallback=r.get("fallback", False),
        )
        for r in data["records"]
    ]
    windows = [
        WindowAggregate(
            window_id=w["window_id"],
            start_cycle=w["start_cycle"],
            end_cycle=w["end_cycle"],
            mean_utility=w["mean_utility"],
            rsm=w["rsm"],
        )
        for w in data["windows"]
    ]
    return RunReport(
        approach=data["approach"],
        config=data["config"],
        m=data["m"],
        records=records,
        windows=windows,
        events=list(data.get("events", [])),
    )


def export_report(report: RunReport, fmt: str, path: str | Path) -> Path:
    """Write a report as csv or json; returns the path written.

    Raises:
        InvalidInputError: empty report or unknown format.
        OSError: unwritable destination.
    """
    if not report.records:
        raise InvalidInputError("refusing to export an empty report")
    path = Path(path)
    if fmt == "csv":
        lines = [RUNNER_CSV_HEADER]
        for r in report.records:
            lines.append(
                f"{r.cycle},{r.approach},{r.option_id},"
                f"{r.packet_loss:.6f},{r.energy:.6f},{r.utility:.6f},"
                f"{r.selected_rank},{r.ideal_rank}")
        payload = "\n".join(lines) + "\n"
    elif fmt == "json":
        payload = json.dumps(report_to_dict(report), indent=2,
                             sort_keys=True) + "\n"
    else:
        raise InvalidInputError(f"unknown export format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(payload)
    return path


def load_report(path: str | Path) -> RunReport:
    with open(path, encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# matrix and aggregation


def matrix_approaches(spec: ScenarioSpec) -> tuple[str, ...]:
    """Approaches applicable to one cell; the operator axis picks the
    lsa variant."""
    lsa = (APPROACH_LSA_NOFEEDBACK if spec.operator_mode == OPERATOR_INACTIVE
           else APPROACH_LSA_FEEDBACK)
    return (APPROACH_BASELINE, APPROACH_PREDEFINED, APPROACH_ML2ASR, lsa)


def run_matrix(
    out_dir: str | Path | None = None,
    base_seed: int = 1,
    approaches: Sequence[str] | None = None,
    progress: Callable[[str, str], None] | None = None,
) -> dict[str, dict[str, RunReport]]:
    """Run every cell of the evaluation matrix.

    approaches=None runs each cell's applicable set; an explicit sequence
    forces those approaches in every cell.  With out_dir set, each report
    lands as <out_dir>/<cell>/<approach>.{csv,json}.  progress, when
    given, is called with (cell_name, approach) after each finished run.
    """
    results: dict[str, dict[str, RunReport]] = {}
    for spec in enumerate_matrix(base_seed):
        ctx = prepare_run(spec)
        cell: dict[str, RunReport] = {}
        for approach in approaches or matrix_approaches(spec):
            report = run(spec, approach, context=ctx)
            cell[approach] = report
            if out_dir is not None:
                cell_dir = Path(out_dir) / spec.cell_name
                cell_dir.mkdir(parents=True, exist_ok=True)
                export_report(report, "csv", cell_dir / f"{approach}.csv")
                export_report(report, "json", cell_dir / f"{approach}.json")
            if progress is not None:
                progress(spec.cell_name, approach)
        results[spec.cell_name] = cell
    return results


def drift_bounds(spec: ScenarioSpec) -> tuple[int, int] | None:
    """(first ramp start, last ramp end), or None for a rampless schedule."""
    ramps = [s for s in spec.schedule if s.ramp]
    if not ramps:
        return None
    return ramps[0].start, ramps[-1].end


def drift_summary(report: RunReport) -> dict:
    """Pre-drift and drift-window aggregates for comparisons.

    Pre-drift covers windows that end before the first ramp; the drift
    window covers windows that start after the last ramp ends.
    """
    spec = scenario_from_dict(report.config)
    bounds = drift_bounds(spec)
    if bounds is None:
        pre = list(report.windows)
        drift: list[WindowAggregate] = []
    else:
        first, last = bounds
        pre = [w for w in report.windows if w.end_cycle < first]
        drift = [w for w in report.windows if w.start_cycle > last]

    def _mean(values: list[float]) -> float | None:
        return float(np.mean(values)) if values else None

    return {
        "approach": report.approach,
        "cell": spec.cell_name,
        "pre_rsm": _mean([w.rsm for w in pre]),
        "pre_utility": _mean([w.mean_utility for w in pre]),
        "drift_rsm": _mean([w.rsm for w in drift]),
        "drift_utility": _mean([w.mean_utility for w in drift]),
        "drift_window_utilities": [w.mean_utility for w in drift],
        "fallback_cycles": sum(1 for r in report.records if r.fallback),
        "events": len(report.events),
    }
