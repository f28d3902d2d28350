"""Analysis-stage control flow, caching, planning, and pruning."""

import math

import numpy as np
import pytest

from driftguard.errors import InvalidInputError, InvalidStateError
from driftguard.gmm import GaussianComponent, GmmModel, classify_batch, model_from_dict
from driftguard.mapek import (
    COUNTER_THR,
    PROB_THR,
    AnalysisResult,
    CachedResult,
    KnowledgeBase,
    PreferenceModel,
    analyse,
    plan_and_execute,
    prune_results,
)
from driftguard.metrics import ArchiveCycle, QualityArchive, build_ideal_baseline
from driftguard.network import (
    AdaptationOption,
    QualityPoint,
    Topology,
    UncertaintySample,
    assign_power,
)
from driftguard.regimes import Regime
from driftguard.scenarios import PREF_LESS_PL, ScenarioSpec


def _model(means, class_ids=None, sigma=0.5):
    means = np.asarray(means, dtype=float)
    ids = class_ids or list(range(len(means)))
    n = len(means)
    comps = [
        GaussianComponent(
            mean=mean,
            covariance=np.eye(2) * sigma * sigma,
            weight=1.0 / n,
            support_count=100,
            class_id=cid,
        )
        for mean, cid in zip(means, ids)
    ]
    return GmmModel(components=comps)


def _options(n):
    return [AdaptationOption(option_id=i, split_indices=(i,)) for i in range(n)]


def _sample(snr=5.0, load=10.0):
    topo = Topology()
    return UncertaintySample(
        snr={link: snr for link in topo.links()},
        loads={m: load for m in topo.parents},
    )


def _shuffle_order(options, seed):
    rng = np.random.default_rng(seed)
    return [options[int(i)] for i in rng.permutation(len(options))]


def _kb(model, ranking):
    return KnowledgeBase(classifier=model, preference=PreferenceModel(ranking=ranking))


def _point_verifier(mapping):
    def verifier(option, uncs):
        return mapping[option.option_id]
    return verifier


# ---------------------------------------------------------------------------
# preference model

def test_preference_model_rank_of():
    pref = PreferenceModel(ranking=(4, 2, 9))
    assert pref.rank_of(4) == 1
    assert pref.rank_of(9) == 3


def test_preference_model_rejects_empty_and_duplicates():
    with pytest.raises(InvalidInputError):
        PreferenceModel(ranking=())
    with pytest.raises(InvalidInputError):
        PreferenceModel(ranking=(1, 2, 1))


def test_preference_model_unranked_class_errors():
    with pytest.raises(InvalidInputError):
        PreferenceModel(ranking=(1,)).rank_of(2)


def test_preference_model_validates_against_classifier():
    model = _model([(10.0, 14.0)])
    PreferenceModel(ranking=(0,)).validate_against(model)
    with pytest.raises(InvalidInputError):
        PreferenceModel(ranking=(0, 5)).validate_against(model)


# ---------------------------------------------------------------------------
# knowledge base

def test_kb_store_rejects_double_verification():
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    key = (1, "d", 0)
    res = CachedResult(verification=QualityPoint(10.0, 14.0), class_id=0, membership=0.9)
    kb.store(key, res)
    with pytest.raises(InvalidStateError):
        kb.store(key, res)


def test_kb_snapshot_round_trips_classifier():
    kb = _kb(_model([(10.0, 14.0), (40.0, 15.0)]), (0, 1))
    kb.store((1, "d", 3),
             CachedResult(verification=QualityPoint(10.0, 14.0), class_id=0, membership=0.9))
    snap = kb.snapshot_to_dict()
    assert snap["results_count"] == 1
    assert snap["preference"] == [0, 1]
    assert snap["retention_window"] == 1000
    restored = model_from_dict(snap["classifier"])
    assert restored.class_ids() == kb.classifier.class_ids()


# ---------------------------------------------------------------------------
# analyse control flow

def test_analyse_rejects_empty_options():
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    with pytest.raises(InvalidInputError):
        analyse(kb, [], _sample(), 1, np.random.default_rng(0), lambda o, u: None)


def test_analyse_one_class_selects_first_scanned_option():
    options = _options(5)
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    verifier = _point_verifier({i: QualityPoint(10.0, 14.0) for i in range(5)})
    result = analyse(kb, options, _sample(), 1, np.random.default_rng(7), verifier)
    assert result.option_id == _shuffle_order(options, 7)[0].option_id
    assert result.verifications == 1
    assert result.rank == 1
    assert result.outliers == 0
    assert not result.fallback


def test_analyse_cache_hit_skips_verification():
    options = _options(5)
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    sample = _sample()
    first = _shuffle_order(options, 7)[0]
    kb.store((1, sample.digest(), first.option_id),
             CachedResult(verification=QualityPoint(10.0, 14.0), class_id=0, membership=0.9))

    def boom(option, uncs):
        raise AssertionError("verifier must not run on a cached key")

    result = analyse(kb, options, sample, 1, np.random.default_rng(7), boom)
    assert result.option_id == first.option_id
    assert result.verifications == 0


def test_analyse_ten_outliers_then_member_hand_trace():
    options = _options(11)
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    scan = _shuffle_order(options, 3)
    mapping = {}
    for pos, opt in enumerate(scan):
        if pos < 10:
            mapping[opt.option_id] = QualityPoint(90.0, 25.0 + 0.1 * pos)
        else:
            mapping[opt.option_id] = QualityPoint(10.0, 14.0)
    result = analyse(kb, options, _sample(), 1, np.random.default_rng(3),
                     _point_verifier(mapping))
    assert result.option_id == scan[10].option_id
    assert result.outliers == 10
    assert result.verifications == 11
    assert result.membership > PROB_THR
    assert not result.fallback


def test_analyse_counter_escape_admits_outliers():
    # all points are outliers; once the counter exceeds 10, the next
    # scanned option is admitted and matches the only class
    options = _options(13)
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    scan = _shuffle_order(options, 5)
    mapping = {
        opt.option_id: QualityPoint(90.0, 25.0 + 0.1 * pos)
        for pos, opt in enumerate(scan)
    }
    result = analyse(kb, options, _sample(), 1, np.random.default_rng(5),
                     _point_verifier(mapping))
    assert result.option_id == scan[11].option_id
    assert result.outliers == 11
    assert result.membership <= PROB_THR
    assert not result.fallback


def test_analyse_admitted_mismatch_does_not_touch_counter():
    # class 1 members are admitted during the class-0 pass and skipped
    # without counting as outliers; the class-1 pass then selects
    options = _options(4)
    kb = _kb(_model([(10.0, 14.0), (40.0, 15.0)]), (0, 1))
    verifier = _point_verifier({i: QualityPoint(40.0, 15.0) for i in range(4)})
    result = analyse(kb, options, _sample(), 1, np.random.default_rng(2), verifier)
    assert result.rank == 2
    assert result.class_id == 1
    assert result.outliers == 0
    assert result.verifications == 4
    assert result.option_id == _shuffle_order(options, 2)[0].option_id
    assert not result.fallback


def test_analyse_fallback_picks_best_member_of_best_class():
    options = _options(5)
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    scan = _shuffle_order(options, 9)
    # 4 to 8 sigma away: outliers, but argmax still lands on class 0
    mapping = {
        opt.option_id: QualityPoint(10.0, 16.0 + 0.5 * pos)
        for pos, opt in enumerate(scan)
    }
    result = analyse(kb, options, _sample(), 1, np.random.default_rng(9),
                     _point_verifier(mapping), counter_thr=math.inf)
    assert result.fallback
    assert result.option_id == scan[0].option_id
    assert result.rank == 1
    assert result.outliers == 5
    assert result.verifications == 5
    assert result.membership <= PROB_THR


def test_analyse_fallback_membership_tie_takes_lowest_option_id():
    options = _options(3)
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    verifier = _point_verifier({i: QualityPoint(10.0, 17.0) for i in range(3)})
    result = analyse(kb, options, _sample(), 1, np.random.default_rng(1), verifier,
                     counter_thr=math.inf)
    assert result.fallback
    assert result.option_id == 0


def test_analyse_partial_ranking_without_members_errors():
    # every point belongs to class 1, but only class 0 is ranked
    options = _options(4)
    kb = _kb(_model([(10.0, 14.0), (40.0, 15.0)]), (0,))
    verifier = _point_verifier({i: QualityPoint(40.0, 15.0) for i in range(4)})
    with pytest.raises(InvalidStateError):
        analyse(kb, options, _sample(), 1, np.random.default_rng(0), verifier)


def test_analyse_is_deterministic_and_verify_once():
    options = _options(5)
    model = _model([(10.0, 14.0)])
    kb = _kb(model, (0,))
    sample = _sample()
    calls = {}

    def verifier(option, uncs):
        calls[option.option_id] = calls.get(option.option_id, 0) + 1
        return QualityPoint(10.0, 16.0 + 0.5 * option.option_id)

    first = analyse(kb, options, sample, 1, np.random.default_rng(4), verifier,
                    counter_thr=math.inf)
    assert all(v == 1 for v in calls.values())
    second = analyse(kb, options, sample, 1, np.random.default_rng(4), verifier,
                     counter_thr=math.inf)
    assert all(v == 1 for v in calls.values())
    assert second.verifications == 0
    assert first.option_id == second.option_id
    assert first.class_id == second.class_id
    assert first.rank == second.rank

    other_kb = _kb(model, (0,))
    calls.clear()
    replay = analyse(other_kb, options, sample, 1, np.random.default_rng(4), verifier,
                     counter_thr=math.inf)
    assert replay == first


def test_analyse_two_cycles_do_not_share_cache():
    options = _options(3)
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    verifier = _point_verifier({i: QualityPoint(10.0, 14.0) for i in range(3)})
    sample = _sample()
    a = analyse(kb, options, sample, 1, np.random.default_rng(0), verifier)
    b = analyse(kb, options, sample, 2, np.random.default_rng(0), verifier)
    assert a.verifications == 1
    assert b.verifications == 1


def test_analyse_exhaustive_scan_matches_brute_force_rank():
    """counter_thr = inf must reach the best class rank over all options."""
    spec = ScenarioSpec()
    regime = Regime(spec)
    cycles = {}
    for cycle in range(30, 35):
        state = regime.active_regime(cycle)
        sample = regime.sample_uncertainties(cycle)
        verified = regime.verify_all(sample, state)
        pts = np.array([[p.packet_loss, p.energy] for p in verified])
        labels = tuple(state.assignment[o] for o in range(len(verified)))
        cycles[cycle] = ArchiveCycle(points=pts, labels=labels)
    baseline = build_ideal_baseline(
        QualityArchive(n_options=1296, cycles=cycles), PREF_LESS_PL)
    rank_by_class = {cid: i + 1 for i, cid in enumerate(baseline.ranking)}
    options = regime.options

    for cycle in (60, 120, 300, 320):
        state = regime.active_regime(cycle)
        sample = regime.sample_uncertainties(cycle)
        verified = regime.verify_all(sample, state)
        pts = np.array([[p.packet_loss, p.energy] for p in verified])
        ids, memberships = classify_batch(baseline.model, pts)
        admitted = [rank_by_class[int(c)] for c, m in zip(ids, memberships) if m > PROB_THR]
        if admitted:
            oracle = min(admitted)
        else:
            oracle = min(rank_by_class[int(c)] for c in ids)

        kb = KnowledgeBase(classifier=baseline.model,
                           preference=PreferenceModel(ranking=baseline.ranking))
        result = analyse(
            kb, options, sample, cycle, np.random.default_rng(cycle),
            lambda option, uncs, s=sample, st=state: regime.verify(s, option, st),
            counter_thr=math.inf)
        assert result.rank == oracle
        assert result.fallback == (not admitted)


# ---------------------------------------------------------------------------
# plan and execute

def test_plan_applies_selected_option_splits():
    topo = Topology()
    sample = _sample(snr=-3.0)
    options = _options(3)
    result = AnalysisResult(option_id=0, class_id=0, rank=1, membership=0.9,
                            verifications=1, outliers=0, fallback=False)
    config = plan_and_execute(result, options, topo, sample)
    assert config.option_id == 0
    assert config.split_indices == options[0].split_indices
    assert config.powers == assign_power(topo, sample)


def test_plan_same_option_same_sample_is_identical():
    topo = Topology()
    sample = _sample()
    options = _options(3)
    result = AnalysisResult(option_id=2, class_id=0, rank=1, membership=0.9,
                            verifications=1, outliers=0, fallback=False)
    assert plan_and_execute(result, options, topo, sample) == \
        plan_and_execute(result, options, topo, sample)


def test_plan_treats_fallback_like_normal():
    topo = Topology()
    sample = _sample()
    options = _options(3)
    normal = AnalysisResult(option_id=1, class_id=0, rank=1, membership=0.9,
                            verifications=1, outliers=0, fallback=False)
    flagged = AnalysisResult(option_id=1, class_id=0, rank=1, membership=0.0001,
                             verifications=3, outliers=3, fallback=True)
    assert plan_and_execute(normal, options, topo, sample) == \
        plan_and_execute(flagged, options, topo, sample)


def test_plan_unknown_option_errors():
    result = AnalysisResult(option_id=99, class_id=0, rank=1, membership=0.9,
                            verifications=1, outliers=0, fallback=False)
    with pytest.raises(InvalidInputError):
        plan_and_execute(result, _options(3), Topology(), _sample())


# ---------------------------------------------------------------------------
# pruning

def _kb_with_cycles(cycles):
    kb = _kb(_model([(10.0, 14.0)]), (0,))
    for c in cycles:
        kb.store((c, "d", 0),
                 CachedResult(verification=QualityPoint(10.0, 14.0),
                              class_id=0, membership=0.9))
    return kb


def test_prune_keeps_everything_inside_window():
    kb = _kb_with_cycles([1, 100, 499])
    assert prune_results(kb, 500) == 0
    assert len(kb.results) == 3


def test_prune_drops_only_entries_past_the_window():
    kb = _kb_with_cycles([1, 2, 900])
    removed = prune_results(kb, 1002)
    assert removed == 1
    assert {k[0] for k in kb.results} == {2, 900}


def test_prune_respects_custom_retention():
    kb = _kb_with_cycles([1, 5, 9])
    kb.retention_window = 5
    prune_results(kb, 10)
    assert {k[0] for k in kb.results} == {5, 9}
