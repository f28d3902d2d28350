"""Regression-based adaptation space reduction, the comparison approach.

A linear model per quality dimension predicts (packet loss, energy) from
an option's split fractions plus the cycle's environment, the predicted
points are classified, and only the options whose predicted class ranks
best get verified.  The actual selection over that shortlist follows the
same acceptance rule as the main analysis stage.  Deliberately simple:
its job is to be a recognizable reduction baseline, not a faithful port.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .gmm import GmmModel, classify_batch
from .mapek import AnalysisResult, KnowledgeBase, Verifier, analyse
from .network import (
    SPLIT_CHOICES,
    AdaptationOption,
    QualityPoint,
    Topology,
    UncertaintySample,
    assign_power,
)

MIN_TRAIN_SAMPLES = 20
RIDGE_LAMBDA = 1e-3
TOP_K = 20


@dataclass(frozen=True)
class QualityRegressor:
    """One linear model per quality dimension over a fixed feature layout.

    coefficients has shape (2, n_features), intercepts (2,); row 0
    predicts packet loss, row 1 energy.
    """

    coefficients: np.ndarray
    intercepts: np.ndarray
    training_window: int = 1000

    def predict(self, features) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        return x @ self.coefficients.T + self.intercepts[None, :]


def option_features(
    topology: Topology,
    option: AdaptationOption,
    uncs: UncertaintySample,
    powers: dict[int, int] | None = None,
) -> np.ndarray:
    """Feature vector: per-mote split fraction to the first parent for
    the configurable motes, per-mote power, mean SNR, total load."""
    if powers is None:
        powers = assign_power(topology, uncs)
    splits = [SPLIT_CHOICES[idx][0] / 100.0 for idx in option.split_indices]
    power_vec = [float(powers[m]) for m in topology.motes() if m != topology.gateway]
    mean_snr = float(np.mean([uncs.snr[link] for link in topology.links()]))
    total_load = float(sum(uncs.loads.values()))
    return np.array(splits + power_vec + [mean_snr, total_load])


def train(
    history: Sequence[tuple[np.ndarray, QualityPoint]],
    training_window: int = 1000,
) -> QualityRegressor:
    """Least-squares fit of both quality dimensions.

    A rank-deficient design matrix falls back to ridge regression with
    a small penalty (the intercept stays unpenalized).

    Raises:
        InvalidInputError: fewer than MIN_TRAIN_SAMPLES samples, or
            inconsistent feature lengths.
    """
    if len(history) < MIN_TRAIN_SAMPLES:
        raise InvalidInputError(
            f"need at least {MIN_TRAIN_SAMPLES} samples to train, got {len(history)}")
    features = np.stack([np.asarray(f, dtype=float) for f, _ in history])
    if features.ndim != 2:
        raise InvalidInputError("features must be flat vectors of equal length")
    targets = np.array([[q.packet_loss, q.energy] for _, q in history])
    design = np.hstack([features, np.ones((features.shape[0], 1))])

    beta, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank < design.shape[1]:
        penalty = RIDGE_LAMBDA * np.eye(design.shape[1])
        penalty[-1, -1] = 0.0
        beta = np.linalg.solve(design.T @ design + penalty, design.T @ targets)
    return QualityRegressor(
        coefficients=beta[:-1].T.copy(),
        intercepts=beta[-1].copy(),
        training_window=training_window,
    )


def reduce_and_select(
    options: Sequence[AdaptationOption],
    uncs: UncertaintySample,
    regressor: QualityRegressor,
    kb: KnowledgeBase,
    cycle: int,
    rng: np.random.Generator,
    verifier: Verifier,
    topology: Topology | None = None,
    k: int = TOP_K,
) -> AnalysisResult:
    """Shortlist the k best-predicted options, then select as usual.

    Predictions for all options are classified with kb.classifier;
    options sort by predicted class rank (unranked classes last), then
    by predicted membership, then by id.  The shortlist goes through the
    standard analysis stage, so per-cycle verifications stay <= k.
    """
    if not options:
        raise InvalidInputError("no adaptation options to reduce")
    if k < 1:
        raise InvalidInputError(f"shortlist size must be >= 1, got {k}")
    topology = topology or Topology()
    powers = assign_power(topology, uncs)
    features = np.stack([
        option_features(topology, option, uncs, powers) for option in options
    ])
    predicted = regressor.predict(features)
    ids, memberships = classify_batch(kb.classifier, predicted)
    ranked = {cid: i + 1 for i, cid in enumerate(kb.preference.ranking)}
    worst = len(ranked) + 1
    order = sorted(
        range(len(options)),
        key=lambda i: (ranked.get(int(ids[i]), worst), -memberships[i],
                       options[i].option_id),
    )
    shortlist = [options[i] for i in order[:k]]
    return analyse(kb, shortlist, uncs, cycle, rng, verifier)
