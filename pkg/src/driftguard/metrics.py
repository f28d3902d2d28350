"""Evaluation metrics: utility, ranking satisfaction, and the ideal baseline.

Every verified quality point earns a scalar utility.  How well an
approach tracks the best class actually available is measured by the
ranking satisfaction mean (RSM) over 10-cycle windows, computed against
an ideal classifier built from ground-truth regime labels over an
exhaustive verification archive.  Approach comparisons use the
common-language Mann-Whitney effect probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cmp_to_key
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import InvalidInputError
from .gmm import COV_EPSILON, GaussianComponent, GmmModel, classify, classify_batch
from .network import QualityPoint

AXIS_INDEX = {"packet_loss": 0, "energy": 1}

RSM_WINDOW = 10
RANK_TIE_TOLERANCE = 0.5

METRICS_CSV_COLUMNS = (
    "cycle",
    "approach",
    "pl",
    "ec",
    "utility",
    "selected_rank",
    "ideal_rank",
    "rsm_window_id",
    "rsm",
)


# ---------------------------------------------------------------------------
# utility

@dataclass(frozen=True)
class UtilityModel:
    """Weighted two-part utility over a quality point.

    Packet loss contributes linearly (1 at 0%, 0 at 100%).  Energy
    contributes through a three-band preference curve: full preference
    below ec_low, the medium band value between ec_low and ec_high
    inclusive, nothing above ec_high.
    """

    weight_pl: float = 0.8
    weight_ec: float = 0.2
    ec_low: float = 14.5
    ec_high: float = 15.0
    medium_value: float = 0.5

    def __post_init__(self) -> None:
        if abs(self.weight_pl + self.weight_ec - 1.0) > 1e-9:
            raise InvalidInputError(
                f"utility weights must sum to 1, got {self.weight_pl} + {self.weight_ec}")
        if not self.ec_low < self.ec_high:
            raise InvalidInputError(
                f"energy breakpoints must increase, got {self.ec_low}, {self.ec_high}")
        if not 0.0 <= self.medium_value <= 1.0:
            raise InvalidInputError(f"medium band value out of [0,1]: {self.medium_value}")

    def energy_preference(self, ec: float) -> float:
        if ec < self.ec_low:
            return 1.0
        if ec <= self.ec_high:
            return self.medium_value
        return 0.0

    def utility(self, q: QualityPoint) -> float:
        # packet loss outside 0..100 is clamped so the result stays in [0,1]
        p_pl = min(1.0, max(0.0, 1.0 - q.packet_loss / 100.0))
        return self.weight_pl * p_pl + self.weight_ec * self.energy_preference(q.energy)


DEFAULT_UTILITY = UtilityModel()


def utility(q: QualityPoint, model: UtilityModel | None = None) -> float:
    """Utility of one verified quality point, in [0, 1]."""
    return (model or DEFAULT_UTILITY).utility(q)


# ---------------------------------------------------------------------------
# ranking satisfaction mean

@dataclass(frozen=True)
class RsmInput:
    """One scoring window: selected and ideal class ranks per cycle.

    m is the number of ranked classes of the reference model; every rank
    must lie in 1..m.  n is the window length.
    """

    r: tuple[int, ...]
    r_star: tuple[int, ...]
    m: int
    n: int = RSM_WINDOW

    def __post_init__(self) -> None:
        object.__setattr__(self, "r", _as_ranks(self.r, "r"))
        object.__setattr__(self, "r_star", _as_ranks(self.r_star, "r_star"))
        if self.m < 2:
            raise InvalidInputError(f"need at least 2 ranked classes, got m={self.m}")
        if self.n < 1:
            raise InvalidInputError(f"window length must be >= 1, got {self.n}")
        if len(self.r) != self.n or len(self.r_star) != self.n:
            raise InvalidInputError(
                f"expected {self.n} ranks, got |r|={len(self.r)}, |r_star|={len(self.r_star)}")
        for name, ranks in (("r", self.r), ("r_star", self.r_star)):
            for rank in ranks:
                if not 1 <= rank <= self.m:
                    raise InvalidInputError(f"{name} rank {rank} outside 1..{self.m}")


def _as_ranks(values: Sequence[int], name: str) -> tuple[int, ...]:
    ranks = []
    for v in values:
        if int(v) != v:
            raise InvalidInputError(f"{name} ranks must be integers, got {v!r}")
        ranks.append(int(v))
    return tuple(ranks)


def rsm(inp: RsmInput) -> float:
    """Mean rank displacement, normalized to 1 at maximal displacement.

    (1 / (n * (m - 1))) * sum(r_i - r*_i).  Zero when the selection
    always lands in the best achievable class, 1 when it always lands
    m - 1 ranks below it.
    """
    diff = sum(a - b for a, b in zip(inp.r, inp.r_star))
    return diff / (inp.n * (inp.m - 1))


def windowed_rsm(
    r: Sequence[int],
    r_star: Sequence[int],
    m: int,
    window: int = RSM_WINDOW,
) -> list[float]:
    """RSM per consecutive window over parallel per-cycle rank streams.

    A trailing partial window is scored over its actual length.
    """
    if window < 1:
        raise InvalidInputError(f"window must be >= 1, got {window}")
    if len(r) != len(r_star):
        raise InvalidInputError(
            f"rank streams differ in length: {len(r)} vs {len(r_star)}")
    out = []
    for start in range(0, len(r), window):
        chunk_r = tuple(r[start:start + window])
        chunk_star = tuple(r_star[start:start + window])
        out.append(rsm(RsmInput(r=chunk_r, r_star=chunk_star, m=m, n=len(chunk_r))))
    return out


# ---------------------------------------------------------------------------
# preference ranking of classes

def rank_classes(
    model: GmmModel,
    preference: Sequence[str],
    tie_tolerance: float = RANK_TIE_TOLERANCE,
) -> tuple[int, ...]:
    """Order class ids by component mean, best first, per the preference.

    Lexicographic on the preferred axis; means closer than tie_tolerance
    on that axis fall through to the second axis.  The comparison is
    pairwise, so tolerance chains resolve in model component order.
    """
    primary, secondary = _axis_pair(preference)
    if tie_tolerance < 0.0:
        raise InvalidInputError(f"tie tolerance must be >= 0, got {tie_tolerance}")

    def compare(a: GaussianComponent, b: GaussianComponent) -> int:
        d0 = float(a.mean[primary] - b.mean[primary])
        if abs(d0) > tie_tolerance:
            return -1 if d0 < 0.0 else 1
        d1 = float(a.mean[secondary] - b.mean[secondary])
        if d1 < 0.0:
            return -1
        if d1 > 0.0:
            return 1
        return 0

    ordered = sorted(model.components, key=cmp_to_key(compare))
    return tuple(c.class_id for c in ordered)


def _axis_pair(preference: Sequence[str]) -> tuple[int, int]:
    axes = tuple(preference)
    if len(axes) != 2 or set(axes) != set(AXIS_INDEX):
        raise InvalidInputError(f"preference must order both quality axes, got {axes!r}")
    return AXIS_INDEX[axes[0]], AXIS_INDEX[axes[1]]


# ---------------------------------------------------------------------------
# ideal baseline

@dataclass(frozen=True)
class ArchiveCycle:
    """Exhaustive verification of one cycle: one row per adaptation option,
    plus the ground-truth (group, tier) cluster label of each option."""

    points: np.ndarray
    labels: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class QualityArchive:
    """Verification archive of a dedicated baseline run."""

    n_options: int
    cycles: dict[int, ArchiveCycle] = field(default_factory=dict)


@dataclass(frozen=True)
class IdealBaseline:
    """Ground-truth classifier plus the best achievable rank per cycle."""

    model: GmmModel
    ranking: tuple[int, ...]
    cluster_of_class: dict[int, tuple[str, str]]
    r_star: dict[int, int]

    @property
    def m(self) -> int:
        return len(self.ranking)

    def rank_of_class(self, class_id: int) -> int:
        try:
            return self.ranking.index(class_id) + 1
        except ValueError:
            raise InvalidInputError(f"class {class_id} is not ranked") from None

    def rank_of_point(self, point) -> int:
        return self.rank_of_class(classify(self.model, point).class_id)


def build_ideal_baseline(archive: QualityArchive, preference: Sequence[str]) -> IdealBaseline:
    """Fit one component per ground-truth cluster and rank the classes.

    The archive must hold a verified quality point for every option in
    every recorded cycle.  Cluster labels come from the simulator regime,
    which stands in for offline stakeholder marking as an exact oracle.
    r*_cycle is the best class rank among the classes the cycle's points
    classify into.

    Raises:
        InvalidInputError: empty or non-exhaustive archive, or a cluster
            with fewer than two points.
    """
    _axis_pair(preference)
    if not archive.cycles:
        raise InvalidInputError("archive holds no cycles")
    pooled: dict[tuple[str, str], list[np.ndarray]] = {}
    for cycle, rec in archive.cycles.items():
        pts = np.asarray(rec.points, dtype=float)
        if pts.shape != (archive.n_options, 2):
            raise InvalidInputError(
                f"cycle {cycle} is not exhaustive: expected "
                f"({archive.n_options}, 2) points, got {pts.shape}")
        if len(rec.labels) != archive.n_options:
            raise InvalidInputError(
                f"cycle {cycle} has {len(rec.labels)} labels for {archive.n_options} options")
        for row, label in zip(pts, rec.labels):
            pooled.setdefault(tuple(label), []).append(row)

    components = []
    total = sum(len(rows) for rows in pooled.values())
    for class_id, cluster in enumerate(sorted(pooled)):
        rows = np.stack(pooled[cluster])
        if rows.shape[0] < 2:
            raise InvalidInputError(
                f"cluster {cluster} has {rows.shape[0]} point(s), cannot estimate covariance")
        cov = np.atleast_2d(np.cov(rows.T)) + COV_EPSILON * np.eye(2)
        components.append(GaussianComponent(
            mean=rows.mean(axis=0),
            covariance=cov,
            weight=rows.shape[0] / total,
            support_count=rows.shape[0],
            class_id=class_id,
        ))
    model = GmmModel(components=components)
    model.validate()

    ranking = rank_classes(model, preference)
    rank_by_class = {cid: i + 1 for i, cid in enumerate(ranking)}
    r_star = {}
    for cycle, rec in archive.cycles.items():
        ids, _ = classify_batch(model, rec.points)
        r_star[cycle] = min(rank_by_class[int(cid)] for cid in ids)
    cluster_of_class = {i: cluster for i, cluster in enumerate(sorted(pooled))}
    return IdealBaseline(
        model=model,
        ranking=ranking,
        cluster_of_class=cluster_of_class,
        r_star=r_star,
    )


# ---------------------------------------------------------------------------
# effect size

def mann_whitney_u(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Probability that a random draw from A exceeds one from B.

    Midrank tie handling: equal values earn half credit, so the
    complement identity u(A, B) + u(B, A) = 1 holds with ties too.
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("both samples must be nonempty")
    combined = np.concatenate([a, b])
    _, inverse, counts = np.unique(combined, return_inverse=True, return_counts=True)
    starts = np.cumsum(counts) - counts
    midranks = starts + (counts + 1) / 2.0
    rank_sum_a = float(midranks[inverse[:a.size]].sum())
    u_a = rank_sum_a - a.size * (a.size + 1) / 2.0
    return u_a / (a.size * b.size)


# ---------------------------------------------------------------------------
# export

@dataclass(frozen=True)
class MetricsRow:
    """One cycle of one approach in the metric series export."""

    cycle: int
    approach: str
    pl: float
    ec: float
    utility: float
    selected_rank: int
    ideal_rank: int
    rsm_window_id: int
    rsm: float


def write_metrics_csv(rows: Iterable[MetricsRow], dest: str | Path | TextIO) -> None:
    """Write the metric series with a fixed header and %.6f floats.

    Formatting is pinned so identical runs produce byte-identical files.
    """
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            _write_rows(rows, fh)
    else:
        _write_rows(rows, dest)


def _write_rows(rows: Iterable[MetricsRow], fh: TextIO) -> None:
    fh.write(",".join(METRICS_CSV_COLUMNS) + "\n")
    for row in rows:
        fh.write(
            f"{row.cycle},{row.approach},{row.pl:.6f},{row.ec:.6f},"
            f"{row.utility:.6f},{row.selected_rank},{row.ideal_rank},"
            f"{row.rsm_window_id},{row.rsm:.6f}\n")
