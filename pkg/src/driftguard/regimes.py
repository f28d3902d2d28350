"""Regime-driven quality verification.

The network's raw flow qualities are warped, per adaptation option, into the
cluster region of whichever group currently owns that option. Group ownership
changes over the timeline: at each appearance event a deterministic subset of
options migrates to the new group, one option at a time across the ramp
segment. Because ownership is exact and known, it doubles as the ground-truth
labeling oracle for the ideal classifier.

Affine anchors are per epoch (the stretch between consecutive events) so that
each cluster's realized center stays pinned to its configured center even as
migration changes which options populate it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .network import (
    AdaptationOption,
    QualityPoint,
    Topology,
    UncertaintySample,
    assign_power,
    enumerate_options,
    flow_quality,
    flow_quality_all,
    link_delivery,
)
from .scenarios import BULK, PREMIUM, ScenarioSpec, Segment

STREAM_UNCERTAINTY = 0
STREAM_MIGRATION = 1


@dataclass(frozen=True)
class AffineMap:
    """Per-cluster affine warp applied to raw verifier output."""

    pl_gain: float = 1.0
    pl_offset: float = 0.0
    ec_gain: float = 1.0
    ec_offset: float = 0.0

    def apply(self, pl: float, ec: float) -> QualityPoint:
        out_pl = self.pl_gain * pl + self.pl_offset
        out_ec = self.ec_gain * ec + self.ec_offset
        return QualityPoint(
            packet_loss=min(100.0, max(0.0, out_pl)),
            energy=max(1e-9, out_ec),
        )


IDENTITY_MAP = AffineMap()


@dataclass(frozen=True)
class RegimeState:
    """Snapshot of the regime at one cycle: active groups and option ownership.

    transforms is keyed by option id; tests may build a state directly with
    identity or offset maps to probe the verifier without a full scenario.
    """

    cycle: int
    segment_index: int
    active_groups: frozenset[str]
    ramp_progress: float  # 0 outside ramps, else fraction of the ramp completed
    assignment: dict[int, tuple[str, str]]  # option id -> (group, tier)
    transforms: dict[int, AffineMap]

    def cluster_of(self, option_id: int) -> tuple[str, str]:
        return self.assignment[option_id]

    def transform_for(self, option_id: int) -> AffineMap:
        return self.transforms[option_id]


class Regime:
    """Scenario-bound simulator state shared by every approach in a run.

    Construction performs the one-off nominal calibration pass: raw qualities
    of all options under nominal conditions fix the premium set, the
    per-event migration sets, and the per-epoch affine anchor points.
    """

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        cfg = spec.regime
        self.topology: Topology = cfg.topology
        self.options: tuple[AdaptationOption, ...] = enumerate_options(self.topology)
        n = len(self.options)

        raw_pl, raw_ec = self._nominal_raw_for(spec.schedule[0])
        self.nominal_raw = (raw_pl, raw_ec)

        # Rank 0 is the option with the lowest raw packet loss under nominal
        # conditions; the premium tier is the best premium_fraction of ranks.
        order = np.argsort(raw_pl, kind="stable")
        self.rank = np.empty(n, dtype=np.int64)
        self.rank[order] = np.arange(n)
        self.premium_count = int(round(n * cfg.premium_fraction))
        self.premium = self.rank < self.premium_count

        self._events = self._build_events()
        self._epoch_groups = self._build_epoch_groups()
        self._tables = self._build_transform_tables()
        self._state_cache: dict[int, RegimeState] = {}

    # -- construction helpers ------------------------------------------------

    def _nominal_raw_for(self, segment: Segment) -> tuple[np.ndarray, np.ndarray]:
        """Raw qualities of all options at the segment's mean conditions."""
        cfg = self.spec.regime
        mean_interference = segment.interference[0]
        snr = {
            link: cfg.base_snr - mean_interference for link in self.topology.links()
        }
        mid_load = 0.5 * (segment.load_range[0] + segment.load_range[1])
        loads = {m: mid_load for m in self.topology.motes()}
        sample = UncertaintySample(snr=snr, loads=loads)
        powers = assign_power(self.topology, sample)
        delivery = link_delivery(self.topology, sample, powers)
        return flow_quality_all(
            self.topology, delivery, sample, powers, self.options,
            cfg.energy_idle, cfg.energy_per_power,
        )

    def _epoch_reference_segments(self) -> list[Segment]:
        """Epoch e settles in the stable segment after the e-th event ramp."""
        schedule = self.spec.schedule
        refs = [schedule[0]]
        for index, segment in enumerate(schedule):
            if segment.ramp:
                refs.append(schedule[index + 1])
        return refs

    def _initial_assignment(self) -> np.ndarray:
        """Initial group per option; two initial groups interleave by rank."""
        initial = self.spec.appearance.initial
        n = len(self.options)
        groups = np.empty(n, dtype="U1")
        if len(initial) == 1:
            groups[:] = initial[0]
        else:
            for option_id in range(n):
                groups[option_id] = initial[self.rank[option_id] % len(initial)]
        return groups

    def _build_events(self):
        """Per appearance event: the ramp segment, the migrating set, and the
        per-option thresholds that spread flips across the ramp."""
        n = len(self.options)
        # An intermediate appearance pulls the premium tier plus the better
        # half of the bulk tier; the final appearance pulls everything.
        cutoff = self.premium_count + (n - self.premium_count) // 2
        partial = self.rank < cutoff
        events = []
        ramp_segments = [s for s in self.spec.schedule if s.ramp]
        names = self.spec.appearance.events
        if len(ramp_segments) != len(names):
            raise InvalidInputError("schedule ramps do not match appearance events")
        for index, (segment, group) in enumerate(zip(ramp_segments, names)):
            final = index == len(names) - 1
            migrates = np.ones(n, dtype=bool) if final else partial.copy()
            rng = np.random.default_rng([self.spec.seed, STREAM_MIGRATION, index])
            thresholds = rng.uniform(size=n)
            events.append((segment, group, migrates, thresholds))
        return events

    def _build_epoch_groups(self) -> list[np.ndarray]:
        """Stable group assignment after 0, 1, ... events."""
        epochs = [self._initial_assignment()]
        for _, group, migrates, _ in self._events:
            nxt = epochs[-1].copy()
            nxt[migrates] = group
            epochs.append(nxt)
        return epochs

    def _build_transform_tables(self) -> list[dict[tuple[str, str], AffineMap]]:
        """Per epoch, per populated (group, tier): affine map anchored at the
        cohort's nominal raw medians under that epoch's own segment
        conditions, so realized centers match config in every epoch."""
        cfg = self.spec.regime
        gains = {PREMIUM: cfg.premium_gain, BULK: cfg.bulk_gain}
        refs = self._epoch_reference_segments()
        tables = []
        for groups, ref in zip(self._epoch_groups, refs):
            raw_pl, raw_ec = self._nominal_raw_for(ref)
            table: dict[tuple[str, str], AffineMap] = {}
            for group, geometry in cfg.groups.items():
                in_group = groups == group
                for tier in (PREMIUM, BULK):
                    cohort = in_group & (self.premium == (tier == PREMIUM))
                    if not cohort.any():
                        continue
                    anchor = (
                        float(np.median(raw_pl[cohort])),
                        float(np.median(raw_ec[cohort])),
                    )
                    center = geometry.center(tier)
                    gain = gains[tier]
                    table[(group, tier)] = AffineMap(
                        pl_gain=gain[0],
                        pl_offset=center[0] - gain[0] * anchor[0],
                        ec_gain=gain[1],
                        ec_offset=center[1] - gain[1] * anchor[1],
                    )
            tables.append(table)
        return tables

    # -- per-cycle state -----------------------------------------------------

    def _segment_at(self, cycle: int) -> tuple[int, Segment]:
        if cycle < 1 or cycle > self.spec.cycles:
            raise InvalidInputError(
                f"cycle {cycle} outside schedule 1..{self.spec.cycles}"
            )
        for index, segment in enumerate(self.spec.schedule):
            if segment.start <= cycle <= segment.end:
                return index, segment
        raise InvalidInputError(f"cycle {cycle} not covered by schedule")

    @staticmethod
    def _ramp_progress(segment: Segment, cycle: int) -> float:
        length = segment.end - segment.start + 1
        return (cycle - segment.start + 1) / (length + 1)

    def active_regime(self, cycle: int) -> RegimeState:
        cached = self._state_cache.get(cycle)
        if cached is not None:
            return cached
        index, segment = self._segment_at(cycle)
        progress = self._ramp_progress(segment, cycle) if segment.ramp else 0.0

        n = len(self.options)
        completed = sum(1 for s, _, _, _ in self._events if s.end < cycle)
        groups = self._epoch_groups[completed].copy()
        epochs = np.full(n, completed, dtype=np.int64)
        if completed < len(self._events):
            event_segment, group, migrates, thresholds = self._events[completed]
            if event_segment.start <= cycle <= event_segment.end:
                rho = self._ramp_progress(event_segment, cycle)
                flipped = migrates & (thresholds <= rho)
                groups[flipped] = group
                epochs[flipped] = completed + 1

        assignment = {}
        transforms = {}
        table_cache = self._tables
        for option_id in range(n):
            tier = PREMIUM if self.premium[option_id] else BULK
            key = (str(groups[option_id]), tier)
            assignment[option_id] = key
            transforms[option_id] = table_cache[epochs[option_id]][key]
        state = RegimeState(
            cycle=cycle,
            segment_index=index,
            active_groups=frozenset(segment.groups),
            ramp_progress=progress,
            assignment=assignment,
            transforms=transforms,
        )
        self._state_cache[cycle] = state
        return state

    def ground_truth(self, cycle: int, option_id: int) -> tuple[str, str]:
        return self.active_regime(cycle).cluster_of(option_id)

    def populated_clusters(self, cycle: int) -> set[tuple[str, str]]:
        return set(self.active_regime(cycle).assignment.values())

    # -- uncertainty sampling ------------------------------------------------

    def _interference_at(self, cycle: int) -> tuple[float, float]:
        index, segment = self._segment_at(cycle)
        if not segment.ramp:
            return segment.interference
        before = self.spec.schedule[index - 1].interference
        after = self.spec.schedule[index + 1].interference
        rho = self._ramp_progress(segment, cycle)
        return (
            before[0] + (after[0] - before[0]) * rho,
            before[1] + (after[1] - before[1]) * rho,
        )

    def sample_uncertainties(
        self, cycle: int, rng: np.random.Generator | None = None
    ) -> UncertaintySample:
        _, segment = self._segment_at(cycle)
        if rng is None:
            rng = np.random.default_rng(
                [self.spec.seed, cycle, STREAM_UNCERTAINTY]
            )
        mean, std = self._interference_at(cycle)
        cfg = self.spec.regime
        links = self.topology.links()
        interference = rng.normal(mean, std, size=len(links))
        snr = {
            link: cfg.base_snr - float(draw)
            for link, draw in zip(links, interference)
        }
        lo, hi = segment.load_range
        motes = self.topology.motes()
        loads = {
            m: float(draw) for m, draw in zip(motes, rng.uniform(lo, hi, len(motes)))
        }
        return UncertaintySample(snr=snr, loads=loads)

    # -- verification --------------------------------------------------------

    def verify(
        self,
        sample: UncertaintySample,
        option: AdaptationOption,
        state: RegimeState,
    ) -> QualityPoint:
        cfg = self.spec.regime
        powers = assign_power(self.topology, sample)
        delivery = link_delivery(self.topology, sample, powers)
        pl, ec = flow_quality(
            self.topology, delivery, sample, powers, option,
            cfg.energy_idle, cfg.energy_per_power,
        )
        return state.transform_for(option.option_id).apply(pl, ec)

    def verify_all(
        self, sample: UncertaintySample, state: RegimeState
    ) -> list[QualityPoint]:
        """Vectorized verification of every option, for archive sweeps."""
        cfg = self.spec.regime
        powers = assign_power(self.topology, sample)
        delivery = link_delivery(self.topology, sample, powers)
        raw_pl, raw_ec = flow_quality_all(
            self.topology, delivery, sample, powers, self.options,
            cfg.energy_idle, cfg.energy_per_power,
        )
        points = []
        for option in self.options:
            transform = state.transform_for(option.option_id)
            points.append(transform.apply(raw_pl[option.option_id],
                                          raw_ec[option.option_id]))
        return points


def active_regime(spec: ScenarioSpec, cycle: int) -> RegimeState:
    """Convenience wrapper; long-running callers should hold a Regime."""
    return Regime(spec).active_regime(cycle)


def sample_uncertainties(
    spec: ScenarioSpec, cycle: int, rng: np.random.Generator | None = None
) -> UncertaintySample:
    return Regime(spec).sample_uncertainties(cycle, rng)


def verify(
    spec: ScenarioSpec,
    sample: UncertaintySample,
    option: AdaptationOption,
    state: RegimeState,
) -> QualityPoint:
    return Regime(spec).verify(sample, option, state)
