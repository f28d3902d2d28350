"""Multi-hop sensor network model and the analytic quality verifier.

The managed system is a small battery-powered network: fifteen motes
relay sensor packets over directed parent links toward a gateway.  Four
motes have two parents and can split their outgoing traffic between
them; the six split choices per mote span the adaptation space of
6^4 = 1296 options.  Quality of one option under one uncertainty sample
is computed in closed form by propagating expected packet counts along
the links, which makes exhaustive verification of the whole space cheap
enough to run every cycle.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import InvalidInputError

Link = tuple[int, int]  # (transmitting mote, parent)

# ordered pairs of (percent to first parent, percent to second parent)
SPLIT_CHOICES: tuple[tuple[int, int], ...] = (
    (0, 100), (20, 80), (40, 60), (60, 40), (80, 20), (100, 0))

POWER_MIN = 0
POWER_MAX = 15
SNR_GAIN_PER_POWER_STEP = 0.6

# delivery probability ramps linearly from 0 at -5 dB to 1 at +5 dB
DELIVERY_SNR_LO = -5.0
DELIVERY_SNR_HI = 5.0


@dataclass(frozen=True)
class QualityPoint:
    """One verified quality sample: packet loss in percent, energy in mC."""

    packet_loss: float
    energy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.packet_loss, self.energy])


class AdaptationOption(NamedTuple):
    """One full configuration of the splittable motes.

    split_indices holds one index into SPLIT_CHOICES per configurable
    mote, in ascending mote order.  Kept as a flat tuple so enumerating
    the whole space stays cheap.
    """

    option_id: int
    split_indices: tuple[int, ...]


# default layout: gateway 1, motes 2..16, two-parent motes 7, 10, 11, 12
DEFAULT_LINKS: dict[int, tuple[int, ...]] = {
    2: (1,),
    3: (1,),
    4: (1,),
    5: (2,),
    6: (3,),
    7: (2, 3),
    8: (4,),
    9: (4,),
    10: (5, 6),
    11: (7, 8),
    12: (8, 9),
    13: (10,),
    14: (11,),
    15: (12,),
    16: (13,),
}


@dataclass
class Topology:
    """Directed acyclic parent-link structure rooted at the gateway."""

    gateway: int = 1
    parents: dict[int, tuple[int, ...]] = field(
        default_factory=lambda: dict(DEFAULT_LINKS))

    def __post_init__(self) -> None:
        self.parents = {m: tuple(p) for m, p in sorted(self.parents.items())}
        self._order = self._topological_order()
        self.configurable_motes = tuple(
            sorted(m for m in self.parents if len(self.parents[m]) == 2))

    def motes(self) -> tuple[int, ...]:
        return self._order

    def links(self) -> list[Link]:
        return [(m, p) for m in self._order for p in self.parents[m]]

    def transmit_order(self) -> tuple[int, ...]:
        """Motes ordered so every mote appears before its parents."""
        return self._order

    def _topological_order(self) -> tuple[int, ...]:
        depth: dict[int, int] = {self.gateway: 0}

        def walk(node: int, trail: tuple[int, ...]) -> int:
            if node in trail:
                raise InvalidInputError(f"cycle through mote {node}")
            if node in depth:
                return depth[node]
            if node not in self.parents or not self.parents[node]:
                raise InvalidInputError(f"mote {node} has no route to the gateway")
            d = 1 + max(walk(p, trail + (node,)) for p in self.parents[node])
            depth[node] = d
            return d

        if self.gateway in self.parents:
            raise InvalidInputError("gateway must not have parent links")
        for m in self.parents:
            walk(m, ())
        for m, ps in self.parents.items():
            if len(ps) not in (1, 2):
                raise InvalidInputError(f"mote {m} has {len(ps)} parents")
            if len(set(ps)) != len(ps):
                raise InvalidInputError(f"mote {m} lists a duplicate parent")
        return tuple(sorted(self.parents, key=lambda m: -depth[m]))


def enumerate_options(topology: Topology) -> list[AdaptationOption]:
    """All split assignments, deterministically ordered.

    Option ids are the lexicographic index over per-mote split choices,
    ascending mote order, so id 0 sends everything to each second parent
    and the last id everything to each first parent.
    """
    motes = topology.configurable_motes
    if len(motes) != 4:
        raise InvalidInputError(
            f"expected exactly 4 two-parent motes, found {len(motes)}")
    n = len(SPLIT_CHOICES)
    return [
        AdaptationOption(option_id=i, split_indices=combo)
        for i, combo in enumerate(itertools.product(range(n), repeat=len(motes)))
    ]


def option_split_weights(topology: Topology,
                         option: AdaptationOption) -> dict[int, tuple[float, float]]:
    """Fractions of outgoing traffic per parent for the splittable motes."""
    out = {}
    for mote, idx in zip(topology.configurable_motes, option.split_indices):
        first, second = SPLIT_CHOICES[idx]
        out[mote] = (first / 100.0, second / 100.0)
    return out


@dataclass
class UncertaintySample:
    """Environment state for one cycle: per-link SNR and per-mote load."""

    snr: dict[Link, float]
    loads: dict[int, float]

    def digest(self) -> str:
        """Stable hash of the sample, quantized to 0.01.

        Used as part of the verification cache key so that re-verifying
        the same option under an equivalent environment is a lookup.
        """
        parts = []
        for link in sorted(self.snr):
            parts.append(f"s{link[0]}-{link[1]}:{self.snr[link]:.2f}")
        for mote in sorted(self.loads):
            parts.append(f"l{mote}:{self.loads[mote]:.2f}")
        return hashlib.blake2b(";".join(parts).encode(), digest_size=8).hexdigest()


def assign_power(topology: Topology, sample: UncertaintySample,
                 gain: float = SNR_GAIN_PER_POWER_STEP) -> dict[int, int]:
    """Minimal transmit power per mote, shared by all options in a cycle.

    Each power step buys `gain` dB on all of a mote's outgoing links.
    The mote picks the smallest power in 0..15 that lifts its worst link
    to at least 0 dB, or 15 when that is unreachable.
    """
    powers = {}
    for mote in topology.motes():
        worst = min(sample.snr[(mote, p)] for p in topology.parents[mote])
        if worst >= 0.0:
            powers[mote] = POWER_MIN
        else:
            powers[mote] = min(POWER_MAX, math.ceil(-worst / gain - 1e-12))
    return powers


def link_delivery(topology: Topology, sample: UncertaintySample,
                  powers: dict[int, int],
                  gain: float = SNR_GAIN_PER_POWER_STEP) -> dict[Link, float]:
    """Expected delivery probability per link at the assigned powers."""
    d = {}
    span = DELIVERY_SNR_HI - DELIVERY_SNR_LO
    for link in topology.links():
        eff = sample.snr[link] + gain * powers[link[0]]
        d[link] = min(1.0, max(0.0, (eff - DELIVERY_SNR_LO) / span))
    return d


def mote_survival(topology: Topology, delivery: dict[Link, float],
                  option: AdaptationOption) -> dict[int, float]:
    """Probability that a packet leaving each mote reaches the gateway.

    Backward recursion over the DAG; a two-parent mote mixes its
    parents' survivals by the option's split weights.  This is the
    end-to-end delivery probability the split monotonicity property is
    stated against.
    """
    weights = option_split_weights(topology, option)
    s = {topology.gateway: 1.0}
    for mote in reversed(topology.transmit_order()):
        ps = topology.parents[mote]
        if len(ps) == 1:
            s[mote] = delivery[(mote, ps[0])] * s[ps[0]]
        else:
            w1, w2 = weights[mote]
            s[mote] = (w1 * delivery[(mote, ps[0])] * s[ps[0]]
                       + w2 * delivery[(mote, ps[1])] * s[ps[1]])
    return s


def flow_quality(topology: Topology, delivery: dict[Link, float],
                 sample: UncertaintySample, powers: dict[int, int],
                 option: AdaptationOption,
                 e0: float, e1: float) -> tuple[float, float]:
    """Raw (packet loss %, energy mC) of one option under one sample.

    Expected packet counts are pushed from the leaves toward the
    gateway; whatever a link does not deliver is lost at that hop.
    Energy charges each mote's generated load at its power level:
    load_m * (e0 + e1 * power_m), summed over motes.
    """
    weights = option_split_weights(topology, option)
    inflow = {m: 0.0 for m in topology.motes()}
    inflow[topology.gateway] = 0.0
    generated = 0.0
    energy = 0.0
    for mote in topology.transmit_order():
        load = sample.loads[mote]
        generated += load
        out = load + inflow[mote]
        energy += load * (e0 + e1 * powers[mote])
        ps = topology.parents[mote]
        if len(ps) == 1:
            shares = ((ps[0], 1.0),)
        else:
            w1, w2 = weights[mote]
            shares = ((ps[0], w1), (ps[1], w2))
        for parent, w in shares:
            inflow[parent] += out * w * delivery[(mote, parent)]
    delivered = inflow[topology.gateway]
    if generated <= 0.0:
        raise InvalidInputError("total generated load must be positive")
    packet_loss = 100.0 * (1.0 - delivered / generated)
    return packet_loss, energy


def flow_quality_all(topology: Topology, delivery: dict[Link, float],
                     sample: UncertaintySample, powers: dict[int, int],
                     options: list[AdaptationOption],
                     e0: float, e1: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized flow_quality over many options.

    Same arithmetic as the scalar path, carried as numpy arrays with one
    lane per option; used for exhaustive sweeps (training archives and
    the reference classifier).
    """
    n = len(options)
    idx = {m: i for i, m in enumerate(topology.configurable_motes)}
    frac = np.array([s[0] / 100.0 for s in SPLIT_CHOICES])
    splits = np.array([o.split_indices for o in options])  # (n, 4)

    inflow = {m: np.zeros(n) for m in topology.motes()}
    inflow[topology.gateway] = np.zeros(n)
    generated = 0.0
    energy = np.zeros(n)
    for mote in topology.transmit_order():
        load = sample.loads[mote]
        generated += load
        out = inflow[mote] + load
        energy += load * (e0 + e1 * powers[mote])
        ps = topology.parents[mote]
        if len(ps) == 1:
            inflow[ps[0]] += out * delivery[(mote, ps[0])]
        else:
            w1 = frac[splits[:, idx[mote]]]
            inflow[ps[0]] += out * w1 * delivery[(mote, ps[0])]
            inflow[ps[1]] += out * (1.0 - w1) * delivery[(mote, ps[1])]
    delivered = inflow[topology.gateway]
    packet_loss = 100.0 * (1.0 - delivered / generated)
    return packet_loss, energy
