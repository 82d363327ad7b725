"""Per-cycle uplink scheduling into one low-latency subframe.

Each device gets at most one block of one slot by ``rho`` PRBs. All blocks
are congruent, so a single MCS serves the whole cycle.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .assignment import hungarian
from .phy import McsTable, Numerology, eesm, linear_to_db, per_from_snr_db, tx_time


class InfeasibleMcs(ValueError):
    """No MCS fits the payload into one block within a slot."""


class Policy(str, enum.Enum):
    PER_OPTIMAL = "per_optimal"
    CONTROL_OPTIMAL = "control_optimal"
    ROUND_ROBIN = "round_robin"

    @classmethod
    def parse(cls, name) -> "Policy":
        if isinstance(name, cls):
            return name
        aliases = {"per": cls.PER_OPTIMAL, "control": cls.CONTROL_OPTIMAL,
                   "round-robin": cls.ROUND_ROBIN, "rr": cls.ROUND_ROBIN}
        key = str(name).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key.replace("-", "_"))

    @property
    def cli_name(self) -> str:
        return {"per_optimal": "per", "control_optimal": "control",
                "round_robin": "round-robin"}[self.value]


@dataclass(frozen=True)
class Block:
    slot: int
    prb_start: int
    prb_end: int  # exclusive


@dataclass(frozen=True)
class BlockLayout:
    slots: int
    total_prbs: int
    rho: int
    blocks: tuple[Block, ...] = field(init=False)

    def __post_init__(self):
        if self.slots < 1 or self.rho < 1 or self.total_prbs < 1:
            raise ValueError("slots, rho and total_prbs must be positive")
        if self.rho > self.total_prbs:
            raise ValueError(f"rho={self.rho} exceeds total_prbs={self.total_prbs}")
        blocks = tuple(Block(s, g * self.rho, (g + 1) * self.rho)
                       for s in range(self.slots) for g in range(self.freq_groups))
        object.__setattr__(self, "blocks", blocks)

    @property
    def freq_groups(self) -> int:
        return self.total_prbs // self.rho

    @property
    def n_blocks(self) -> int:
        return self.slots * self.freq_groups

    @classmethod
    def from_numerology(cls, numerology: Numerology, total_prbs: int, rho: int):
        return cls(numerology.slots_per_subframe, total_prbs, rho)


@dataclass(frozen=True)
class Grant:
    device: int
    block: Block
    mcs: int


@dataclass(frozen=True)
class ScheduleOutcome:
    grants: tuple[Grant, ...]
    unscheduled: frozenset[int]

    @property
    def scheduled(self) -> list[int]:
        return [g.device for g in self.grants]


def select_mcs(layout: BlockLayout, numerology: Numerology, table: McsTable,
               payload_bits: int) -> int:
    """Lowest MCS whose transmission of one payload fits in a slot."""
    bandwidth = layout.rho * numerology.prb_bandwidth
    for entry in table:
        if tx_time(entry, bandwidth, payload_bits, numerology) <= numerology.slot_duration:
            return entry.index
    raise InfeasibleMcs(
        f"payload of {payload_bits} bits does not fit a {layout.rho}-PRB block "
        f"in a {numerology.slot_duration * 1e6:g} us slot even at MCS {len(table) - 1}")


def block_per(H, layout: BlockLayout, mcs: int, table: McsTable) -> np.ndarray:
    """PER of every device on every block, shape ``(m, n_blocks)``.

    The channel is constant over the subframe, so blocks sharing a PRB range
    in different slots see the same PER.
    """
    H = np.asarray(H, dtype=float)
    g = layout.freq_groups
    used = H[:, : g * layout.rho].reshape(H.shape[0], g, layout.rho)
    with np.errstate(divide="ignore"):
        snr_db = linear_to_db(eesm(used, axis=-1))
    q_group = per_from_snr_db(table[mcs], snr_db)
    return np.tile(q_group, (1, layout.slots))


def build_per_cost(H, layout: BlockLayout, mcs: int, table: McsTable) -> np.ndarray:
    """``q - 1`` per (device, block); unassigned devices then cost zero."""
    return block_per(H, layout, mcs, table) - 1.0


def build_control_cost(H, layout: BlockLayout, mcs: int, table: McsTable,
                       weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("control weights must be nonnegative")
    return weights[:, None] * (block_per(H, layout, mcs, table) - 1.0)


def round_robin(m: int, n_blocks: int, cursor: int):
    """Devices served this cycle and the advanced cursor."""
    if m == 0:
        return [], cursor
    k = min(m, n_blocks)
    devices = [(cursor + t) % m for t in range(k)]
    return devices, (cursor + n_blocks) % m


def schedule(policy, H, layout: BlockLayout, mcs: int, table: McsTable,
             weights=None, rr_cursor: int = 0, active=None):
    """Grant blocks for one cycle.

    ``active`` lists device indices eligible for scheduling (fallen plants
    are removed by the caller); rows of ``H`` and ``weights`` are indexed by
    position in ``active``. Returns ``(ScheduleOutcome, next_rr_cursor)``.
    """
    policy = Policy.parse(policy)
    H = np.asarray(H, dtype=float)
    m = H.shape[0]
    active = list(range(m)) if active is None else list(active)
    if len(active) != m:
        raise ValueError("active must list one device per row of H")
    n = layout.n_blocks

    if policy is Policy.ROUND_ROBIN:
        picked, rr_cursor = round_robin(m, n, rr_cursor)
        pairs = [(row, j) for j, row in enumerate(picked)]
    else:
        if policy is Policy.PER_OPTIMAL:
            cost = build_per_cost(H, layout, mcs, table)
        else:
            if weights is None:
                raise ValueError("control_optimal scheduling needs weights")
            cost = build_control_cost(H, layout, mcs, table, weights)
        pairs = hungarian(cost).pairs if m else ()

    grants = tuple(sorted((Grant(active[row], layout.blocks[j], mcs) for row, j in pairs),
                          key=lambda g: g.device))
    granted = {g.device for g in grants}
    outcome = ScheduleOutcome(grants=grants,
                              unscheduled=frozenset(d for d in active if d not in granted))
    return outcome, rr_cursor
