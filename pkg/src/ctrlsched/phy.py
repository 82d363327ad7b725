"""Frame numerology, block-fading channel and MCS link abstraction."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy.special import expit

SUBFRAME_DURATION = 1e-3
SUBCARRIERS_PER_PRB = 12


@dataclass(frozen=True)
class Numerology:
    scs: float = 30e3
    slots_per_subframe: int = 2
    symbols_per_slot: int = 14
    overhead_symbols: int = 2

    def __post_init__(self):
        if self.scs <= 0 or self.slots_per_subframe < 1:
            raise ValueError("scs and slots_per_subframe must be positive")
        if not 0 <= self.overhead_symbols < self.symbols_per_slot:
            raise ValueError("overhead_symbols must be in [0, symbols_per_slot)")

    @property
    def slot_duration(self) -> float:
        return SUBFRAME_DURATION / self.slots_per_subframe

    @property
    def prb_bandwidth(self) -> float:
        return SUBCARRIERS_PER_PRB * self.scs

    @property
    def usable_fraction(self) -> float:
        return (self.symbols_per_slot - self.overhead_symbols) / self.symbols_per_slot


@dataclass(frozen=True)
class FrameConfig:
    channel_bandwidth: float = 20e6
    total_prbs: int = 51
    ll_subframes_per_frame: int = 1
    frame_duration: float = 0.01
    cycle_period: float = 0.01

    def check(self, numerology: Numerology) -> None:
        if self.total_prbs < 1:
            raise ValueError("total_prbs must be >= 1")
        if self.total_prbs * numerology.prb_bandwidth > self.channel_bandwidth + 1e-6:
            raise ValueError(
                f"total_prbs={self.total_prbs} at {numerology.prb_bandwidth:g} Hz per PRB "
                f"exceeds channel_bandwidth={self.channel_bandwidth:g} Hz")
        if self.ll_subframes_per_frame not in (1, 2):
            raise ValueError("ll_subframes_per_frame must be 1 or 2")


@dataclass(frozen=True)
class McsEntry:
    index: int
    spectral_efficiency: float
    snr_threshold_db: float
    waterfall_slope: float = 1.0


DEFAULT_EFFICIENCIES = (0.2, 0.4, 0.8, 1.2, 1.8, 2.4, 3.2, 4.0)
DEFAULT_THRESHOLDS_DB = (-4.0, -1.0, 2.0, 5.0, 8.0, 11.0, 15.0, 19.0)


class McsTable(Sequence):
    """Ordered MCS entries, index ``mu`` in ``0 .. eta``."""

    def __init__(self, entries):
        entries = [e if isinstance(e, McsEntry) else McsEntry(**e) for e in entries]
        if not entries:
            raise ValueError("MCS table must not be empty")
        for pos, e in enumerate(entries):
            if e.index != pos:
                raise ValueError(f"MCS entry at position {pos} has index {e.index}")
        self._entries = tuple(entries)

    @classmethod
    def default(cls) -> "McsTable":
        return cls(McsEntry(i, eff, thr, 1.0) for i, (eff, thr) in
                   enumerate(zip(DEFAULT_EFFICIENCIES, DEFAULT_THRESHOLDS_DB)))

    def __getitem__(self, i):
        return self._entries[i]

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        return isinstance(other, McsTable) and self._entries == other._entries

    def __repr__(self):
        return f"McsTable({list(self._entries)!r})"

    def to_dicts(self) -> list[dict]:
        return [asdict(e) for e in self._entries]

    def monotonicity_problems(self) -> list[str]:
        """Describe every adjacent pair violating the rate/robustness ordering."""
        problems = []
        for lo, hi in zip(self._entries, self._entries[1:]):
            if not hi.spectral_efficiency > lo.spectral_efficiency:
                problems.append(f"spectral_efficiency not increasing at index {hi.index}")
            if not hi.snr_threshold_db > lo.snr_threshold_db:
                problems.append(f"snr_threshold_db not increasing at index {hi.index}")
        for e in self._entries:
            if e.spectral_efficiency <= 0 or e.waterfall_slope <= 0:
                problems.append(f"non-positive efficiency or slope at index {e.index}")
        return problems


@dataclass(frozen=True)
class ChannelModel:
    """Log-distance path loss with optional Rayleigh block fading.

    ``tx_power_dbm`` is the power radiated in each PRB.
    """

    path_loss_exponent: float = 3.0
    reference_loss_db: float = 43.3
    tx_power_dbm: float = -10.0
    noise_density_dbm_hz: float = -165.0
    fading: bool = True

    def mean_snr_db(self, distances, prb_bandwidth: float) -> np.ndarray:
        d = np.asarray(distances, dtype=float)
        if np.any(d <= 0):
            raise ValueError("distances must be positive")
        loss = self.reference_loss_db + 10.0 * self.path_loss_exponent * np.log10(d)
        noise = self.noise_density_dbm_hz + 10.0 * np.log10(prb_bandwidth)
        return self.tx_power_dbm - loss - noise


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def sample_channel(model: ChannelModel, distances, b: int, rng: np.random.Generator,
                   prb_bandwidth: float = 360e3) -> np.ndarray:
    """Per-device, per-PRB linear SNR for one cycle, shape ``(m, b)``."""
    mean = db_to_linear(model.mean_snr_db(distances, prb_bandwidth))[:, None]
    if not model.fading:
        return np.broadcast_to(mean, (mean.shape[0], b)).copy()
    return mean * rng.standard_exponential((mean.shape[0], b))


def eesm(h, beta: float = 1.0, axis: int = -1):
    """Exponential effective SNR mapping (linear in, linear out)."""
    h = np.asarray(h, dtype=float)
    hmin = h.min(axis=axis, keepdims=True)
    mean_exp = np.mean(np.exp(-(h - hmin) / beta), axis=axis, keepdims=True)
    return np.squeeze(hmin - beta * np.log(mean_exp), axis=axis)


def per_from_snr_db(mcs: McsEntry, snr_db):
    return expit(-mcs.waterfall_slope * (np.asarray(snr_db) - mcs.snr_threshold_db))


def per(mcs: McsEntry, h_block) -> float:
    """Packet error rate of one block given the SNRs of its PRBs."""
    h_block = np.asarray(h_block, dtype=float)
    if h_block.size == 0:
        raise ValueError("h_block must be nonempty")
    with np.errstate(divide="ignore"):
        snr_db = linear_to_db(eesm(h_block))
    return float(per_from_snr_db(mcs, snr_db))


def tx_time(mcs: McsEntry, bandwidth: float, payload_bits: int,
            numerology: Numerology) -> float:
    """Transmission time of ``payload_bits`` over ``bandwidth`` Hz."""
    if bandwidth <= 0 or payload_bits <= 0:
        raise ValueError("bandwidth and payload_bits must be positive")
    return payload_bits / (mcs.spectral_efficiency * bandwidth * numerology.usable_fraction)
