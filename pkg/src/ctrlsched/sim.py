"""Cycle-by-cycle closed-loop simulation of the scheduled control fleet.

One cycle runs, in order: channel draw, scheduling on the counters left by
the previous cycle, MCS choice, packet outcomes, plant evolution under the
switched dynamics, and counter update.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .config import SCHEMA_VERSION, SimConfig, config_to_dict
from .dynamics import control_weight_table
from .phy import sample_channel
from .scheduler import Policy, ScheduleOutcome, block_per, schedule, select_mcs

STREAMS = ("placement", "initial", "fading", "noise", "coins")


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent PCG64 generators, one per purpose.

    Draw shapes never depend on the policy, so runs that differ only in the
    scheduler see the same channels, noise and coins.
    """
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(ss))
            for name, ss in zip(STREAMS, children)}


def place_devices(m: int, radius: float, rng, min_distance: float = 1.0) -> np.ndarray:
    """Distances of ``m`` points uniform over a disk, clipped below."""
    r = radius * np.sqrt(rng.random(m))
    rng.random(m)  # azimuth, drawn to keep the stream layout fixed
    return np.maximum(r, min_distance)


def _noise_factor(W: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(W)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass
class CycleTrace:
    k: int
    H: np.ndarray
    counters: np.ndarray
    weights: np.ndarray
    outcome: ScheduleOutcome
    q: np.ndarray
    gamma: np.ndarray
    estimate_used: np.ndarray


class Simulation:
    """Mutable world of one trial.

    Per-device arrays: ``x`` true states, ``est`` base-station estimates for
    the current cycle, ``last_rx``, ``counter`` and ``fallen``.
    """

    def __init__(self, config: SimConfig, seed: int | None = None, policy=None):
        config.validate()
        self.config = config
        self.policy = Policy.parse(policy or config.policy)
        self.seed = config.seed if seed is None else seed
        self.model = config.plant_model()
        self.layout = config.layout()
        self.mcs = select_mcs(self.layout, config.numerology, config.mcs_table,
                              config.payload_bits)
        self.weight_table = control_weight_table(self.model, config.counter_cap)
        self.streams = make_streams(self.seed)

        m = config.devices
        self.m = m
        self.distances = place_devices(m, config.cell_radius, self.streams["placement"],
                                       config.min_distance)
        x0 = np.zeros((m, 4))
        x0[:, 2] = math.sqrt(config.initial_angle_var) * self.streams["initial"].standard_normal(m)
        self.x = x0
        self.est = x0.copy()
        self.last_rx = x0.copy()
        self.counter = np.ones(m, dtype=np.int64)
        self.fallen = np.zeros(m, dtype=bool)
        self.rr_cursor = 0
        self.k = 0
        self._noise_factor = _noise_factor(self.model.W)
        self._AcT = self.model.Ac.T
        self._AT = self.model.A.T
        self._BKT = (self.model.B @ self.model.K).T

    def weights(self) -> np.ndarray:
        cap = self.config.counter_cap
        return self.weight_table[np.minimum(self.counter, cap) - 1]

    def run_cycle(self) -> CycleTrace:
        cfg = self.config
        m = self.m
        # 1. channel
        H = sample_channel(cfg.channel, self.distances, cfg.frame.total_prbs,
                           self.streams["fading"], cfg.numerology.prb_bandwidth)
        coins = self.streams["coins"].random(m)
        w = self.streams["noise"].standard_normal((m, 4)) @ self._noise_factor.T

        # 2-3. schedule on counters from the previous cycle, MCS fixed per layout
        active = np.flatnonzero(~self.fallen)
        counters = self.counter.copy()
        weights = self.weights()
        outcome, self.rr_cursor = schedule(
            self.policy, H[active], self.layout, self.mcs, cfg.mcs_table,
            weights=weights[active], rr_cursor=self.rr_cursor, active=active.tolist())

        # 4. packet outcomes
        q = np.ones(m)
        if outcome.grants:
            devs = np.fromiter((g.device for g in outcome.grants), dtype=np.int64)
            blocks = [g.block for g in outcome.grants]
            group = np.array([b.prb_start // self.layout.rho for b in blocks])
            q_all = block_per(H[devs], self.layout, self.mcs, cfg.mcs_table)
            q[devs] = q_all[np.arange(len(devs)), group]
        gamma = coins >= q

        # 5. switched plant evolution
        estimate_used = np.where(gamma[:, None], self.x, self.est)
        x_next = np.where(gamma[:, None], self.x @ self._AcT,
                          self.x @ self._AT + self.est @ self._BKT) + w
        x_next[self.fallen] = self.x[self.fallen]

        # 6. counters and estimates for the next cycle
        live = ~self.fallen
        self.last_rx = np.where(gamma[:, None], self.x, self.last_rx)
        self.counter = np.where(gamma, 1, self.counter + live)
        self.est = np.where(live[:, None], estimate_used @ self._AcT, self.est)

        trace = CycleTrace(k=self.k, H=H, counters=counters, weights=weights,
                           outcome=outcome, q=q, gamma=gamma,
                           estimate_used=estimate_used)
        self.x = x_next
        self.fallen = self.fallen | (np.abs(self.x[:, 2]) > cfg.fall_angle)
        self.k += 1
        return trace


_CSV_HEADER = ("cycle", "device", "x", "x_dot", "theta", "theta_dot", "distance",
               "scheduled", "slot", "prb_start", "gamma", "counter", "lyapunov_cost",
               "fallen")


class MetricsLog:
    """Per-cycle, per-device records of one trial plus aggregates."""

    csv_header = _CSV_HEADER

    def __init__(self, n_cycles: int, m: int, pole_length: float, distances=None):
        self.pole_length = pole_length
        self.distances_to_bs = np.zeros(m) if distances is None else np.asarray(distances)
        self.states = np.zeros((n_cycles, m, 4))
        self.scheduled = np.zeros((n_cycles, m), dtype=bool)
        self.slot = np.full((n_cycles, m), -1, dtype=np.int64)
        self.prb_start = np.full((n_cycles, m), -1, dtype=np.int64)
        self.gamma = np.zeros((n_cycles, m), dtype=bool)
        self.counter = np.zeros((n_cycles, m), dtype=np.int64)
        self.cost = np.zeros((n_cycles, m))
        self.fallen = np.zeros((n_cycles, m), dtype=bool)

    @property
    def n_cycles(self) -> int:
        return self.states.shape[0]

    @property
    def m(self) -> int:
        return self.states.shape[1]

    @property
    def distance(self) -> np.ndarray:
        """Horizontal offset of the pole tip, ``|x + l sin(theta)|``."""
        return np.abs(self.states[..., 0] + self.pole_length * np.sin(self.states[..., 2]))

    def device_mean_distance(self) -> np.ndarray:
        if self.n_cycles == 0:
            return np.zeros(self.m)
        return self.distance.mean(axis=0)

    def aggregates(self) -> dict:
        n, m = self.n_cycles, self.m
        sent = int(self.scheduled.sum())
        ok = int(self.gamma.sum())
        per_dev = self.device_mean_distance()
        return {
            "cycles": n,
            "devices": m,
            "fleet_mean_distance": float(per_dev.mean()) if n and m else None,
            "device_mean_distance": [float(v) for v in per_dev] if n else [],
            "fallen": int(self.fallen[-1].sum()) if n else 0,
            "scheduled_transmissions": sent,
            "successful_transmissions": ok,
            "drop_rate": (sent - ok) / sent if sent else None,
            "mean_abs_theta": float(np.abs(self.states[..., 2]).mean()) if n and m else None,
        }

    def write_csv(self, fh, trial: int | None = None) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        header = (("trial",) if trial is not None else ()) + _CSV_HEADER
        writer.writerow(header)
        self.write_rows(writer, trial)

    def write_rows(self, writer, trial: int | None = None) -> None:
        dist = self.distance
        prefix = (trial,) if trial is not None else ()
        for k in range(self.n_cycles):
            for i in range(self.m):
                s = self.states[k, i]
                writer.writerow(prefix + (
                    k, i, repr(float(s[0])), repr(float(s[1])), repr(float(s[2])),
                    repr(float(s[3])), repr(float(dist[k, i])), int(self.scheduled[k, i]),
                    int(self.slot[k, i]), int(self.prb_start[k, i]), int(self.gamma[k, i]),
                    int(self.counter[k, i]), repr(float(self.cost[k, i])),
                    int(self.fallen[k, i])))

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def run_trial(config: SimConfig, seed: int | None = None, policy=None,
              on_cycle=None) -> MetricsLog:
    """Run ``config.n_cycles`` cycles; ``on_cycle(sim, trace)`` observes each."""
    sim = Simulation(config, seed=seed, policy=policy)
    n = config.n_cycles
    log = MetricsLog(n, sim.m, config.pendulum.pole_length, sim.distances)
    P = sim.model.P
    for k in range(n):
        log.states[k] = sim.x
        log.fallen[k] = sim.fallen
        log.cost[k] = np.einsum("ij,jk,ik->i", sim.x, P, sim.x)
        trace = sim.run_cycle()
        log.counter[k] = trace.counters
        log.gamma[k] = trace.gamma
        for g in trace.outcome.grants:
            log.scheduled[k, g.device] = True
            log.slot[k, g.device] = g.block.slot
            log.prb_start[k, g.device] = g.block.prb_start
        if on_cycle is not None:
            on_cycle(sim, trace)
    return log


def _stats(values):
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    if arr.size == 0:
        return None, None
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def run_experiment(config: SimConfig, trials: int | None = None, policies=None,
                   devices_list=None, keep_logs: bool = False, progress=None) -> dict:
    """Run every (devices, policy, trial) cell with seeds ``seed + trial``.

    All policies share the seed of a given (devices, trial), so their
    comparison uses common random numbers.
    """
    trials = config.trials if trials is None else trials
    if trials < 1:
        raise ValueError("trials must be >= 1")
    policies = [Policy.parse(p) for p in (policies or [config.policy])]
    devices_list = list(devices_list or [config.devices])
    rows, cells, logs = [], [], {}
    for m in devices_list:
        cfg_m = config.replace(devices=m)
        for policy in policies:
            per_trial = []
            for t in range(trials):
                seed = config.seed + t
                log = run_trial(cfg_m, seed=seed, policy=policy)
                agg = log.aggregates()
                agg.update(policy=policy.value, trial=t, seed=seed)
                per_trial.append(agg)
                rows.append({"scheduler": policy.cli_name, "m": m, "trial": t,
                             "fleet_mean_distance": agg["fleet_mean_distance"],
                             "fallen": agg["fallen"]})
                if keep_logs:
                    logs[(m, policy.value, t)] = log
                if progress is not None:
                    progress(m, policy, t, agg)
            mean, std = _stats(a["fleet_mean_distance"] for a in per_trial)
            cells.append({
                "policy": policy.value,
                "devices": m,
                "trials": per_trial,
                "fleet_mean_distance_mean": mean,
                "fleet_mean_distance_std": std,
                "fallen_total": int(sum(a["fallen"] for a in per_trial)),
            })
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": config_to_dict(config),
        "trials": trials,
        "results": cells,
        "rows": rows,
    }
    if keep_logs:
        summary["_logs"] = logs
    return summary
