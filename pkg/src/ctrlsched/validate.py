"""Fast self-checks run by ``ctrlsched validate``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import brute_force, greedy, hungarian
from .config import SimConfig
from .dynamics import PlantModel, control_weight, lqr_synthesize
from .phy import db_to_linear, per, tx_time
from .scheduler import InfeasibleMcs, select_mcs


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}" + (f"  ({self.detail})" if self.detail else "")


def monte_carlo_drop_penalty(model: PlantModel, l: int, n: int, rng, estimate=None):
    """Sample mean and standard error of ``L(drop) - L(success)``.

    The true state is the estimate plus ``sum_{j<l} Ac^j w_j``; both
    branches share the same noise draws.
    """
    p = model.dim
    xhat = np.zeros(p) if estimate is None else np.asarray(estimate, dtype=float)
    vals, vecs = np.linalg.eigh(model.W)
    chol = vecs * np.sqrt(np.clip(vals, 0, None))
    e = np.zeros((n, p))
    for _ in range(l):
        # Horner form of sum_j Ac^j w_j
        e = e @ model.Ac.T + rng.standard_normal((n, p)) @ chol.T
    x = xhat + e
    w = rng.standard_normal((n, p)) @ chol.T
    drop = x @ model.A.T + (xhat @ (model.B @ model.K).T) + w
    success = x @ model.Ac.T + w
    d = (np.einsum("ij,jk,ik->i", drop, model.P, drop)
         - np.einsum("ij,jk,ik->i", success, model.P, success))
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(n))


def check_mcs_monotonicity(config: SimConfig) -> CheckResult:
    table = config.mcs_table
    problems = table.monotonicity_problems()
    grid_db = np.arange(-10.0, 30.0 + 1e-9, 0.5)
    bw = config.rho * config.numerology.prb_bandwidth
    for lo, hi in zip(table, table[1:]):
        for snr_db in grid_db:
            h = db_to_linear(np.full(config.rho, snr_db))
            if per(hi, h) < per(lo, h):
                problems.append(f"PER decreases from MCS {lo.index} to {hi.index} at {snr_db} dB")
                break
        if tx_time(hi, bw, config.payload_bits, config.numerology) > \
                tx_time(lo, bw, config.payload_bits, config.numerology):
            problems.append(f"tx time increases from MCS {lo.index} to {hi.index}")
    return CheckResult("mcs-monotonicity", not problems, "; ".join(problems[:3]))


def check_mcs_minimality(config: SimConfig) -> CheckResult:
    layout = config.layout()
    nm = config.numerology
    try:
        mu = select_mcs(layout, nm, config.mcs_table, config.payload_bits)
    except InfeasibleMcs as exc:
        return CheckResult("mcs-minimality", False, str(exc))
    bw = layout.rho * nm.prb_bandwidth
    fits = tx_time(config.mcs_table[mu], bw, config.payload_bits, nm) <= nm.slot_duration
    below = mu == 0 or tx_time(config.mcs_table[mu - 1], bw, config.payload_bits,
                               nm) > nm.slot_duration
    return CheckResult("mcs-minimality", fits and below, f"mu={mu}")


def check_assignment_optimality(hungarian_fn=hungarian, instances: int = 200,
                                seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(instances):
        m, n = rng.integers(1, 7, size=2)
        cost = rng.integers(0, 10, size=(m, n)).astype(float)
        if abs(hungarian_fn(cost).total_cost - brute_force(cost).total_cost) > 1e-9:
            bad += 1
    return CheckResult("assignment-optimality", bad == 0, f"{bad}/{instances} mismatches")


def check_greedy_bound(greedy_fn=greedy, hungarian_fn=hungarian, instances: int = 200,
                       seed: int = 1) -> CheckResult:
    """Greedy must return a full, exclusive matching no cheaper than exact."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(instances):
        m, n = rng.integers(1, 7, size=2)
        cost = rng.normal(size=(m, n))
        g = greedy_fn(cost)
        exact = hungarian_fn(cost).total_cost
        if (g.total_cost < exact - 1e-9 or len(g.pairs) != min(m, n)
                or not g.is_exclusive()):
            bad += 1
    # equal sorted prefixes must reach the exact optimum
    diag = np.array([[1.0, 2.0], [2.0, 1.0]])
    if abs(greedy_fn(diag).total_cost - 2.0) > 1e-12:
        bad += 1
    return CheckResult("greedy-vs-hungarian", bad == 0, f"{bad} violations")


def check_control_weight(config: SimConfig, samples: int = 200_000,
                         seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    scalar = PlantModel(A=[[2.0]], B=[[1.0]], K=[[-1.5]], W=[[1.0]], P=[[1.0]])
    cases = [(scalar, 1), (scalar, 2)]
    pend = config.plant_model()
    cases += [(pend, l) for l in (1, 2, 5)]
    worst = 0.0
    for model, l in cases:
        mean, se = monte_carlo_drop_penalty(model, l, samples, rng,
                                            estimate=np.ones(model.dim))
        z = abs(mean - control_weight(model, l)) / se
        worst = max(worst, z)
    return CheckResult("control-weight-oracle", worst <= 3.0, f"max |z|={worst:.2f}")


def check_lqr(config: SimConfig) -> CheckResult:
    model = config.plant_model()
    rho = float(np.abs(np.linalg.eigvals(model.Ac)).max())
    K, P = lqr_synthesize(2.0, 1.0, 1.0, 1.0)
    scalar_ok = abs(P[0, 0] - (2 + np.sqrt(5))) < 1e-9
    return CheckResult("lqr-stability", rho < 1 and scalar_ok, f"spectral radius {rho:.5f}")


def run_checks(config: SimConfig | None = None, greedy_fn=greedy,
               hungarian_fn=hungarian) -> list[CheckResult]:
    config = config or SimConfig()
    checks = [
        lambda: check_mcs_monotonicity(config),
        lambda: check_mcs_minimality(config),
        lambda: check_assignment_optimality(hungarian_fn),
        lambda: check_greedy_bound(greedy_fn, hungarian_fn),
        lambda: check_control_weight(config),
        lambda: check_lqr(config),
    ]
    results = []
    for check in checks:
        try:
            results.append(check())
        except Exception as exc:  # a crashing check is a failing check
            results.append(CheckResult(getattr(check, "__name__", "check"), False, repr(exc)))
    return results
