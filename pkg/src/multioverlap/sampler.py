"""Metropolis single-spin-flip sampling of the Gibbs measure, for sizes
beyond the enumeration cap.

One sweep is N proposals at uniformly random sites. A proposal at site i
flips the sign of every coupling term containing i an odd number of times,
so the energy change is 2 * sum of the current values of those terms.
Chains are pure functions of (realization, beta, config), deterministic in
the seed: all randomness is drawn from one numpy Generator in a fixed order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import DisorderRealization

__all__ = ["ChainConfig", "run_chain", "mc_estimate_monomial",
           "mc_estimate_monomials", "blocking_stderr", "derive_chain_seed"]


@dataclass(frozen=True)
class ChainConfig:
    n_sweeps: int = 100_000
    burn_in_sweeps: int = 1_000
    thinning: int = 1
    seed: int = 0

    def validate(self) -> None:
        if not self.n_sweeps > self.burn_in_sweeps >= 0:
            raise ValidationError("need n_sweeps > burn_in_sweeps >= 0")
        if self.thinning < 1:
            raise ValidationError("thinning must be >= 1")


def _terms_and_adjacency(realization: DisorderRealization, spins):
    """Current value of each coupling term and, per site, the indices of the
    terms it flips (odd multiplicity only)."""
    n = realization.n_sites
    terms = []
    adjacency = [[] for _ in range(n)]
    for ci, c in enumerate(realization.couplings):
        prod = c.sign * c.strength_scale
        counts = {}
        for i in c.sites:
            counts[i] = counts.get(i, 0) + 1
            prod *= spins[i - 1]
        for i, cnt in counts.items():
            if cnt % 2:
                adjacency[i - 1].append(ci)
        terms.append(prod)
    return terms, [tuple(a) for a in adjacency]


def run_chain(realization: DisorderRealization, beta: float, cfg: ChainConfig,
              return_acceptance: bool = False):
    """Metropolis chain targeting exp(-beta*H); returns the measured spin
    configurations as an (n_measurements, N) array of +-1 int8."""
    cfg.validate()
    realization.validate()
    n = realization.n_sites
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    spins = (rng.integers(0, 2, size=n) * 2 - 1).tolist()
    terms, adjacency = _terms_and_adjacency(realization, spins)

    measured = []
    accepted = 0
    proposed = 0
    exp = np.exp
    for sweep in range(1, cfg.n_sweeps + 1):
        sites = rng.integers(0, n, size=n).tolist()
        uniforms = rng.random(n).tolist()
        for i, u in zip(sites, uniforms):
            delta = 0.0
            adj = adjacency[i]
            for ci in adj:
                delta += terms[ci]
            delta *= 2.0
            proposed += 1
            if delta <= 0.0 or u < exp(-beta * delta):
                accepted += 1
                spins[i] = -spins[i]
                for ci in adj:
                    terms[ci] = -terms[ci]
        if sweep > cfg.burn_in_sweeps and (sweep - cfg.burn_in_sweeps) % cfg.thinning == 0:
            measured.append(spins.copy())
    configs = np.asarray(measured, dtype=np.int8)
    if return_acceptance:
        return configs, accepted, proposed
    return configs


def blocking_stderr(series: np.ndarray) -> float:
    """Autocorrelation-aware standard error by log2 block doubling; reports
    the largest level estimate among levels with at least 32 blocks."""
    data = np.asarray(series, dtype=np.float64)
    if data.size < 2:
        return 0.0
    best = float(data.std(ddof=1) / np.sqrt(data.size))
    while data.size >= 64:
        data = data[: 2 * (data.size // 2)].reshape(-1, 2).mean(axis=1)
        if data.size >= 32:
            best = max(best, float(data.std(ddof=1) / np.sqrt(data.size)))
    return best


def derive_chain_seed(base_seed: int, chain_index: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(chain_index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _run_chain_set(realization, beta, n_chains, cfg):
    chains = []
    for c in range(n_chains):
        chain_cfg = dataclasses.replace(cfg, seed=derive_chain_seed(cfg.seed, c))
        chains.append(run_chain(realization, beta, chain_cfg).astype(np.float64))
    return chains


def _monomial_series(monomial, chains, diagonal=False):
    series = np.ones(chains[0].shape[0])
    for labels, exp in monomial.factors:
        prod = np.ones_like(chains[0])
        for r in labels:
            prod = prod * chains[0 if diagonal else r - 1]
        series = series * prod.mean(axis=1) ** exp
    return series


def mc_estimate_monomials(realization: DisorderRealization, beta: float,
                          monomials, n_chains: int, cfg: ChainConfig):
    """Estimate several monomials from one shared chain set (one chain per
    replica label), so all estimates ride on common random numbers.
    Returns a list of (value, blocking stderr) pairs."""
    cfg.validate()
    needed = max((m.n_replicas for m in monomials), default=0)
    if n_chains < max(needed, 1):
        raise ValidationError(
            f"monomials use up to {needed} replicas but only {n_chains} chains were given")
    chains = _run_chain_set(realization, beta, n_chains, cfg)
    out = []
    for m in monomials:
        series = _monomial_series(m, chains)
        out.append((float(series.mean()), blocking_stderr(series)))
    return out


def mc_estimate_monomial(realization: DisorderRealization, beta: float, monomial,
                         n_chains: int, cfg: ChainConfig,
                         diagnostic_diagonal: bool = False):
    """Time average of a multi-overlap product over independent chains on the
    same realization (one chain per replica label), with blocking stderr.

    diagnostic_diagonal repeats chain 0 for every replica: even-order
    overlaps are then identically 1 (the diagonal of the overlap kernel).
    """
    cfg.validate()
    needed = max(monomial.n_replicas, 1)
    if not diagnostic_diagonal and n_chains < needed:
        raise ValidationError(
            f"monomial uses {needed} replicas but only {n_chains} chains were given")
    chains = _run_chain_set(realization, beta, 1 if diagnostic_diagonal else n_chains, cfg)
    series = _monomial_series(monomial, chains, diagonal=diagnostic_diagonal)
    return float(series.mean()), blocking_stderr(series)
