"""Model specifications, quenched disorder sampling, and Hamiltonian evaluation.

The Hamiltonian is a sum of Poisson many signed products of spins on
uniformly drawn site tuples:

    H(sigma) = - sum_c  sign_c * scale_c * prod_{i in sites_c} sigma_i

Base interaction terms of arity p get a Poisson(alpha * N) number of
couplings with scale a_p; each perturbation gets a Poisson(rate) number
(size-independent mean) with scale weight * strength / beta, so that the
Boltzmann factor exp(-beta * H) carries the perturbation at its own
inverse temperature `strength`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptRealizationError, ValidationError

__all__ = [
    "PerturbationSpec",
    "ModelSpec",
    "CouplingTerm",
    "DisorderRealization",
    "realization_seed",
    "sample_disorder",
    "energy",
    "merge_perturbation_params",
    "coupling_mask",
]


@dataclass(frozen=True)
class PerturbationSpec:
    """A macroscopic-but-small extra interaction: Poisson mean `rate` does
    not scale with the system size (versus alpha * N for the base terms)."""

    arity: int = 2
    rate: float = 0.0
    strength: float = 0.0  # perturbing inverse temperature
    weight: float = 1.0    # extra multiplicative weight on the exponent

    def validate(self) -> None:
        if self.arity < 1:
            raise ValidationError(f"perturbation arity must be >= 1, got {self.arity}")
        if self.rate < 0:
            raise ValidationError(f"perturbation rate must be >= 0, got {self.rate}")


@dataclass(frozen=True)
class ModelSpec:
    n_sites: int
    beta: float
    alpha: float
    interactions: tuple = ((2, 1.0),)  # (arity p, weight a_p)
    perturbations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "interactions", tuple((int(p), float(a)) for p, a in self.interactions))
        object.__setattr__(self, "perturbations", tuple(self.perturbations))
        self.validate()

    def validate(self) -> None:
        if self.n_sites < 1:
            raise ValidationError(f"n_sites must be >= 1, got {self.n_sites}")
        if self.beta < 0:
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if not self.interactions:
            raise ValidationError("at least one interaction arity is required")
        for p, _ in self.interactions:
            if p < 1:
                raise ValidationError(f"interaction arity must be >= 1, got {p}")
        if len(self.interactions) > 1:
            norm = sum(a * a for _, a in self.interactions)
            if abs(norm - 1.0) > 1e-9:
                raise ValidationError(
                    f"multi-arity weights must satisfy sum(a_p^2) = 1, got {norm:.6g}"
                )
        elif self.interactions[0][1] != 1.0:
            raise ValidationError("single-arity models use weight a_p = 1 "
                                  "(rescale beta instead)")
        for pert in self.perturbations:
            pert.validate()
            if pert.strength != 0.0 and self.beta == 0.0:
                raise ValidationError(
                    "beta = 0 with a nonzero perturbation strength: the exp(-beta*H) "
                    "reweighting is undefined"
                )


@dataclass(frozen=True)
class CouplingTerm:
    sign: int                 # +1 or -1
    sites: tuple              # p site indices in [1..N], duplicates allowed
    strength_scale: float = 1.0


@dataclass(frozen=True)
class DisorderRealization:
    couplings: tuple
    seed: int
    n_sites: int

    def validate(self) -> None:
        for c in self.couplings:
            for i in c.sites:
                if not 1 <= i <= self.n_sites:
                    raise CorruptRealizationError(
                        f"site index {i} outside [1..{self.n_sites}]"
                    )


def realization_seed(master_seed: int, index: int) -> int:
    """Derive the seed of realization `index` from a master seed.

    Splittable counter scheme: numpy's SeedSequence with the realization
    index as spawn key, so any single realization can be regenerated in
    isolation regardless of worker scheduling.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _perturbation_scale(pert: PerturbationSpec, beta: float) -> float:
    if pert.strength == 0.0:
        return 0.0
    return pert.weight * pert.strength / beta


def sample_disorder(spec: ModelSpec, seed: int) -> DisorderRealization:
    """Draw one quenched sample: Poisson coupling counts, iid uniform site
    tuples, symmetric +-1 signs. Deterministic in (spec, seed).

    Poisson counts come from numpy's Generator (exact inversion below mean
    30, exact PTRS rejection above), so no approximation enters the counts.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = spec.n_sites
    couplings = []

    def draw_block(arity: int, mean: float, scale: float) -> None:
        count = int(rng.poisson(mean)) if mean > 0 else 0
        if count == 0:
            return
        sites = rng.integers(1, n + 1, size=(count, arity))
        signs = rng.integers(0, 2, size=count) * 2 - 1
        for row, s in zip(sites, signs):
            couplings.append(CouplingTerm(int(s), tuple(int(i) for i in row), scale))

    for p, a_p in spec.interactions:
        draw_block(p, spec.alpha * n, a_p)
    for pert in spec.perturbations:
        draw_block(pert.arity, pert.rate, _perturbation_scale(pert, spec.beta))

    return DisorderRealization(tuple(couplings), int(seed), n)


def energy(realization: DisorderRealization, config: np.ndarray) -> float:
    """H(sigma) for one spin configuration (entries +-1, length N)."""
    config = np.asarray(config)
    n = config.shape[0]
    total = 0.0
    for c in realization.couplings:
        prod = 1.0
        for i in c.sites:
            if not 1 <= i <= n:
                raise CorruptRealizationError(f"site index {i} outside [1..{n}]")
            prod *= config[i - 1]
        total += c.sign * c.strength_scale * prod
    return -total


def merge_perturbation_params(alpha: float, alpha_prime: float, beta: float,
                              beta_prime: float, n: int, t: float):
    """Merge a base interaction with a perturbation into one Poisson stream.

    Returns (merged_rate, prob_scaled_sign, scale): the combined per-site
    rate alpha + alpha'*t/N (total mean alpha*N + alpha'*t), the probability
    that a drawn coupling carries the rescaled strength, and that rescaling
    beta'/beta.
    """
    if beta == 0:
        raise ValidationError("beta = 0: the beta'/beta rescaling is undefined")
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"t must lie in [0,1], got {t}")
    merged_rate = alpha + alpha_prime * t / n
    total_mean = alpha * n + alpha_prime * t
    prob_scaled = (alpha_prime * t / total_mean) if total_mean > 0 else 0.0
    return merged_rate, prob_scaled, beta_prime / beta


def coupling_mask(sites, n_sites: int) -> int:
    """Bitmask of the sites appearing an odd number of times (sigma_i^2 = 1)."""
    mask = 0
    for i in sites:
        if not 1 <= i <= n_sites:
            raise CorruptRealizationError(f"site index {i} outside [1..{n_sites}]")
        mask ^= 1 << (i - 1)
    return mask
