"""Replica-monomial algebra: canonical products of multi-overlaps and their
exact reduction to single-replica correlators.

A multi-overlap over a replica set S is q_S = (1/N) sum_i prod_{r in S}
sigma_i^(r). Because the replica measure is a product of identical Gibbs
copies over shared disorder, any product of multi-overlap powers expands as

    Omega(prod_f q_{S_f}^{e_f}) = (1/N^k) sum_{i_1..i_k} prod_r omega(sigma_{T_r})

with one site slot per overlap factor copy and T_r the mod-2 reduced multiset
of slots whose factor contains replica r.
"""

from __future__ import annotations

import dataclasses
import itertools
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import quench
from .errors import CapacityError, ValidationError
from .exact import correlation_tensor
from .model import ModelSpec, sample_disorder

__all__ = [
    "ReplicaMonomial",
    "canonicalize",
    "literal_monomial",
    "shared_pattern",
    "ReducedMonomial",
    "reduce_to_correlators",
    "OverlapEstimate",
    "estimate",
    "format_monomial",
    "parse_monomial",
    "monomial_product",
    "DEFAULT_REDUCTION_CAP",
    "MAX_CANONICAL_REPLICAS",
]

DEFAULT_REDUCTION_CAP = 6
MAX_CANONICAL_REPLICAS = 10
_EVAL_CHUNK = 1 << 20


@dataclass(frozen=True)
class ReplicaMonomial:
    """Canonical product of multi-overlap powers.

    factors: tuple of (sorted label tuple, exponent); labels are exactly
    {1..n_replicas}; factors sorted by (size, labels, exponent). Two
    monomials are equal iff their canonical forms coincide.
    """

    factors: tuple
    n_replicas: int

    def __str__(self) -> str:
        return format_monomial(self)


def _representation(factors, mapping):
    return tuple(sorted(
        (len(labels), tuple(sorted(mapping[x] for x in labels)), exp)
        for labels, exp in factors
    ))


def canonicalize(raw) -> ReplicaMonomial:
    """Canonical form: merge identical factors, relabel replicas to 1..n by
    the lexicographically minimal bijection."""
    merged = {}
    for labels, exp in raw:
        labels = tuple(labels)
        if not labels:
            raise ValidationError("empty multi-overlap factor")
        if int(exp) != exp or exp < 1:
            raise ValidationError(f"factor exponent must be an integer >= 1, got {exp}")
        for x in labels:
            if int(x) != x or x < 1:
                raise ValidationError(f"replica labels must be positive integers, got {x}")
        key = frozenset(int(x) for x in labels)
        if len(key) != len(labels):
            raise ValidationError(f"replica labels repeated within one factor: {labels}")
        merged[key] = merged.get(key, 0) + int(exp)

    if not merged:
        return ReplicaMonomial(factors=(), n_replicas=0)
    all_labels = sorted(set().union(*merged))
    n = len(all_labels)
    factors = tuple(merged.items())
    if len(factors) == 1:
        (_, exp), = factors
        return ReplicaMonomial(factors=((tuple(range(1, n + 1)), exp),), n_replicas=n)
    if len(factors) == 2:
        return _canonical_two_factors(factors, n)
    if n > MAX_CANONICAL_REPLICAS:
        raise CapacityError(f"{n} distinct replicas exceeds the canonicalization cap "
                            f"{MAX_CANONICAL_REPLICAS}")
    best = None
    for perm in itertools.permutations(range(1, n + 1)):
        mapping = dict(zip(all_labels, perm))
        rep = _representation(factors, mapping)
        if best is None or rep < best:
            best = rep
    canonical = tuple((labels, exp) for _, labels, exp in best)
    return ReplicaMonomial(factors=canonical, n_replicas=n)


def _canonical_two_factors(factors, n) -> ReplicaMonomial:
    """Closed-form lexicographic minimum for exactly two distinct factor
    sets: the (size, exponent)-minimal factor takes labels {1..m}, the other
    shares the lowest `a` labels and continues contiguously."""
    (set1, exp1), (set2, exp2) = factors
    if (len(set1), exp1) > (len(set2), exp2):
        set1, exp1, set2, exp2 = set2, exp2, set1, exp1
    a = len(set1 & set2)
    m1, m2 = len(set1), len(set2)
    first = tuple(range(1, m1 + 1))
    second = tuple(range(1, a + 1)) + tuple(range(m1 + 1, m1 + m2 - a + 1))
    canonical = tuple(sorted(((first, exp1), (second, exp2)),
                             key=lambda f: (len(f[0]), f[0], f[1])))
    return ReplicaMonomial(factors=canonical, n_replicas=n)


def shared_pattern(r: int, s: int, a: int, pow_r: int, pow_s: int) -> ReplicaMonomial:
    """q_{2r}^pow_r * q_{2s}^pow_s with exactly `a` replica labels in common
    (2r + 2s - a distinct replicas in total)."""
    if r < 1 or s < 1:
        raise ValidationError("r and s must be >= 1")
    if not 0 <= a <= min(2 * r, 2 * s):
        raise ValidationError(f"sharing a = {a} outside [0, min(2r,2s) = {min(2*r, 2*s)}]")
    first = tuple(range(1, 2 * r + 1))
    second = tuple(range(2 * r - a + 1, 2 * r - a + 2 * s + 1))
    return canonicalize([(first, pow_r), (second, pow_s)])


def monomial_product(*monomials) -> ReplicaMonomial:
    """Product of monomials whose labels refer to the same replica space."""
    raw = []
    for m in monomials:
        raw.extend(m.factors)
    return canonicalize(raw)


def literal_monomial(raw) -> ReplicaMonomial:
    """Monomial keeping the given labels verbatim (no relabeling), for
    contexts where labels carry meaning, e.g. test functions of the first s
    replicas. Identical factor sets are still merged."""
    merged = {}
    for labels, exp in raw:
        labels = tuple(labels)
        if not labels:
            raise ValidationError("empty multi-overlap factor")
        key = frozenset(int(x) for x in labels)
        if len(key) != len(labels):
            raise ValidationError(f"replica labels repeated within one factor: {labels}")
        if int(exp) != exp or exp < 1:
            raise ValidationError(f"factor exponent must be an integer >= 1, got {exp}")
        merged[key] = merged.get(key, 0) + int(exp)
    factors = tuple(sorted(((tuple(sorted(k)), e) for k, e in merged.items()),
                           key=lambda f: (len(f[0]), f[0], f[1])))
    n = max((max(labels) for labels, _ in factors), default=0)
    return ReplicaMonomial(factors=factors, n_replicas=n)


@dataclass(frozen=True)
class ReducedMonomial:
    """The exact correlator expansion of one monomial.

    Omega(monomial) = (1/N^k) * sum over site tuples (i_1..i_k) of
    prod over groups of omega(xor of one-hot masks at the group's slots)^count,
    where a group collects replicas with identical slot lists.
    """

    n_slots: int
    groups: tuple  # ((slot indices tuple, replica multiplicity), ...)

    def evaluate(self, tensor) -> float:
        n = tensor.n_sites
        k = self.n_slots
        if k == 0:
            return 1.0
        omega = tensor.omega_by_mask
        total = n ** k
        acc = 0.0
        for start in range(0, total, _EVAL_CHUNK):
            idx = np.arange(start, min(start + _EVAL_CHUNK, total), dtype=np.int64)
            onehots = []
            rem = idx
            for _ in range(k):
                onehots.append(np.left_shift(1, rem % n))
                rem = rem // n
            prod = np.ones(idx.shape[0])
            for slots, count in self.groups:
                mask = onehots[slots[0]].copy()
                for t in slots[1:]:
                    mask ^= onehots[t]
                vals = omega[mask]
                prod *= vals if count == 1 else vals ** count
            acc += float(prod.sum())
        return acc / float(n) ** k


@lru_cache(maxsize=None)
def _reduce_cached(monomial: ReplicaMonomial, cap: int) -> ReducedMonomial:
    slots_by_replica = {r: [] for r in range(1, monomial.n_replicas + 1)}
    slot = 0
    for labels, exp in monomial.factors:
        for _ in range(exp):
            for r in labels:
                slots_by_replica[r].append(slot)
            slot += 1
    if slot > cap:
        raise CapacityError(
            f"reduction needs {slot} site indices, above the cap {cap} "
            f"(cost N^k per realization)"
        )
    groups = Counter(tuple(v) for v in slots_by_replica.values())
    ordered = tuple(sorted(groups.items()))
    return ReducedMonomial(n_slots=slot, groups=ordered)


def reduce_to_correlators(monomial: ReplicaMonomial, n_sites: int,
                          cap: int = DEFAULT_REDUCTION_CAP) -> ReducedMonomial:
    """Expand Omega(monomial) into the (1/N^k) correlator sum; the returned
    object evaluates against any CorrelationTensor of the same width."""
    del n_sites  # the reduction itself is size-independent
    return _reduce_cached(monomial, cap)


@dataclass
class OverlapEstimate:
    value: float
    stderr: float
    n_realizations: int
    backend: str
    per_realization: np.ndarray = None


@dataclass(frozen=True)
class ExactMomentTask:
    reduction: ReducedMonomial
    primitive_names = ("value",)

    def evaluate_realization(self, spec, seed, index):
        realization = sample_disorder(spec, seed)
        tensor = correlation_tensor(realization, spec.beta)
        return np.array([self.reduction.evaluate(tensor)])

    def combine(self, means):
        return {"value": float(means[0])}


@dataclass(frozen=True)
class McMomentTask:
    monomial: ReplicaMonomial
    n_chains: int
    chain_config: object
    primitive_names = ("value", "chain_var")

    def evaluate_realization(self, spec, seed, index):
        from .sampler import derive_chain_seed, mc_estimate_monomial
        realization = sample_disorder(spec, seed)
        cfg = dataclasses.replace(self.chain_config, seed=derive_chain_seed(seed, 0))
        value, stderr = mc_estimate_monomial(realization, spec.beta, self.monomial,
                                             self.n_chains, cfg)
        return np.array([value, stderr ** 2])

    def combine(self, means):
        return {"value": float(means[0]), "chain_var": float(means[1])}


def estimate(monomial: ReplicaMonomial, spec: ModelSpec,
             ens: quench.EnsembleSpec) -> OverlapEstimate:
    """Quenched average <monomial> over ens.n_realizations disorder samples.

    Exact backend: correlator reduction against one enumeration pass per
    realization. MC backend: independent chains per replica on the same
    realization; disorder jackknife combined in quadrature with the mean
    per-chain blocking error.
    """
    ens.validate()
    if ens.backend == "exact":
        task = ExactMomentTask(reduce_to_correlators(monomial, spec.n_sites))
        result = quench.run_ensemble(task, spec, ens)
        return OverlapEstimate(value=result.outputs["value"],
                               stderr=result.stderrs["value"],
                               n_realizations=ens.n_realizations,
                               backend="exact",
                               per_realization=result.values[:, 0])
    from .sampler import ChainConfig
    cfg = ens.chain_config if ens.chain_config is not None else ChainConfig()
    task = McMomentTask(monomial, max(monomial.n_replicas, 1), cfg)
    result = quench.run_ensemble(task, spec, ens)
    chain_part = result.outputs["chain_var"] / ens.n_realizations
    stderr = float(np.sqrt(result.stderrs["value"] ** 2 + chain_part))
    return OverlapEstimate(value=result.outputs["value"], stderr=stderr,
                           n_realizations=ens.n_realizations, backend="mc",
                           per_realization=result.values[:, 0])


_FACTOR_RE = re.compile(r"q\{(\d+(?:,\d+)*)\}(?:\^(\d+))?$")


def format_monomial(m: ReplicaMonomial) -> str:
    if not m.factors:
        return "1"
    parts = []
    for labels, exp in m.factors:
        body = "q{" + ",".join(str(x) for x in labels) + "}"
        parts.append(body if exp == 1 else f"{body}^{exp}")
    return "*".join(parts)


def parse_monomial(text: str, canonical: bool = True) -> ReplicaMonomial:
    """Parse the CLI syntax, e.g. 'q{1,2}^2*q{1,3}^2'. With canonical=False
    the labels are kept verbatim (needed for phi test functions, where
    labels name specific replicas)."""
    text = text.strip()
    if text == "1":
        return canonicalize([])
    raw = []
    for part in text.split("*"):
        match = _FACTOR_RE.match(part)
        if not match:
            raise ValidationError(f"cannot parse monomial factor {part!r}")
        labels = tuple(int(x) for x in match.group(1).split(","))
        exp = int(match.group(2)) if match.group(2) else 1
        raw.append((labels, exp))
    return canonicalize(raw) if canonical else literal_monomial(raw)
