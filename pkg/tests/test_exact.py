import math
import time

import numpy as np
import pytest

from oracles import naive_log_partition
from multioverlap.errors import CapacityError, ValidationError
from multioverlap.exact import (correlation_tensor, gibbs_weights, log_partition,
                                quenched_pressure, walsh_hadamard)
from multioverlap.model import (CouplingTerm, DisorderRealization, ModelSpec,
                                realization_seed, sample_disorder)


def _realization(couplings, n):
    return DisorderRealization(tuple(couplings), 0, n)


def test_walsh_hadamard_matches_popcount_formula():
    rng = np.random.default_rng(0)
    v = rng.normal(size=64)
    w = walsh_hadamard(v)
    for k in (0, 1, 7, 33, 63):
        direct = sum(v[j] * (-1) ** bin(j & k).count("1") for j in range(64))
        assert w[k] == pytest.approx(direct, abs=1e-12)


def test_log_partition_free_spins():
    realization = _realization([], 6)
    assert log_partition(realization, 3.0) == pytest.approx(6 * math.log(2), abs=1e-12)


def test_log_partition_single_coupling():
    realization = _realization([CouplingTerm(1, (1, 3))], 5)
    expected = math.log(2 ** 5 * math.cosh(1.3))
    assert log_partition(realization, 1.3) == pytest.approx(expected, abs=1e-12)


def test_log_partition_self_pair_constant_shift():
    for sign in (1, -1):
        realization = _realization([CouplingTerm(sign, (2, 2))], 4)
        expected = 4 * math.log(2) + 0.7 * sign
        assert log_partition(realization, 0.7) == pytest.approx(expected, abs=1e-12)


def test_log_partition_stable_at_large_beta():
    spec = ModelSpec(n_sites=10, beta=8.0, alpha=2.0)
    realization = sample_disorder(spec, 2)
    value = log_partition(realization, 8.0)
    assert np.isfinite(value)
    assert value == pytest.approx(naive_log_partition(realization, 8.0), abs=1e-9)


def test_correlations_independent_spins():
    realization = _realization([CouplingTerm(1, (1, 2))], 4)
    tensor = correlation_tensor(realization, 0.0, [(1, 2), (1, 1), (3,)])
    assert tensor.omega((1, 2)) == 0.0
    assert tensor.omega((1, 1)) == 1.0  # mod-2 reduction to the empty set
    assert tensor.omega((3,)) == 0.0


def test_two_spin_closed_form():
    realization = _realization([CouplingTerm(1, (1, 2))], 2)
    tensor = correlation_tensor(realization, 0.9, [(1, 2)])
    assert tensor.omega((1, 2)) == pytest.approx(math.tanh(0.9), abs=1e-12)


def test_even_arity_odd_correlators_vanish():
    spec = ModelSpec(n_sites=8, beta=1.2, alpha=2.0)
    realization = sample_disorder(spec, 11)
    tensor = correlation_tensor(realization, 1.2)
    popcount = np.array([bin(m).count("1") for m in range(1 << 8)])
    odd = tensor.omega_by_mask[popcount % 2 == 1]
    assert np.max(np.abs(odd)) < 1e-12


def test_correlator_bound():
    spec = ModelSpec(n_sites=8, beta=2.0, alpha=3.0)
    realization = sample_disorder(spec, 8)
    tensor = correlation_tensor(realization, 2.0)
    assert np.max(np.abs(tensor.omega_by_mask)) <= 1.0 + 1e-12


def test_gauge_flip_invariance_on_gauge_flippable_instances():
    # every tuple contains site 1 an odd number of times, so flipping spin 1
    # absorbs a global sign flip of the couplings and Z is invariant
    rng = np.random.default_rng(5)
    couplings = [CouplingTerm(int(s), (1, int(j)))
                 for s, j in zip(rng.choice((-1, 1), 12), rng.integers(2, 7, 12))]
    realization = _realization(couplings, 6)
    flipped = _realization([CouplingTerm(-c.sign, c.sites) for c in couplings], 6)
    assert log_partition(realization, 1.1) == pytest.approx(
        log_partition(flipped, 1.1), abs=1e-12)


def test_quenched_pressure_free_cases():
    value, stderr = quenched_pressure(ModelSpec(n_sites=10, beta=1.0, alpha=0.0), 3, 1)
    assert value == pytest.approx(math.log(2), abs=1e-12) and stderr == 0.0
    value, stderr = quenched_pressure(ModelSpec(n_sites=6, beta=0.0, alpha=2.0), 3, 1)
    assert value == pytest.approx(math.log(2), abs=1e-12) and stderr == 0.0


def test_quenched_pressure_against_naive_double_loop():
    spec = ModelSpec(n_sites=8, beta=1.0, alpha=2.0)
    for i in range(40):
        realization = sample_disorder(spec, realization_seed(17, i))
        fast = log_partition(realization, spec.beta) / spec.n_sites
        naive = naive_log_partition(realization, spec.beta) / spec.n_sites
        assert abs(fast - naive) < 1e-10


def test_quenched_pressure_requires_two_realizations():
    with pytest.raises(ValidationError):
        quenched_pressure(ModelSpec(n_sites=4, beta=1.0, alpha=1.0), 1, 0)


def test_enumeration_cap():
    realization = _realization([], 21)
    with pytest.raises(CapacityError):
        log_partition(realization, 1.0)
    realization = _realization([], 12)
    with pytest.raises(CapacityError):
        correlation_tensor(realization, 1.0, cap=10)


def test_gibbs_weights_uniform_at_beta_zero():
    spec = ModelSpec(n_sites=6, beta=0.0, alpha=2.0)
    p = gibbs_weights(sample_disorder(spec, 3), 0.0)
    assert np.all(p == 1.0 / 64)


def test_pair_correlators_at_n16_within_time_budget():
    spec = ModelSpec(n_sites=16, beta=1.0, alpha=2.0)
    realization = sample_disorder(spec, 4)
    sets = [(i,) for i in range(1, 17)]
    sets += [(i, j) for i in range(1, 17) for j in range(i + 1, 17)]
    start = time.time()
    tensor = correlation_tensor(realization, 1.0, sets)
    elapsed = time.time() - start
    assert elapsed < 10.0
    assert len(tensor.entries) == len(sets) + 1
