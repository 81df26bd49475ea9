import numpy as np
import pytest

from oracles import direct_replica_average
from multioverlap.errors import CapacityError, ValidationError
from multioverlap.exact import correlation_tensor
from multioverlap.model import (CouplingTerm, DisorderRealization, ModelSpec,
                                realization_seed, sample_disorder)
from multioverlap.moments import (canonicalize, estimate, format_monomial,
                                  monomial_product, parse_monomial,
                                  reduce_to_correlators, shared_pattern)
from multioverlap.quench import EnsembleSpec


def test_canonicalize_relabels_to_contiguous_range():
    mono = canonicalize([((3, 5), 2), ((5, 7), 2)])
    assert mono.n_replicas == 3
    assert mono == shared_pattern(1, 1, 1, 2, 2)


def test_canonicalize_label_order_irrelevant():
    assert canonicalize([((2, 1), 2)]) == canonicalize([((1, 2), 2)])


def test_canonicalize_merges_identical_factors():
    mono = canonicalize([((1, 2), 2), ((1, 2), 2)])
    assert mono.factors == (((1, 2), 4),)


def test_canonicalize_rejects_empty_factor_and_duplicates():
    with pytest.raises(ValidationError):
        canonicalize([((), 1)])
    with pytest.raises(ValidationError):
        canonicalize([((1, 1, 2), 1)])
    with pytest.raises(ValidationError):
        canonicalize([((1, 2), 0)])


def test_shared_pattern_examples():
    assert format_monomial(shared_pattern(1, 1, 0, 2, 2)) == "q{1,2}^2*q{3,4}^2"
    assert format_monomial(shared_pattern(1, 1, 2, 2, 2)) == "q{1,2}^4"
    disjoint = shared_pattern(1, 1, 1, 2, 2)
    assert format_monomial(disjoint) == "q{1,2}^2*q{1,3}^2"
    assert disjoint.n_replicas == 3


def test_shared_pattern_range_check():
    with pytest.raises(ValidationError):
        shared_pattern(1, 1, 3, 2, 2)


def test_reduction_shapes():
    red = reduce_to_correlators(parse_monomial("q{1,2}^2"), 8)
    assert red.n_slots == 2
    assert red.groups == (((0, 1), 2),)
    red = reduce_to_correlators(parse_monomial("q{1,2}^2*q{1,3}^2"), 8)
    assert red.n_slots == 4


def test_reduction_cap():
    with pytest.raises(CapacityError):
        reduce_to_correlators(parse_monomial("q{1,2}^4*q{1,3}^4"), 8)


def test_reduction_matches_direct_three_replica_enumeration():
    spec = ModelSpec(n_sites=4, beta=1.0, alpha=2.0)
    mono = parse_monomial("q{1,2}^2*q{1,3}^2")
    for seed in range(5):
        realization = sample_disorder(spec, realization_seed(2, seed))
        tensor = correlation_tensor(realization, spec.beta)
        fast = reduce_to_correlators(mono, 4).evaluate(tensor)
        assert fast == pytest.approx(
            direct_replica_average(realization, spec.beta, mono), abs=1e-12)


def test_magnetization_reduction():
    spec = ModelSpec(n_sites=4, beta=0.7, alpha=2.0,
                     interactions=((3, 1.0),))  # odd arity: nonzero omega(sigma_i)
    realization = sample_disorder(spec, 9)
    tensor = correlation_tensor(realization, spec.beta)
    m = parse_monomial("q{1}")
    value = reduce_to_correlators(m, 4).evaluate(tensor)
    singles = [tensor.omega((i,)) for i in range(1, 5)]
    assert value == pytest.approx(np.mean(singles), abs=1e-14)


def test_beta_zero_closed_forms_exact():
    for n in (4, 8, 16):
        spec = ModelSpec(n_sites=n, beta=0.0, alpha=2.0)
        ens = EnsembleSpec(n_realizations=2, master_seed=3)
        cases = {
            "q{1,2}^2": 1 / n,
            "q{1,2}^4": 3 / n ** 2 - 2 / n ** 3,
            "q{1,2}^2*q{3,4}^2": 1 / n ** 2,
            "q{1,2}^2*q{1,3}^2": 1 / n ** 2,
        }
        for text, expected in cases.items():
            est = estimate(parse_monomial(text), spec, ens)
            assert est.value == pytest.approx(expected, abs=1e-12)
            assert est.stderr == 0.0


def test_two_site_closed_form():
    realization = DisorderRealization((CouplingTerm(1, (1, 2)),), 0, 2)
    tensor = correlation_tensor(realization, 1.0)
    value = reduce_to_correlators(parse_monomial("q{1,2}^2"), 2).evaluate(tensor)
    assert value == pytest.approx((1 + np.tanh(1.0) ** 2) / 2, abs=1e-12)
    assert value == pytest.approx(0.79001, abs=5e-6)


def test_relabeling_invariance_of_estimates():
    spec = ModelSpec(n_sites=6, beta=1.0, alpha=2.0)
    ens = EnsembleSpec(n_realizations=3, master_seed=5)
    a = estimate(canonicalize([((1, 2), 2), ((2, 3), 2)]), spec, ens)
    b = estimate(canonicalize([((5, 9), 2), ((9, 4), 2)]), spec, ens)
    assert a.value == b.value


def test_omega_bounded_by_one_per_realization():
    spec = ModelSpec(n_sites=6, beta=1.5, alpha=3.0)
    monos = [parse_monomial(t) for t in ("q{1,2}^2", "q{1,2}^2*q{1,3}^2", "q{1}^2")]
    for seed in range(10):
        realization = sample_disorder(spec, realization_seed(11, seed))
        tensor = correlation_tensor(realization, spec.beta)
        for mono in monos:
            value = reduce_to_correlators(mono, 6).evaluate(tensor)
            assert abs(value) <= 1.0 + 1e-12


def test_monomial_text_round_trip():
    for text in ("q{1,2}^2", "q{1,2}^2*q{1,3}^2", "q{1}", "1", "q{1,2,3,4}^2"):
        assert format_monomial(parse_monomial(text)) == text
    with pytest.raises(ValidationError):
        parse_monomial("q{1,2)^2")


def test_monomial_product_merges_shared_labels():
    phi = parse_monomial("q{1,2}^2")
    combined = monomial_product(canonicalize([((1, 2), 2)]), phi)
    assert format_monomial(combined) == "q{1,2}^4"


def test_constant_monomial_estimates_to_one():
    spec = ModelSpec(n_sites=4, beta=1.0, alpha=2.0)
    est = estimate(parse_monomial("1"), spec, EnsembleSpec(2, 0))
    assert est.value == 1.0 and est.stderr == 0.0


def test_six_slot_reduction_matches_direct_enumeration():
    # the largest default reduction (k = 6 site slots) against the
    # replica-product oracle, e.g. a gg lhs term with phi = q12^2*q13^2
    mono = canonicalize([((2, 4), 2), ((1, 2), 2), ((1, 3), 2)])
    red = reduce_to_correlators(mono, 4)
    assert red.n_slots == 6
    spec = ModelSpec(n_sites=4, beta=1.0, alpha=2.0)
    for seed in range(3):
        realization = sample_disorder(spec, realization_seed(23, seed))
        tensor = correlation_tensor(realization, spec.beta)
        assert red.evaluate(tensor) == pytest.approx(
            direct_replica_average(realization, spec.beta, mono), abs=1e-12)


def test_chunked_evaluation_matches_single_pass(monkeypatch):
    from multioverlap import moments as moments_module
    mono = parse_monomial("q{1,2}^2*q{1,3}^2")
    red = reduce_to_correlators(mono, 6)
    spec = ModelSpec(n_sites=6, beta=1.0, alpha=2.0)
    realization = sample_disorder(spec, 77)
    tensor = correlation_tensor(realization, spec.beta)
    whole = red.evaluate(tensor)
    monkeypatch.setattr(moments_module, "_EVAL_CHUNK", 100)
    chunked = red.evaluate(tensor)
    assert chunked == pytest.approx(whole, abs=1e-13)
