import numpy as np
import pytest
import scipy.stats

from multioverlap.errors import ValidationError
from multioverlap.model import (CouplingTerm, DisorderRealization, ModelSpec,
                                PerturbationSpec, energy,
                                merge_perturbation_params, realization_seed,
                                sample_disorder)


def test_alpha_zero_gives_empty_coupling_list():
    spec = ModelSpec(n_sites=10, beta=1.0, alpha=0.0)
    assert sample_disorder(spec, 123).couplings == ()


def test_single_site_all_couplings_on_site_one():
    spec = ModelSpec(n_sites=1, beta=1.0, alpha=2.0)
    realization = sample_disorder(spec, 5)
    assert len(realization.couplings) > 0
    for c in realization.couplings:
        assert c.sites == (1, 1)


def test_mean_coupling_count_matches_poisson_mean():
    spec = ModelSpec(n_sites=10, beta=1.0, alpha=2.0)
    counts = [len(sample_disorder(spec, seed).couplings) for seed in range(10_000)]
    mean = np.mean(counts)
    stderr = np.sqrt(20.0 / len(counts))
    assert abs(mean - 20.0) < 3 * stderr


def test_energy_direct_sum():
    realization = DisorderRealization(
        (CouplingTerm(1, (1, 2)), CouplingTerm(-1, (2, 3))), 0, 3)
    assert energy(realization, np.ones(3)) == 0.0


def test_energy_empty_couplings_is_zero():
    realization = DisorderRealization((), 0, 4)
    for config in (np.ones(4), -np.ones(4)):
        assert energy(realization, config) == 0.0


def test_energy_self_pair_contributes_constant():
    realization = DisorderRealization((CouplingTerm(1, (2, 2)),), 0, 3)
    config = np.array([1.0, -1.0, 1.0])
    assert energy(realization, config) == -1.0
    assert energy(realization, -config) == -1.0


def test_energy_site_out_of_range():
    realization = DisorderRealization((CouplingTerm(1, (1, 7)),), 0, 3)
    with pytest.raises(ValidationError):
        energy(realization, np.ones(3))


def test_merge_perturbation_params_arithmetic():
    rate, prob, scale = merge_perturbation_params(1.0, 0.5, 1.0, 1.0, 10, 1.0)
    assert rate == pytest.approx(1.05)
    assert prob == pytest.approx(0.5 / 10.5)
    assert scale == 1.0


def test_merge_perturbation_no_perturbation():
    rate, prob, scale = merge_perturbation_params(2.0, 0.0, 1.0, 0.7, 16, 0.3)
    assert rate == 2.0 and prob == 0.0


def test_merge_perturbation_beta_zero_errors():
    with pytest.raises(ValidationError):
        merge_perturbation_params(1.0, 0.5, 0.0, 1.0, 10, 1.0)


def test_merged_recipe_matches_two_source_sampling():
    # distributional identity: one Poisson stream with rescaled-sign mixture
    # vs base + perturbation streams, compared on total and scaled counts
    alpha, alpha_p, beta, beta_p, n, t = 1.0, 0.5, 1.0, 0.7, 10, 1.0
    rate, prob, scale = merge_perturbation_params(alpha, alpha_p, beta, beta_p, n, t)
    draws = 10_000
    rng = np.random.default_rng(7)
    merged_total = rng.poisson(rate * n, size=draws)
    merged_scaled = rng.binomial(merged_total, prob)
    base = rng.poisson(alpha * n, size=draws)
    pert = rng.poisson(alpha_p * t, size=draws)
    direct_total = base + pert

    diff_total = merged_total.mean() - direct_total.mean()
    sigma_total = np.sqrt(2 * rate * n / draws)
    assert abs(diff_total) < 4 * sigma_total

    diff_scaled = merged_scaled.mean() - pert.mean()
    sigma_scaled = np.sqrt(2 * alpha_p * t / draws)
    assert abs(diff_scaled) < 4 * sigma_scaled


def test_sign_symmetry():
    spec = ModelSpec(n_sites=10, beta=1.0, alpha=1500.0)
    realization = sample_disorder(spec, 21)
    signs = np.array([c.sign for c in realization.couplings])
    assert signs.size >= 10_000
    assert abs(signs.mean()) <= 4.0 / np.sqrt(signs.size)


def test_site_uniformity_chi_square():
    spec = ModelSpec(n_sites=10, beta=1.0, alpha=10_000.0)
    realization = sample_disorder(spec, 3)
    sites = np.concatenate([np.array(c.sites) for c in realization.couplings])
    assert sites.size >= 100_000
    histogram = np.bincount(sites, minlength=11)[1:]
    _, p_value = scipy.stats.chisquare(histogram)
    assert p_value > 0.001


def test_determinism_identical_spec_and_seed():
    spec = ModelSpec(n_sites=12, beta=0.5, alpha=2.0,
                     perturbations=(PerturbationSpec(2, 0.5, 0.3),))
    assert sample_disorder(spec, 99) == sample_disorder(spec, 99)
    assert repr(sample_disorder(spec, 99)) == repr(sample_disorder(spec, 99))


def test_realization_seeds_distinct_and_stable():
    seeds = [realization_seed(5, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert seeds == [realization_seed(5, i) for i in range(100)]


def test_perturbation_scale_carries_strength_ratio():
    spec = ModelSpec(n_sites=6, beta=2.0, alpha=0.0,
                     perturbations=(PerturbationSpec(2, 50.0, 0.5, weight=0.8),))
    realization = sample_disorder(spec, 1)
    assert len(realization.couplings) > 0
    for c in realization.couplings:
        assert c.strength_scale == pytest.approx(0.8 * 0.5 / 2.0)


def test_beta_zero_with_live_perturbation_rejected():
    with pytest.raises(ValidationError):
        ModelSpec(n_sites=6, beta=0.0, alpha=1.0,
                  perturbations=(PerturbationSpec(2, 0.5, 0.7),))


def test_beta_zero_with_zero_strength_perturbation_allowed():
    spec = ModelSpec(n_sites=6, beta=0.0, alpha=1.0,
                     perturbations=(PerturbationSpec(2, 0.5, 0.0),))
    realization = sample_disorder(spec, 4)
    for c in realization.couplings:
        assert c.strength_scale in (0.0, 1.0)


def test_multi_arity_weight_normalization_enforced():
    ModelSpec(n_sites=4, beta=1.0, alpha=1.0,
              interactions=((2, np.sqrt(0.5)), (3, np.sqrt(0.5))))
    with pytest.raises(ValidationError):
        ModelSpec(n_sites=4, beta=1.0, alpha=1.0, interactions=((2, 1.0), (3, 1.0)))


def test_single_arity_weight_must_be_one():
    with pytest.raises(ValidationError):
        ModelSpec(n_sites=4, beta=1.0, alpha=1.0, interactions=((2, 0.5),))
