"""Tests for the positivization cost and the corrected gradient estimator."""
import math

import numpy as np
import pytest
import torch

from conftest import random_vector
from utils.circuit import apply_circuit, apply_circuit_dense, brick_wall
from utils.cost_function import (
    CostParams,
    effective_cost,
    entanglement_entropy_dense,
    exact_cost,
    gradient,
    output_graph,
    sample_cost,
    sample_costs,
    soft_sign,
)
from utils.exceptions import ConfigError
from utils.mps import MatrixProductState, SampleBatch, basis_configurations, compress_dense


def _random_circuit(n_sites, depth, kind, rng, scale=0.5):
    layout = brick_wall(n_sites, depth, kind)
    if kind == "rz":
        return layout.with_parameters(rng.uniform(-np.pi, np.pi, size=layout.n_params))
    return layout.with_parameters(rng.normal(scale=scale, size=layout.n_params))


def _central_difference(function, theta, step):
    grad = np.zeros_like(theta)
    for k in range(len(theta)):
        shift = np.zeros_like(theta)
        shift[k] = step
        grad[k] = (function(theta + shift) - function(theta - shift)) / (2 * step)
    return grad


def test_cost_params_validation():
    with pytest.raises(ConfigError):
        CostParams(gamma=1.5)
    with pytest.raises(ConfigError):
        CostParams(beta=0.0)
    assert CostParams.from_dict(CostParams(beta=math.inf).to_dict()).beta == math.inf


def test_soft_sign_is_odd_and_bounded():
    x = np.linspace(-3, 3, 13)
    values = soft_sign(x, 10.0)
    np.testing.assert_allclose(values, -soft_sign(-x, 10.0), atol=1e-15)
    assert np.all(np.abs(values) < 1)
    assert soft_sign(0.0, 10.0) == 0.0
    assert soft_sign(0.3, 4.0) == pytest.approx(2 / (1 + math.exp(-1.2)) - 1)


def test_soft_sign_hard_limit():
    np.testing.assert_array_equal(soft_sign(np.array([-0.2, 0.0, 1e-9]), math.inf), [-1.0, 0.0, 1.0])
    assert torch.equal(soft_sign(torch.tensor([-1.0, 0.0]), math.inf), torch.tensor([-1.0, 0.0]))


def test_purely_imaginary_batch_costs_its_imaginary_part():
    configs = basis_configurations(2)
    batch = SampleBatch(configurations=configs, amplitudes=np.full(4, 0.5j))
    params = CostParams(gamma=1.0, alpha=0.0)
    assert sample_cost(None, batch, params) == pytest.approx(0.5)


def test_positive_state_reaches_cost_minimum():
    psi = MatrixProductState.product_state([0, 0, 0, 0])
    batch = psi.perfect_sample(200, rng_seed=1)
    params = CostParams(gamma=0.3, alpha=0.0, beta=math.inf)
    assert sample_cost(psi, batch, params) == pytest.approx(0.3 - 1.0)


def test_sample_cost_includes_entropy(rng):
    psi = MatrixProductState.random(4, 4, rng)
    batch = psi.perfect_sample(100, rng_seed=2)
    with_entropy = sample_cost(psi, batch, CostParams(alpha=0.5))
    without = sample_cost(psi, batch, CostParams(alpha=0.0))
    assert with_entropy - without == pytest.approx(0.5 * psi.entanglement_entropy())


def test_empty_batch_is_rejected():
    batch = SampleBatch(configurations=np.zeros((0, 2), dtype=int), amplitudes=np.zeros(0, dtype=complex))
    with pytest.raises(ValueError):
        sample_cost(None, batch, CostParams())
    with pytest.raises(ValueError):
        effective_cost(torch.zeros(0, dtype=torch.complex128), CostParams())


def test_dense_entropy_of_bell_pair():
    bell = torch.tensor([1, 0, 0, 1], dtype=torch.complex128) / math.sqrt(2)
    assert float(entanglement_entropy_dense(bell, 2)) == pytest.approx(math.log(2), abs=1e-10)


def test_entropy_gradient_matches_finite_differences(rng):
    circuit = _random_circuit(4, 2, "general_two_qubit", rng)
    state = torch.from_numpy(random_vector(4, rng))

    def entropy(theta):
        return entanglement_entropy_dense(apply_circuit_dense(circuit, state, theta), 4)

    theta = torch.tensor(circuit.parameters(), requires_grad=True)
    (analytic,) = torch.autograd.grad(entropy(theta), theta)

    def numeric_entropy(values):
        with torch.no_grad():
            return float(entropy(torch.from_numpy(values)))

    numeric = _central_difference(numeric_entropy, circuit.parameters(), 1e-6)
    np.testing.assert_allclose(analytic.numpy(), numeric, rtol=1e-5, atol=1e-8)


def test_corrected_gradient_equals_gradient_of_expected_cost(rng):
    psi_in = compress_dense(random_vector(4, rng), cutoff=0.0)
    circuit = _random_circuit(4, 2, "general_two_qubit", rng)
    params = CostParams(gamma=0.4, alpha=0.1, beta=1.0)

    with torch.no_grad():
        output = apply_circuit_dense(circuit, torch.from_numpy(psi_in.to_dense())).numpy()
    batch = SampleBatch.enumerate(output)

    grad, info = gradient(circuit, psi_in, batch, params)
    numeric = _central_difference(lambda theta: exact_cost(circuit, psi_in, params, theta), circuit.parameters(), 1e-5)
    np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-9)
    assert info["cost"] == pytest.approx(exact_cost(circuit, psi_in, params), abs=1e-12)

    naive, _ = gradient(circuit, psi_in, batch, params, correction=False)
    assert np.max(np.abs(naive - numeric)) > 1e-3 * np.max(np.abs(numeric))


@pytest.mark.parametrize("instance", range(20))
def test_effective_cost_gradient_check(instance):
    rng = np.random.default_rng(100 + instance)
    n_sites = int(rng.choice([2, 4, 6]))
    depth = int(rng.integers(1, 4))
    kind = "rz" if instance % 2 else "general_two_qubit"
    circuit = _random_circuit(n_sites, depth, kind, rng)
    psi_in = compress_dense(random_vector(n_sites, rng), cutoff=0.0)
    params = CostParams(gamma=float(rng.uniform(0.1, 0.9)), alpha=0.05, beta=5.0)

    psi_out, _ = apply_circuit(circuit, psi_in, cutoff=0.0)
    batch = psi_out.perfect_sample(64, rng_seed=instance)
    grad, _ = gradient(circuit, psi_in, batch, params)

    frozen = sample_costs(batch.amplitudes, params)

    def frozen_effective_cost(theta):
        with torch.no_grad():
            amplitudes, entropy = output_graph(circuit, psi_in, batch, params, torch.from_numpy(theta))
            value, _ = effective_cost(amplitudes, params, entropy, frozen_costs=frozen)
        return float(value)

    numeric = _central_difference(frozen_effective_cost, circuit.parameters(), 1e-6)
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-8)


def test_zero_parameter_circuit_has_empty_gradient():
    psi = MatrixProductState.product_state([0, 1])
    batch = psi.perfect_sample(10, rng_seed=0)
    grad, info = gradient(brick_wall(2, 0), psi, batch, CostParams(alpha=0.0))
    assert grad.shape == (0,)
    assert info["cost"] == pytest.approx(-0.5 * soft_sign(1.0, 10.0))


def test_exact_cost_agrees_with_enumerated_sample_cost(rng):
    psi_in = compress_dense(random_vector(4, rng), cutoff=0.0)
    circuit = _random_circuit(4, 1, "general_two_qubit", rng)
    params = CostParams(alpha=0.2)
    psi_out, _ = apply_circuit(circuit, psi_in, cutoff=0.0)
    expected = sample_cost(psi_out, SampleBatch.enumerate(psi_out), params)
    assert exact_cost(circuit, psi_in, params) == pytest.approx(expected, abs=1e-10)


def test_sampled_cost_agrees_with_enumeration(rng):
    psi = MatrixProductState.random(6, 4, rng)
    params = CostParams(gamma=0.5, alpha=0.0, beta=10.0)
    exact = sample_cost(psi, SampleBatch.enumerate(psi), params)

    batch = psi.perfect_sample(1_000_000, rng_seed=21)
    costs = sample_costs(batch.amplitudes, params)
    stderr = np.std(costs, ddof=1) / np.sqrt(len(costs))
    assert abs(sample_cost(psi, batch, params) - exact) <= 3 * stderr


def test_sampled_cost_variance_follows_clt(rng):
    psi = MatrixProductState.random(6, 4, rng)
    params = CostParams(gamma=0.5, alpha=0.0, beta=10.0)
    enumerated = SampleBatch.enumerate(psi)
    weights = enumerated.normalized_weights()
    costs = sample_costs(enumerated.amplitudes, params)
    variance = np.sum(weights * costs ** 2) - np.sum(weights * costs) ** 2

    n_samples, n_batches = 200, 200
    means = [sample_cost(psi, psi.perfect_sample(n_samples, rng_seed=seed), params) for seed in range(n_batches)]
    assert np.var(means, ddof=1) == pytest.approx(variance / n_samples, rel=0.3)
