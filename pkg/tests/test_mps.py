"""Tests for the matrix product state engine."""
import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import embed, random_unitary, random_vector
from utils.exceptions import DimensionError, NormalizationError, NumericError
from utils.mps import (
    MatrixProductState,
    SampleBatch,
    basis_configurations,
    compress_dense,
    configuration_indices,
)

HADAMARD = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])


def test_product_state_amplitudes():
    psi = MatrixProductState.product_state([0, 1, 1, 0])
    assert psi.amplitude([0, 1, 1, 0]) == pytest.approx(1.0)
    assert psi.amplitude([0, 0, 1, 0]) == 0.0
    dense = psi.to_dense()
    assert dense[0b0110] == 1.0
    assert np.count_nonzero(dense) == 1


def test_amplitude_rejects_wrong_length():
    with pytest.raises(DimensionError):
        MatrixProductState.product_state([0, 0]).amplitude([0, 0, 0])


def test_basis_ordering_is_row_major():
    configs = basis_configurations(3)
    assert configs[5].tolist() == [1, 0, 1]
    np.testing.assert_array_equal(configuration_indices(configs), np.arange(8))


def test_random_state_is_normalized_and_canonical(rng):
    psi = MatrixProductState.random(6, 4, rng)
    assert psi.norm() == pytest.approx(1.0, abs=1e-12)
    assert psi.is_canonical()
    assert max(psi.bond_dimensions) <= 4


def test_move_center_keeps_state(rng):
    psi = MatrixProductState.random(5, 3, rng)
    for site in (0, 2, 4):
        moved = psi.move_center(site)
        assert moved.center == site
        assert moved.is_canonical()
        np.testing.assert_allclose(moved.to_dense(), psi.to_dense(), atol=1e-12)


def test_batched_amplitudes_agree_with_single(rng):
    psi = MatrixProductState.random(5, 4, rng)
    configs = basis_configurations(5)[::3]
    batched = psi.amplitudes(configs)
    for config, value in zip(configs, batched):
        assert value == pytest.approx(psi.amplitude(config), abs=1e-13)
    np.testing.assert_allclose(batched, psi.to_dense()[configuration_indices(configs)], atol=1e-13)


def test_two_qubit_gate_matches_dense(rng):
    psi = MatrixProductState.random(6, 8, rng)
    gate = random_unitary(4, rng)
    evolved = psi.apply_two_qubit_gate(gate, 2, cutoff=0.0)

    expected = embed(gate, 2, 6) @ psi.to_dense()
    assert abs(np.vdot(expected, evolved.to_dense())) == pytest.approx(1.0, abs=1e-10)
    assert evolved.center == 3
    assert evolved.is_canonical()
    assert evolved.last_truncation_error == 0.0


def test_truncated_gate_error_bounded(rng):
    psi = MatrixProductState.random(8, 16, rng)
    for site in range(7):
        psi = psi.apply_two_qubit_gate(random_unitary(4, rng), site, cutoff=1e-6)
        assert psi.last_truncation_error <= 1e-6
    assert psi.norm() == pytest.approx(1.0, abs=1e-12)


def test_max_bond_caps_dimension(rng):
    psi = MatrixProductState.random(6, 8, rng)
    evolved = psi.apply_two_qubit_gate(random_unitary(4, rng), 2, cutoff=0.0, max_rank=2)
    assert evolved.bond_dimensions[2] == 2
    assert evolved.last_truncation_error > 0.0


def test_single_site_gate_matches_dense(rng):
    psi = MatrixProductState.random(4, 4, rng)
    gate = random_unitary(2, rng)
    evolved = psi.apply_single_site_gate(gate, 1)
    np.testing.assert_allclose(evolved.to_dense(), embed(gate, 1, 4) @ psi.to_dense(), atol=1e-12)
    assert evolved.center == psi.center


def test_non_unitary_gate_strict():
    psi = MatrixProductState.product_state([0, 0])
    with pytest.raises(NumericError):
        psi.apply_two_qubit_gate(2 * np.eye(4), 0, strict=True)


def test_bell_pair_entropy():
    psi = MatrixProductState.product_state([0, 0])
    psi = psi.apply_single_site_gate(HADAMARD, 0)
    psi = psi.apply_two_qubit_gate(CNOT, 0, cutoff=0.0)
    assert psi.entanglement_entropy() == pytest.approx(np.log(2), abs=1e-10)
    np.testing.assert_allclose(psi.schmidt_values(1), [2 ** -0.5, 2 ** -0.5], atol=1e-12)


def test_product_state_has_zero_entropy():
    assert MatrixProductState.product_state([0, 1, 0, 1]).entanglement_entropy() == pytest.approx(0.0, abs=1e-14)


def test_perfect_sampler_fidelity():
    psi = MatrixProductState.random(6, 4, np.random.default_rng(7))
    probabilities = np.abs(psi.to_dense()) ** 2
    n = 100_000
    batch = psi.perfect_sample(n, rng_seed=11)

    counts = np.bincount(batch.indices(), minlength=64)
    total_variation = 0.5 * np.sum(np.abs(counts / n - probabilities))
    assert total_variation < 0.02

    expected = probabilities * n
    frequent = expected >= 5
    observed = np.append(counts[frequent], counts[~frequent].sum())
    expected = np.append(expected[frequent], expected[~frequent].sum())
    if observed[-1] == 0 and expected[-1] < 1e-9:
        observed, expected = observed[:-1], expected[:-1]
    assert chisquare(observed, expected * observed.sum() / expected.sum()).pvalue > 0.001


def test_sampler_amplitudes_and_reproducibility(rng):
    psi = MatrixProductState.random(5, 4, rng)
    first = psi.perfect_sample(500, rng_seed=3)
    second = psi.perfect_sample(500, rng_seed=3)
    np.testing.assert_array_equal(first.configurations, second.configurations)
    np.testing.assert_allclose(first.amplitudes, psi.amplitudes(first.configurations))
    assert first.weights is None


def test_sampler_independent_of_workers(rng):
    psi = MatrixProductState.random(4, 4, rng)
    serial = psi.perfect_sample(9000, rng_seed=5, n_jobs=1)
    parallel = psi.perfect_sample(9000, rng_seed=5, n_jobs=2)
    np.testing.assert_array_equal(serial.configurations, parallel.configurations)


def test_sampling_unnormalized_state_fails():
    sites = [2.0 * np.ones((1, 2, 1)), np.ones((1, 2, 1))]
    with pytest.raises(NormalizationError):
        MatrixProductState(sites).perfect_sample(10, rng_seed=0)


def test_enumerated_batch_weights(rng):
    vector = random_vector(3, rng)
    batch = SampleBatch.enumerate(vector)
    assert len(batch) == 8
    np.testing.assert_allclose(batch.normalized_weights(), np.abs(vector) ** 2)


def test_save_load_is_bit_exact(tmp_path, rng):
    psi = MatrixProductState.random(5, 4, rng)
    path = tmp_path / "state.npz"
    psi.save(str(path), metadata='{"energy": -1.5}')

    loaded = MatrixProductState.load(str(path))
    assert loaded.center == psi.center
    for original, restored in zip(psi.sites, loaded.sites):
        np.testing.assert_array_equal(original, restored)
    assert MatrixProductState.load_metadata(str(path)) == '{"energy": -1.5}'


def test_compress_dense_round_trip(rng):
    vector = random_vector(6, rng)
    psi = compress_dense(vector, cutoff=0.0)
    np.testing.assert_allclose(psi.to_dense(), vector, atol=1e-12)
    assert psi.center == 5


def test_compress_dense_rejects_bad_length():
    with pytest.raises(DimensionError):
        compress_dense(np.ones(6) / np.sqrt(6))


def test_entropy_matches_reduced_density_matrix(rng):
    psi = MatrixProductState.random(6, 4, rng)
    dense = psi.to_dense()
    for bond in range(1, 6):
        block = dense.reshape(2 ** bond, -1)
        probabilities = np.linalg.eigvalsh(block @ block.conj().T)
        probabilities = probabilities[probabilities > 1e-14]
        expected = -np.sum(probabilities * np.log(probabilities))
        assert psi.entanglement_entropy(bond) == pytest.approx(expected, abs=1e-10)


def test_entropy_is_gauge_invariant(rng):
    psi = MatrixProductState.random(6, 4, rng)
    reference = psi.entanglement_entropy()
    for center in range(6):
        assert psi.move_center(center).entanglement_entropy() == pytest.approx(reference, abs=1e-12)


def test_compress_dense_finds_minimal_bonds():
    basis_state = np.zeros(2 ** 5)
    basis_state[0] = 1.0
    assert compress_dense(basis_state, cutoff=1e-12).bond_dimensions == [1, 1, 1, 1]

    ghz = np.zeros(2 ** 5)
    ghz[[0, -1]] = 2 ** -0.5
    psi = compress_dense(ghz, cutoff=1e-12)
    assert psi.bond_dimensions == [2, 2, 2, 2]
    np.testing.assert_allclose(psi.to_dense(), ghz, atol=1e-12)


def test_swap_exchanges_product_state():
    swap = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]])
    psi = MatrixProductState.product_state([0, 1]).apply_two_qubit_gate(swap, 0)
    assert psi.amplitude([1, 0]) == pytest.approx(1.0, abs=1e-12)
    assert psi.amplitude([0, 1]) == pytest.approx(0.0, abs=1e-12)
    assert psi.last_truncation_error == pytest.approx(0.0, abs=1e-14)
