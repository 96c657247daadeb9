"""Tests for gate definitions, circuit layouts and both application paths."""
import numpy as np
import pytest
import scipy.linalg
import torch

from conftest import embed, random_vector
from utils.circuit import (
    HERMITIAN_BASIS,
    Circuit,
    GateSpec,
    apply_circuit,
    apply_circuit_dense,
    brick_wall,
    materialize,
    materialize_torch,
    rz_layer,
)
from utils.exceptions import CircuitError, DimensionError, NumericError
from utils.mps import MatrixProductState, compress_dense


def _random_circuit(n_sites, depth, kind, rng, scale=0.7):
    layout = brick_wall(n_sites, depth, kind)
    return layout.with_parameters(rng.normal(scale=scale, size=layout.n_params))


def _dense_reference(circuit, vector):
    for gate in circuit.gates():
        vector = embed(materialize(gate), gate.sites[0], circuit.n_sites) @ vector
    return vector


def test_gate_validation():
    with pytest.raises(CircuitError):
        GateSpec("cnot", (0, 1), [])
    with pytest.raises(CircuitError):
        GateSpec("rz", (0,), [0.1, 0.2])
    with pytest.raises(CircuitError):
        GateSpec("general_two_qubit", (0, 2), np.zeros(16))
    with pytest.raises(CircuitError):
        GateSpec("rz", (0, 1), [0.1])


def test_overlapping_gates_rejected():
    gates = [GateSpec("general_two_qubit", (0, 1), np.zeros(16)), GateSpec("general_two_qubit", (1, 2), np.zeros(16))]
    with pytest.raises(CircuitError):
        Circuit(4, [gates])
    with pytest.raises(CircuitError):
        Circuit(2, [[GateSpec("general_two_qubit", (1, 2), np.zeros(16))]])


def test_brick_wall_layout():
    circuit = brick_wall(6, 3)
    assert circuit.n_params == 128
    assert [gate.sites for gate in circuit.layers[0]] == [(0, 1), (2, 3), (4, 5)]
    assert [gate.sites for gate in circuit.layers[1]] == [(1, 2), (3, 4)]
    assert np.all(circuit.parameters() == 0.0)
    assert brick_wall(4, 0).n_params == 0


def test_zero_parameters_give_identity():
    assert np.allclose(materialize(GateSpec("general_two_qubit", (0, 1), np.zeros(16))), np.eye(4))
    assert np.allclose(materialize(GateSpec("rz", (0,), [0.0])), np.eye(2))


def test_hermitian_basis():
    assert HERMITIAN_BASIS.shape == (16, 4, 4)
    for element in HERMITIAN_BASIS:
        np.testing.assert_array_equal(element, element.conj().T)
    flat = HERMITIAN_BASIS.reshape(16, -1)
    assert np.linalg.matrix_rank(np.hstack([flat.real, flat.imag])) == 16


def test_general_gate_is_unitary_and_matches_expm(rng):
    params = rng.normal(size=16)
    gate = materialize(GateSpec("general_two_qubit", (0, 1), params))
    np.testing.assert_allclose(gate.conj().T @ gate, np.eye(4), atol=1e-12)
    generator = sum(p * b for p, b in zip(params, HERMITIAN_BASIS))
    np.testing.assert_allclose(gate, scipy.linalg.expm(-1j * generator), atol=1e-12)


def test_rz_matrix():
    theta = 0.8
    np.testing.assert_allclose(
        materialize(GateSpec("rz", (0,), [theta])),
        np.diag([np.exp(-0.4j), np.exp(0.4j)]),
    )


def test_torch_gates_match_numpy(rng):
    for kind, count in (("rz", 1), ("general_two_qubit", 16)):
        params = rng.normal(size=count)
        expected = materialize(GateSpec(kind, (0,) if kind == "rz" else (0, 1), params))
        actual = materialize_torch(kind, torch.from_numpy(params)).numpy()
        np.testing.assert_allclose(actual, expected, atol=1e-12)


def test_parameter_round_trip(rng):
    circuit = brick_wall(5, 2)
    values = rng.normal(size=circuit.n_params)
    np.testing.assert_array_equal(circuit.with_parameters(values).parameters(), values)
    with pytest.raises(CircuitError):
        circuit.with_parameters(values[:-1])


@pytest.mark.parametrize("n_sites", [4, 6, 8])
def test_mps_application_matches_dense_evolution(n_sites, rng):
    circuit = _random_circuit(n_sites, 2, "general_two_qubit", rng)
    vector = random_vector(n_sites, rng)
    psi = compress_dense(vector, cutoff=0.0)

    evolved, error = apply_circuit(circuit, psi, cutoff=0.0)
    expected = _dense_reference(circuit, vector)
    assert abs(np.vdot(expected, evolved.to_dense())) ** 2 >= 1 - 1e-10
    assert error == 0.0


def test_truncated_application_reports_error(rng):
    circuit = _random_circuit(8, 3, "general_two_qubit", rng, scale=1.0)
    psi = MatrixProductState.product_state([0, 1] * 4)
    evolved, error = apply_circuit(circuit, psi, cutoff=1e-6)
    assert 0.0 <= error <= 1e-6 * len(list(circuit.gates()))
    assert evolved.norm() == pytest.approx(1.0, abs=1e-12)


def test_dense_application_matches_reference(rng):
    circuit = _random_circuit(5, 3, "general_two_qubit", rng)
    vector = random_vector(5, rng)
    actual = apply_circuit_dense(circuit, torch.from_numpy(vector)).numpy()
    np.testing.assert_allclose(actual, _dense_reference(circuit, vector), atol=1e-12)


def test_rz_layer_application(rng):
    angles = rng.uniform(-np.pi, np.pi, size=4)
    circuit = rz_layer(4, angles)
    psi = MatrixProductState.random(4, 4, rng)
    evolved, _ = apply_circuit(circuit, psi)
    np.testing.assert_allclose(evolved.to_dense(), _dense_reference(circuit, psi.to_dense()), atol=1e-12)


def test_size_mismatch():
    with pytest.raises(DimensionError):
        apply_circuit(brick_wall(4, 1), MatrixProductState.product_state([0] * 6))
    with pytest.raises(DimensionError):
        apply_circuit_dense(brick_wall(4, 1), torch.zeros(8, dtype=torch.complex128))


def test_save_and_load(tmp_path, rng):
    circuit = _random_circuit(4, 2, "general_two_qubit", rng)
    path = tmp_path / "circuit.json"
    circuit.save(str(path))
    loaded = Circuit.load(str(path))
    assert loaded.depth == 2
    np.testing.assert_array_equal(loaded.parameters(), circuit.parameters())


def test_unknown_format_version():
    data = brick_wall(2, 1).to_dict()
    data["format_version"] = 99
    with pytest.raises(CircuitError):
        Circuit.from_dict(data)


def test_non_unitary_gate_strictness(monkeypatch, caplog):
    monkeypatch.setattr("utils.circuit.materialize", lambda gate: 1.1 * np.eye(2 ** len(gate.sites)))
    psi = MatrixProductState.product_state([0, 0])

    with pytest.raises(NumericError):
        apply_circuit(brick_wall(2, 1), psi, strict=True)

    apply_circuit(brick_wall(2, 1), psi)
    assert "deviates from unitarity" in caplog.text
