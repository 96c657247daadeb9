"""
Parametrized local circuits: gate definitions, brick-wall layouts,
application to matrix product states and to dense statevectors.
"""
import json
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import torch

from .exceptions import CircuitError, DimensionError
from .mps import DEFAULT_CUTOFF

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
GATE_KINDS = ("rz", "general_two_qubit")
PARAM_COUNTS = {"rz": 1, "general_two_qubit": 16}
SITE_COUNTS = {"rz": 1, "general_two_qubit": 2}


def _hermitian_basis():
    """
    Sixteen Hermitian 4x4 matrices spanning all Hermitian generators

    Order: the four diagonal entries, then for each upper-triangle pair
    (0,1), (0,2), (0,3), (1,2), (1,3), (2,3) the real and imaginary parts.
    """
    basis = []
    for k in range(4):
        element = np.zeros((4, 4), dtype=np.complex128)
        element[k, k] = 1.0
        basis.append(element)
    for i in range(4):
        for j in range(i + 1, 4):
            real = np.zeros((4, 4), dtype=np.complex128)
            real[i, j] = real[j, i] = 1.0
            imag = np.zeros((4, 4), dtype=np.complex128)
            imag[i, j] = 1j
            imag[j, i] = -1j
            basis.extend([real, imag])
    return np.stack(basis)


HERMITIAN_BASIS = _hermitian_basis()


@dataclass(frozen=True, eq=False)
class GateSpec:
    """One gate: its kind, the sites it acts on and its real parameters"""
    kind: str
    sites: tuple
    params: np.ndarray

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"Unknown gate kind {self.kind!r}")
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))
        object.__setattr__(self, "params", np.array(self.params, dtype=np.float64).reshape(-1))
        if len(self.params) != PARAM_COUNTS[self.kind]:
            raise CircuitError(f"{self.kind} takes {PARAM_COUNTS[self.kind]} parameters, got {len(self.params)}")
        if len(self.sites) != SITE_COUNTS[self.kind]:
            raise CircuitError(f"{self.kind} acts on {SITE_COUNTS[self.kind]} site(s), got {self.sites}")
        if len(self.sites) == 2 and self.sites[1] != self.sites[0] + 1:
            raise CircuitError(f"Two-qubit gates must act on adjacent sites, got {self.sites}")

    @property
    def n_params(self):
        return len(self.params)

    def with_params(self, params):
        return GateSpec(self.kind, self.sites, params)

    def to_dict(self):
        return {"kind": self.kind, "sites": list(self.sites), "params": [float(p) for p in self.params]}


def materialize(gate):
    """
    Unitary matrix of a gate

    rz(theta) = diag(exp(-i theta / 2), exp(+i theta / 2));
    general_two_qubit(p) = exp(-i H(p)) with H = sum_k p_k HERMITIAN_BASIS[k].

    Args:
        gate (GateSpec): Gate to build

    Returns:
        np.ndarray: 2x2 or 4x4 unitary
    """
    if gate.kind == "rz":
        theta = gate.params[0]
        return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])
    generator = np.einsum("k,kij->ij", gate.params, HERMITIAN_BASIS)
    return scipy.linalg.expm(-1j * generator)


def materialize_torch(kind, params):
    """
    Differentiable version of `materialize`

    Args:
        kind (str): Gate kind
        params (torch.Tensor): Real parameters of the gate

    Returns:
        torch.Tensor: complex128 unitary
    """
    if kind == "rz":
        phase = torch.exp(0.5j * params[0].to(torch.complex128))
        return torch.diag(torch.stack([phase.conj(), phase]))
    if kind != "general_two_qubit":
        raise CircuitError(f"Unknown gate kind {kind!r}")
    basis = torch.from_numpy(HERMITIAN_BASIS)
    generator = torch.einsum("k,kij->ij", params.to(torch.complex128), basis)
    return torch.linalg.matrix_exp(-1j * generator)


class Circuit:
    """
    Ordered layers of gates acting on a chain of qubits

    Gates inside a layer act on pairwise disjoint sites. Circuits are
    immutable; `with_parameters` returns a new circuit.
    """

    def __init__(self, n_sites, layers):
        """
        Args:
            n_sites (int): Chain length
            layers (list): Sequence of layers, each a sequence of GateSpec
        """
        self.n_sites = int(n_sites)
        self.layers = tuple(tuple(layer) for layer in layers)
        self._validate()

    def _validate(self):
        for depth, layer in enumerate(self.layers):
            used = set()
            for gate in layer:
                if min(gate.sites) < 0 or max(gate.sites) >= self.n_sites:
                    raise CircuitError(f"Gate on {gate.sites} outside chain of {self.n_sites} sites")
                overlap = used.intersection(gate.sites)
                if overlap:
                    raise CircuitError(f"Layer {depth} has overlapping gates on site(s) {sorted(overlap)}")
                used.update(gate.sites)

    @property
    def depth(self):
        return len(self.layers)

    def gates(self):
        """Gates in application order: layer by layer, left to right inside a layer"""
        for layer in self.layers:
            yield from sorted(layer, key=lambda gate: gate.sites[0])

    @property
    def n_params(self):
        return sum(gate.n_params for gate in self.gates())

    def parameters(self):
        """
        Flat parameter vector in gate application order

        Returns:
            np.ndarray: float64 parameters
        """
        params = [gate.params for gate in self.gates()]
        return np.concatenate(params) if params else np.zeros(0)

    def parameter_slices(self):
        """(gate, slice into the flat vector) pairs in application order"""
        slices = []
        offset = 0
        for gate in self.gates():
            slices.append((gate, slice(offset, offset + gate.n_params)))
            offset += gate.n_params
        return slices

    def with_parameters(self, params):
        """
        Same layout with new parameter values

        Args:
            params (array-like): Flat vector of length n_params

        Returns:
            Circuit: New circuit
        """
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise CircuitError(f"Expected {self.n_params} parameters, got shape {params.shape}")
        replaced = {id(gate): gate.with_params(params[sl]) for gate, sl in self.parameter_slices()}
        return Circuit(self.n_sites, [[replaced[id(gate)] for gate in layer] for layer in self.layers])

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "n_sites": self.n_sites,
            "layers": [[gate.to_dict() for gate in sorted(layer, key=lambda g: g.sites[0])] for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise CircuitError(f"Unsupported circuit format version {version}")
        layers = [
            [GateSpec(gate["kind"], tuple(gate["sites"]), gate["params"]) for gate in layer]
            for layer in data["layers"]
        ]
        return cls(data["n_sites"], layers)

    def save(self, path):
        """Write the circuit as JSON; floats are stored with round-trip precision"""
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)
        logger.info(f"Saved depth-{self.depth} circuit with {self.n_params} parameters to {path}")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def brick_wall(n_sites, depth, kind="general_two_qubit"):
    """
    Brick-wall circuit with all parameters zero

    Two-qubit layers alternate between even bonds (0,1), (2,3), ... and odd
    bonds (1,2), (3,4), ..., starting with even. For kind "rz" each layer is
    one z rotation per site.

    Args:
        n_sites (int): Chain length
        depth (int): Number of layers
        kind (str): Gate kind

    Returns:
        Circuit: Circuit with zero parameters (identity map)
    """
    if depth < 0:
        raise CircuitError(f"Depth must be non-negative, got {depth}")
    if kind not in GATE_KINDS:
        raise CircuitError(f"Unknown gate kind {kind!r}")

    layers = []
    for layer_index in range(depth):
        if kind == "rz":
            layers.append([GateSpec("rz", (site,), [0.0]) for site in range(n_sites)])
        else:
            start = layer_index % 2
            layers.append([
                GateSpec(kind, (site, site + 1), np.zeros(PARAM_COUNTS[kind]))
                for site in range(start, n_sites - 1, 2)
            ])
    return Circuit(n_sites, layers)


def rz_layer(n_sites, angles=None):
    """
    Depth-one circuit of z rotations

    Args:
        n_sites (int): Chain length
        angles (array-like, optional): One angle per site, zero if omitted

    Returns:
        Circuit: Single rz layer
    """
    circuit = brick_wall(n_sites, 1, kind="rz")
    return circuit if angles is None else circuit.with_parameters(angles)


def apply_circuit(circuit, psi, cutoff=DEFAULT_CUTOFF, max_rank=None, strict=False):
    """
    Apply a circuit to an MPS, truncating after every two-qubit gate

    Args:
        circuit (Circuit): Gates to apply
        psi (MatrixProductState): Input state
        cutoff (float): Largest discarded weight per decomposition
        max_rank (int, optional): Bond cap, defaults to psi.max_bond
        strict (bool): Raise NumericError on a non-unitary gate instead of warning

    Returns:
        tuple: (evolved MatrixProductState, accumulated truncation error)
    """
    if circuit.n_sites != psi.n_sites:
        raise DimensionError(f"Circuit acts on {circuit.n_sites} sites, state has {psi.n_sites}")

    state = psi
    total_error = 0.0
    for gate in circuit.gates():
        matrix = materialize(gate)
        if len(gate.sites) == 1:
            state = state.apply_single_site_gate(matrix, gate.sites[0], strict=strict)
        else:
            state = state.apply_two_qubit_gate(matrix, gate.sites[0], cutoff=cutoff, max_rank=max_rank, strict=strict)
            total_error += state.last_truncation_error
    return state, total_error


def apply_circuit_dense(circuit, state, theta=None):
    """
    Apply a circuit to a dense statevector without truncation

    Every operation is a torch op, so the output is differentiable with
    respect to `theta` and `state`.

    Args:
        circuit (Circuit): Gate layout (and parameters if theta is None)
        state (torch.Tensor): complex128 vector of length 2^N
        theta (torch.Tensor, optional): Flat float64 parameters overriding the circuit's

    Returns:
        torch.Tensor: Output statevector
    """
    if state.shape != (2 ** circuit.n_sites,):
        raise DimensionError(f"State of shape {tuple(state.shape)} does not match {circuit.n_sites} sites")
    if theta is None:
        theta = torch.from_numpy(circuit.parameters())

    for gate, sl in circuit.parameter_slices():
        matrix = materialize_torch(gate.kind, theta[sl])
        first = gate.sites[0]
        width = matrix.shape[0]
        blocks = state.reshape(2 ** first, width, -1)
        state = torch.einsum("ab,xbz->xaz", matrix, blocks).reshape(-1)
    return state
