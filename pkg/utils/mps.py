"""
Matrix product states: gate application with truncation, amplitudes,
bipartite entanglement, perfect sampling and on-disk storage.

Site tensors have axes (left bond, physical, right bond) with physical
extent 2; bit 0 is S^z = +1/2. Dense vectors use row-major order with
site 0 as the most significant bit.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .exceptions import DimensionError, NormalizationError, NumericError
from .tensor_ops import DTYPE, as_tensor, contract, svd_truncated

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_CUTOFF = 1e-6
DEFAULT_MAX_BOND = 256
SAMPLE_CHUNK = 4096
ENTROPY_CLAMP = 1e-12
NORM_TOLERANCE = 1e-8
UNITARITY_TOLERANCE = 1e-10


def basis_configurations(n_sites):
    """
    Enumerate the full computational basis in row-major order

    Args:
        n_sites (int): Number of spins

    Returns:
        np.ndarray: (2^n_sites, n_sites) array of bits
    """
    indices = np.arange(2 ** n_sites, dtype=np.int64)
    shifts = np.arange(n_sites - 1, -1, -1, dtype=np.int64)
    return ((indices[:, None] >> shifts) & 1).astype(np.uint8)


def configuration_indices(configurations):
    """
    Row-major basis index of each configuration

    Args:
        configurations (np.ndarray): (n, N) array of bits

    Returns:
        np.ndarray: (n,) int64 indices
    """
    configurations = np.asarray(configurations, dtype=np.int64)
    n_sites = configurations.shape[1]
    weights = np.left_shift(1, np.arange(n_sites - 1, -1, -1, dtype=np.int64))
    return configurations @ weights


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """
    Configurations drawn from |psi|^2 together with their amplitudes

    `weights` is None for i.i.d. samples (uniform 1/n); an explicit weight
    vector turns the batch into a weighted sum, e.g. the full basis weighted
    by |psi|^2.
    """
    configurations: np.ndarray
    amplitudes: np.ndarray
    weights: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.configurations)

    @property
    def n_sites(self):
        return self.configurations.shape[1]

    def indices(self):
        return configuration_indices(self.configurations)

    def normalized_weights(self):
        """Weights of each row, summing to one"""
        if self.weights is None:
            return np.full(len(self), 1.0 / len(self))
        return np.asarray(self.weights, dtype=np.float64) / np.sum(self.weights)

    @classmethod
    def enumerate(cls, psi):
        """
        The full basis as a batch weighted by the Born probabilities

        Args:
            psi (MatrixProductState or np.ndarray): State to enumerate

        Returns:
            SampleBatch: 2^N rows weighted by |psi(sigma)|^2
        """
        dense = psi.to_dense() if isinstance(psi, MatrixProductState) else np.asarray(psi, dtype=DTYPE)
        n_sites = int(np.log2(len(dense)))
        return cls(
            configurations=basis_configurations(n_sites),
            amplitudes=dense.copy(),
            weights=np.abs(dense) ** 2,
        )


class MatrixProductState:
    """
    Open-boundary matrix product state with optional orthogonality center

    Instances are treated as immutable: every operation returns a new state.
    """

    def __init__(self, sites, center=None, max_bond=DEFAULT_MAX_BOND, truncation_error=0.0):
        """
        Build a state from its site tensors

        Args:
            sites (list): Rank-3 tensors (left bond, 2, right bond)
            center (int, optional): Orthogonality center, None if not canonical
            max_bond (int): Bond dimension cap used by gate application
            truncation_error (float): Accumulated discarded weight of the history
        """
        self.sites = [as_tensor(site) for site in sites]
        self.center = None if center is None else int(center)
        self.max_bond = int(max_bond)
        self.truncation_error = float(truncation_error)
        self.last_truncation_error = 0.0
        self._validate()

    def _validate(self):
        if not self.sites:
            raise DimensionError("A matrix product state needs at least one site")
        for i, site in enumerate(self.sites):
            if site.ndim != 3 or site.shape[1] != 2:
                raise DimensionError(f"Site {i} has shape {site.shape}, expected (left, 2, right)")
            if i > 0 and self.sites[i - 1].shape[2] != site.shape[0]:
                raise DimensionError(f"Bond mismatch between sites {i - 1} and {i}")
        if self.sites[0].shape[0] != 1 or self.sites[-1].shape[2] != 1:
            raise DimensionError("Boundary bonds must have extent 1")
        if self.center is not None and not 0 <= self.center < len(self.sites):
            raise DimensionError(f"Center {self.center} outside chain of {len(self.sites)} sites")

    def __len__(self):
        return len(self.sites)

    @property
    def n_sites(self):
        return len(self.sites)

    @property
    def bond_dimensions(self):
        return [site.shape[2] for site in self.sites[:-1]]

    def _replace(self, sites, center, truncation_error=None):
        return MatrixProductState(
            sites,
            center=center,
            max_bond=self.max_bond,
            truncation_error=self.truncation_error if truncation_error is None else truncation_error,
        )

    def copy(self):
        return self._replace([site.copy() for site in self.sites], self.center)

    @classmethod
    def product_state(cls, bits, max_bond=DEFAULT_MAX_BOND):
        """
        Computational basis state |bits>

        Args:
            bits (sequence): 0/1 value per site

        Returns:
            MatrixProductState: Bond-dimension-1 state with center at site 0
        """
        sites = []
        for bit in bits:
            site = np.zeros((1, 2, 1), dtype=DTYPE)
            site[0, int(bit), 0] = 1.0
            sites.append(site)
        return cls(sites, center=0, max_bond=max_bond)

    @classmethod
    def random(cls, n_sites, bond_dim, rng=None, max_bond=DEFAULT_MAX_BOND):
        """
        Normalized random state with bonds capped at bond_dim

        Args:
            n_sites (int): Number of sites
            bond_dim (int): Largest internal bond dimension
            rng (np.random.Generator, optional): Random source

        Returns:
            MatrixProductState: Canonical state with center at the last site
        """
        rng = np.random.default_rng() if rng is None else rng
        dims = [1]
        for i in range(1, n_sites):
            dims.append(min(bond_dim, 2 ** i, 2 ** (n_sites - i)))
        dims.append(1)
        sites = [
            rng.normal(size=(dims[i], 2, dims[i + 1])) + 1j * rng.normal(size=(dims[i], 2, dims[i + 1]))
            for i in range(n_sites)
        ]
        return cls(sites, max_bond=max_bond).move_center(n_sites - 1).normalize()

    # ------------------------------------------------------------------
    # Canonical form
    # ------------------------------------------------------------------

    def move_center(self, site):
        """
        Gauge the state so that `site` is the orthogonality center

        Tensors left of the center become left-orthonormal, tensors right of
        it right-orthonormal (QR sweeps). The represented state is unchanged.

        Args:
            site (int): New center

        Returns:
            MatrixProductState: Re-gauged state
        """
        if not 0 <= site < self.n_sites:
            raise DimensionError(f"Center {site} outside chain of {self.n_sites} sites")
        sites = [s.copy() for s in self.sites]

        start_left = 0 if self.center is None else min(self.center, site)
        for i in range(start_left, site):
            left, phys, right = sites[i].shape
            q, r = np.linalg.qr(sites[i].reshape(left * phys, right))
            sites[i] = q.reshape(left, phys, q.shape[1])
            sites[i + 1] = contract(r, sites[i + 1], [(1, 0)])

        start_right = self.n_sites - 1 if self.center is None else max(self.center, site)
        for i in range(start_right, site, -1):
            left, phys, right = sites[i].shape
            q, r = np.linalg.qr(sites[i].reshape(left, phys * right).T)
            sites[i] = q.T.reshape(q.shape[1], phys, right)
            sites[i - 1] = contract(sites[i - 1], r.T, [(2, 0)])

        return self._replace(sites, site)

    def norm(self):
        """
        Euclidean norm of the represented vector

        Returns:
            float: sqrt(<psi|psi>)
        """
        if self.center is not None:
            return float(np.linalg.norm(self.sites[self.center]))
        env = np.ones((1, 1), dtype=DTYPE)
        for site in self.sites:
            env = np.einsum("ab,asc,bsd->cd", env, site.conj(), site, optimize=True)
        return float(np.sqrt(abs(env[0, 0])))

    def normalize(self):
        """
        Rescale to unit norm

        Returns:
            MatrixProductState: Normalized state, canonical with a center
        """
        state = self if self.center is not None else self.move_center(0)
        norm = state.norm()
        if norm == 0.0 or not np.isfinite(norm):
            raise NormalizationError(f"Cannot normalize a state with norm {norm}")
        sites = list(state.sites)
        sites[state.center] = sites[state.center] / norm
        return state._replace(sites, state.center)

    def is_canonical(self, tol=1e-10):
        """
        Check the left/right orthonormality implied by the center

        Args:
            tol (float): Largest tolerated deviation from the identity

        Returns:
            bool: True if all tensors satisfy their gauge condition
        """
        if self.center is None:
            return False
        for i, site in enumerate(self.sites):
            if i < self.center:
                gram = np.einsum("asb,asc->bc", site.conj(), site)
            elif i > self.center:
                gram = np.einsum("asb,csb->ac", site, site.conj())
            else:
                continue
            if np.max(np.abs(gram - np.eye(gram.shape[0]))) > tol:
                return False
        return True

    # ------------------------------------------------------------------
    # Amplitudes
    # ------------------------------------------------------------------

    def to_dense(self):
        """
        Contract the chain into a statevector

        Returns:
            np.ndarray: Length-2^N complex vector, site 0 most significant
        """
        vector = self.sites[0].reshape(2, -1)
        for site in self.sites[1:]:
            vector = contract(vector, site, [(1, 0)]).reshape(-1, site.shape[2])
        return vector.reshape(-1)

    def amplitude(self, sigma):
        """
        Overlap <sigma|psi> by transfer-matrix contraction

        Args:
            sigma (sequence): 0/1 value per site

        Returns:
            complex: Amplitude of the configuration
        """
        if len(sigma) != self.n_sites:
            raise DimensionError(f"Configuration has {len(sigma)} sites, state has {self.n_sites}")
        vector = np.ones(1, dtype=DTYPE)
        for site, bit in zip(self.sites, sigma):
            vector = vector @ site[:, int(bit), :]
        return complex(vector[0])

    def amplitudes(self, configurations):
        """
        Batched <sigma_j|psi> for each row of `configurations`

        Args:
            configurations (np.ndarray): (n, N) array of bits

        Returns:
            np.ndarray: (n,) complex amplitudes
        """
        configurations = np.asarray(configurations)
        if configurations.ndim != 2 or configurations.shape[1] != self.n_sites:
            raise DimensionError(f"Configurations of shape {configurations.shape} do not match {self.n_sites} sites")
        vectors = np.ones((len(configurations), 1), dtype=DTYPE)
        for i, site in enumerate(self.sites):
            vectors = np.einsum("na,anb->nb", vectors, site[:, configurations[:, i], :])
        return vectors[:, 0]

    # ------------------------------------------------------------------
    # Gates
    # ------------------------------------------------------------------

    def _check_unitary(self, gate, strict):
        deviation = np.max(np.abs(gate.conj().T @ gate - np.eye(gate.shape[0])))
        if not deviation <= UNITARITY_TOLERANCE:
            message = f"Gate deviates from unitarity by {deviation:.2e}"
            if strict:
                raise NumericError(message)
            logger.warning(message)

    def apply_single_site_gate(self, gate, site, strict=False):
        """
        Apply a 2x2 gate to one site

        A unitary gate preserves the gauge condition of the tensor it acts on,
        so the orthogonality center is unchanged.

        Args:
            gate (np.ndarray): 2x2 matrix
            site (int): Target site
            strict (bool): Raise instead of warning on non-unitary gates

        Returns:
            MatrixProductState: Evolved state
        """
        gate = as_tensor(gate)
        if gate.shape != (2, 2):
            raise DimensionError(f"Single-site gate must be 2x2, got {gate.shape}")
        if not 0 <= site < self.n_sites:
            raise DimensionError(f"Site {site} outside chain of {self.n_sites} sites")
        self._check_unitary(gate, strict)

        sites = list(self.sites)
        sites[site] = np.einsum("ts,asb->atb", gate, sites[site])
        return self._replace(sites, self.center)

    def apply_two_qubit_gate(self, gate, site, cutoff=DEFAULT_CUTOFF, max_rank=None, strict=False):
        """
        Apply a 4x4 gate to sites (site, site + 1) and restore MPS form

        The gate acts on the pair basis index 2 * s_left + s_right. The two-site
        tensor is split with `svd_truncated`; the kept singular values are
        renormalized and the new center is site + 1.

        Args:
            gate (np.ndarray): 4x4 unitary
            site (int): Left site of the pair
            cutoff (float): Largest discarded weight per decomposition
            max_rank (int, optional): Bond cap, defaults to the state's max_bond
            strict (bool): Raise instead of warning on non-unitary gates

        Returns:
            MatrixProductState: Evolved, normalized state; `last_truncation_error`
            holds the weight discarded by this gate
        """
        gate = as_tensor(gate)
        if gate.shape != (4, 4):
            raise DimensionError(f"Two-qubit gate must be 4x4, got {gate.shape}")
        if not 0 <= site < self.n_sites - 1:
            raise DimensionError(f"Gate on ({site}, {site + 1}) outside chain of {self.n_sites} sites")
        self._check_unitary(gate, strict)
        max_rank = self.max_bond if max_rank is None else max_rank

        state = self if self.center == site else self.move_center(site)
        left, right = state.sites[site], state.sites[site + 1]
        theta = contract(left, right, [(2, 0)])
        theta = np.einsum("uvst,astb->auvb", gate.reshape(2, 2, 2, 2), theta)

        result = svd_truncated(theta, split=2, cutoff=cutoff, max_rank=max_rank)
        weights = result.singular_values / np.linalg.norm(result.singular_values)

        sites = list(state.sites)
        sites[site] = result.left_isometry
        sites[site + 1] = weights[:, None, None] * result.right_isometry
        evolved = state._replace(sites, site + 1, state.truncation_error + result.truncation_error)
        evolved.last_truncation_error = result.truncation_error
        return evolved

    # ------------------------------------------------------------------
    # Entanglement
    # ------------------------------------------------------------------

    def schmidt_values(self, bond):
        """
        Schmidt coefficients across the cut after the first `bond` sites

        Args:
            bond (int): Cut position in [1, N - 1]

        Returns:
            np.ndarray: Normalized singular values, descending
        """
        if not 1 <= bond <= self.n_sites - 1:
            raise DimensionError(f"Bond {bond} outside [1, {self.n_sites - 1}]")
        state = self.move_center(bond - 1)
        result = svd_truncated(state.sites[bond - 1], split=2, cutoff=0.0)
        values = result.singular_values
        return values / np.linalg.norm(values)

    def entanglement_entropy(self, bond=None):
        """
        Von Neumann entropy (natural log) of the left block of `bond` sites

        Args:
            bond (int, optional): Cut position, defaults to the equal bipartition

        Returns:
            float: -sum p log p with p the squared Schmidt values
        """
        bond = self.n_sites // 2 if bond is None else bond
        probabilities = self.schmidt_values(bond) ** 2
        return float(-np.sum(probabilities * np.log(np.maximum(probabilities, ENTROPY_CLAMP))))

    # ------------------------------------------------------------------
    # Sampling
    # ------------------------------------------------------------------

    def perfect_sample(self, n, rng_seed, n_jobs=1):
        """
        Draw i.i.d. configurations from |psi(sigma)|^2

        With the center on site 0 every tensor to the right is right-orthonormal,
        so the conditional p(sigma_i | sigma_<i) is the squared norm of the
        projected left environment. Sites are sampled left to right and each
        environment is renormalized after projection. Samples are produced in
        fixed-size chunks, chunk k using the k-th child of SeedSequence(rng_seed),
        so the batch does not depend on n_jobs.

        Args:
            n (int): Number of samples
            rng_seed (int): Seed for the random streams
            n_jobs (int): joblib workers

        Returns:
            SampleBatch: Configurations and their amplitudes
        """
        if n < 1:
            raise ValueError(f"Number of samples must be positive, got {n}")
        norm = self.norm()
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise NormalizationError(f"Cannot sample an unnormalized state (norm {norm:.12f})")

        state = self.move_center(0)
        chunk_sizes = [min(SAMPLE_CHUNK, n - start) for start in range(0, n, SAMPLE_CHUNK)]
        seeds = np.random.SeedSequence(rng_seed).spawn(len(chunk_sizes))

        if n_jobs == 1 or len(chunk_sizes) == 1:
            chunks = [_sample_chunk(state.sites, size, seed) for size, seed in zip(chunk_sizes, seeds)]
        else:
            chunks = Parallel(n_jobs=n_jobs)(
                delayed(_sample_chunk)(state.sites, size, seed) for size, seed in zip(chunk_sizes, seeds)
            )

        configurations = np.concatenate(chunks, axis=0)
        return SampleBatch(configurations=configurations, amplitudes=self.amplitudes(configurations))

    # ------------------------------------------------------------------
    # Storage
    # ------------------------------------------------------------------

    def save(self, path, metadata=None):
        """
        Write the state to a versioned .npz container

        Layout: `format_version`, `n_sites`, `center` (-1 if none), `max_bond`,
        `truncation_error`, `site_<i>` complex arrays, and an optional
        `metadata` JSON string. Values round-trip bit-exactly.

        Args:
            path (str): Destination file
            metadata (str, optional): JSON text stored alongside
        """
        arrays = {f"site_{i}": site for i, site in enumerate(self.sites)}
        np.savez(
            path,
            format_version=np.int64(FORMAT_VERSION),
            n_sites=np.int64(self.n_sites),
            center=np.int64(-1 if self.center is None else self.center),
            max_bond=np.int64(self.max_bond),
            truncation_error=np.float64(self.truncation_error),
            metadata=np.array(metadata or ""),
            **arrays,
        )
        logger.info(f"Saved {self.n_sites}-site MPS (bonds {self.bond_dimensions}) to {path}")

    @classmethod
    def load(cls, path):
        """
        Read a state written by `save`

        Args:
            path (str): Source file

        Returns:
            MatrixProductState: Stored state
        """
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != FORMAT_VERSION:
                raise ValueError(f"Unsupported MPS format version {version} in {path}")
            n_sites = int(data["n_sites"])
            center = int(data["center"])
            sites = [data[f"site_{i}"] for i in range(n_sites)]
            return cls(
                sites,
                center=None if center < 0 else center,
                max_bond=int(data["max_bond"]),
                truncation_error=float(data["truncation_error"]),
            )

    @staticmethod
    def load_metadata(path):
        with np.load(path, allow_pickle=False) as data:
            return str(data["metadata"])


def _sample_chunk(sites, size, seed):
    rng = np.random.default_rng(seed)
    uniforms = rng.random((size, len(sites)))
    configurations = np.empty((size, len(sites)), dtype=np.uint8)
    env = np.ones((size, 1), dtype=DTYPE)

    for i, site in enumerate(sites):
        projected = np.einsum("na,asb->nsb", env, site)
        weights = np.sum(np.abs(projected) ** 2, axis=2)
        p_zero = weights[:, 0] / np.sum(weights, axis=1)
        bits = (uniforms[:, i] >= p_zero).astype(np.uint8)
        configurations[:, i] = bits
        env = projected[np.arange(size), bits, :]
        env = env / np.linalg.norm(env, axis=1, keepdims=True)

    return configurations


def compress_dense(state, cutoff=DEFAULT_CUTOFF, max_rank=DEFAULT_MAX_BOND):
    """
    Convert a statevector into an MPS by a left-to-right SVD sweep

    Args:
        state (np.ndarray): Length-2^N vector, site 0 most significant
        cutoff (float): Largest discarded weight per decomposition
        max_rank (int): Bond cap

    Returns:
        MatrixProductState: Normalized state with center at the last site
    """
    state = np.asarray(state, dtype=DTYPE).reshape(-1)
    n_sites = int(round(np.log2(len(state))))
    if 2 ** n_sites != len(state) or n_sites < 1:
        raise DimensionError(f"State length {len(state)} is not a power of two")
    norm = np.linalg.norm(state)
    if norm == 0.0:
        raise NormalizationError("Cannot compress the zero vector")
    if abs(norm - 1.0) > NORM_TOLERANCE:
        logger.warning(f"Input vector has norm {norm:.6f}, normalizing before compression")
    state = state / norm

    sites = []
    total_error = 0.0
    remainder = state.reshape(1, -1)
    for _ in range(n_sites - 1):
        bond = remainder.shape[0]
        result = svd_truncated(remainder.reshape(bond, 2, -1), split=2, cutoff=cutoff, max_rank=max_rank)
        sites.append(result.left_isometry)
        remainder = result.singular_values[:, None] * result.right_matrix()
        total_error += result.truncation_error
    sites.append(remainder.reshape(remainder.shape[0], 2, 1))

    compressed = MatrixProductState(sites, center=n_sites - 1, max_bond=max_rank, truncation_error=total_error)
    logger.debug(f"Compressed {n_sites}-site vector, bonds {compressed.bond_dimensions}, error {total_error:.2e}")
    return compressed.normalize()
