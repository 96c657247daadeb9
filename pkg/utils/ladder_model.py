"""
Two-leg triangular ladder with ring exchange, written as a zigzag chain:

    H = J1 sum_j S_j.S_{j+1} + J2 sum_j S_j.S_{j+2}
        + (Jr / 2) sum_j (P_{j,j+1,j+3,j+2} + P^dagger_{j,j+1,j+3,j+2})

Ground states come from sparse exact diagonalization in the S^z = 0 sector.
Open boundaries: a term is included only if all its sites lie in [0, N).
"""
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from joblib import Memory

from .exceptions import SolverError
from .mps import DEFAULT_CUTOFF, DEFAULT_MAX_BOND, MatrixProductState, basis_configurations, compress_dense

logger = logging.getLogger(__name__)

MAX_SITES = 20
ENUMERATION_LIMIT = 12
RESIDUAL_TOLERANCE = 1e-8
DENSE_SOLVER_LIMIT = 256

memory = Memory(os.environ.get("POSITIVIZE_CACHE_DIR"), verbose=0)


@dataclass(frozen=True)
class LadderModel:
    """Couplings of the ladder; sites follow the zigzag chain order"""
    n_sites: int
    j1: float = 1.0
    j2: float = 0.0
    jr: float = 0.0

    def __post_init__(self):
        if self.n_sites < 2 or self.n_sites % 2:
            raise ValueError(f"n_sites must be even and at least 2, got {self.n_sites}")
        if self.n_sites > MAX_SITES:
            raise ValueError(f"n_sites {self.n_sites} exceeds the exact-diagonalization cap of {MAX_SITES}")
        if self.jr != 0.0 and self.n_sites < 4:
            raise ValueError("The ring-exchange term needs at least 4 sites")

    def bonds(self):
        """(i, j, J) pairs of the Heisenberg terms present under open boundaries"""
        pairs = [(j, j + 1, self.j1) for j in range(self.n_sites - 1)]
        pairs += [(j, j + 2, self.j2) for j in range(self.n_sites - 2)]
        return [(i, k, coupling) for i, k, coupling in pairs if coupling != 0.0]

    def plaquettes(self):
        """Ordered site tuples (j, j+1, j+3, j+2) of the ring-exchange terms"""
        if self.jr == 0.0:
            return []
        return [(j, j + 1, j + 3, j + 2) for j in range(self.n_sites - 3)]


@dataclass(frozen=True, eq=False)
class GroundStateResult:
    """Lowest eigenpair of a ladder Hamiltonian, embedded in the full 2^N space"""
    model: LadderModel
    energy: float
    state: np.ndarray = field(repr=False)
    degeneracy_gap: float
    residual: float

    def metadata(self):
        return {
            "model": asdict(self.model),
            "energy": self.energy,
            "degeneracy_gap": self.degeneracy_gap,
            "residual": self.residual,
        }

    def to_mps(self, cutoff=DEFAULT_CUTOFF, max_bond=DEFAULT_MAX_BOND):
        return compress_dense(self.state, cutoff=cutoff, max_rank=max_bond)


def sector_basis(n_sites, sector="sz0"):
    """
    Sorted basis indices of a magnetization sector

    Args:
        n_sites (int): Number of spins
        sector (str): "sz0" for total S^z = 0, "full" for the whole space

    Returns:
        np.ndarray: int64 basis indices
    """
    states = np.arange(2 ** n_sites, dtype=np.int64)
    if sector == "full":
        return states
    if sector != "sz0":
        raise ValueError(f"Unknown sector {sector!r}")
    down_count = basis_configurations(n_sites).sum(axis=1)
    return states[down_count == n_sites // 2]


def _site_masks(n_sites):
    return [np.int64(1) << np.int64(n_sites - 1 - i) for i in range(n_sites)]


def _permute_bits(states, masks, order, source):
    """Move the bit at masks[source[k]] to masks[order[k]] for each k"""
    cleared = states.copy()
    for site in order:
        cleared &= ~masks[site]
    moved = cleared
    for target, origin in zip(order, source):
        moved |= np.where(states & masks[origin], masks[target], np.int64(0))
    return moved


def build_hamiltonian(model, sector="full"):
    """
    Sparse Hamiltonian of the ladder

    The ring operator acts on the ordered tuple (a, b, c, d) = (j, j+1, j+3, j+2)
    as P|x_a, x_b, x_c, x_d> = |x_d, x_a, x_b, x_c>.

    Args:
        model (LadderModel): Couplings and size
        sector (str): "full" (2^N) or "sz0" (S^z = 0 block)

    Returns:
        scipy.sparse.csr_matrix: Real symmetric Hamiltonian on the chosen basis
    """
    n = model.n_sites
    states = sector_basis(n, sector)
    dim = len(states)
    masks = _site_masks(n)
    positions = np.arange(dim, dtype=np.int64)

    rows, cols, values = [], [], []
    diagonal = np.zeros(dim)

    def add(targets, amplitude):
        rows.append(np.searchsorted(states, targets))
        cols.append(positions)
        values.append(np.full(dim, amplitude))

    for i, k, coupling in model.bonds():
        aligned = ((states & masks[i]) != 0) == ((states & masks[k]) != 0)
        diagonal += np.where(aligned, 0.25 * coupling, -0.25 * coupling)
        flipped = states[~aligned] ^ masks[i] ^ masks[k]
        rows.append(np.searchsorted(states, flipped))
        cols.append(positions[~aligned])
        values.append(np.full(len(flipped), 0.5 * coupling))

    for a, b, c, d in model.plaquettes():
        forward = _permute_bits(states, masks, (a, b, c, d), (d, a, b, c))
        backward = _permute_bits(states, masks, (a, b, c, d), (b, c, d, a))
        add(forward, 0.5 * model.jr)
        add(backward, 0.5 * model.jr)

    rows.append(positions)
    cols.append(positions)
    values.append(diagonal)

    hamiltonian = scipy.sparse.coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()
    logger.debug(f"Built {sector} Hamiltonian for {model}: dim {dim}, nnz {hamiltonian.nnz}")
    return hamiltonian


def fix_global_phase(state):
    """
    Rotate the global phase so the largest-magnitude amplitude is real positive

    Args:
        state (np.ndarray): Statevector

    Returns:
        np.ndarray: Rephased complex copy
    """
    state = np.asarray(state, dtype=np.complex128)
    pivot = state[np.argmax(np.abs(state))]
    if pivot == 0:
        return state.copy()
    return state * (np.conj(pivot) / abs(pivot))


@memory.cache
def _solve_sector(model, maxiter):
    hamiltonian = build_hamiltonian(model, sector="sz0")
    dim = hamiltonian.shape[0]

    if dim <= DENSE_SOLVER_LIMIT:
        energies, vectors = np.linalg.eigh(hamiltonian.toarray())
    else:
        # Deterministic start vector keeps the eigenvector sign reproducible
        v0 = np.random.default_rng(dim).normal(size=dim)
        try:
            energies, vectors = scipy.sparse.linalg.eigsh(
                hamiltonian, k=2, which="SA", v0=v0, maxiter=maxiter, tol=0.0
            )
        except scipy.sparse.linalg.ArpackNoConvergence as e:
            residual = None
            if len(e.eigenvalues):
                residual = float(np.linalg.norm(hamiltonian @ e.eigenvectors[:, 0] - e.eigenvalues[0] * e.eigenvectors[:, 0]))
            raise SolverError(f"Lanczos did not converge for {model}", residual=residual)
        order = np.argsort(energies)
        energies, vectors = energies[order], vectors[:, order]

    vector = vectors[:, 0]
    residual = float(np.linalg.norm(hamiltonian @ vector - energies[0] * vector))
    gap = float(energies[1] - energies[0]) if len(energies) > 1 else float("nan")
    return float(energies[0]), vector, gap, residual


def ground_state(model, maxiter=10000):
    """
    Ground state of the ladder by sparse diagonalization of the S^z = 0 block

    Args:
        model (LadderModel): Couplings and size
        maxiter (int): Lanczos iteration limit

    Returns:
        GroundStateResult: Energy, phase-fixed full-space state, gap and residual
    """
    energy, vector, gap, residual = _solve_sector(model, maxiter)
    if residual > RESIDUAL_TOLERANCE:
        raise SolverError(f"Ground state residual {residual:.2e} above {RESIDUAL_TOLERANCE:.0e}", residual=residual)

    state = np.zeros(2 ** model.n_sites, dtype=np.complex128)
    state[sector_basis(model.n_sites, "sz0")] = vector
    state = fix_global_phase(state / np.linalg.norm(state))

    logger.info(f"Ground state of {model}: E = {energy:.12f}, gap = {gap:.3e}, residual = {residual:.1e}")
    return GroundStateResult(model=model, energy=energy, state=state, degeneracy_gap=gap, residual=residual)


def chain_sublattice(n_sites):
    """Even sites of the zigzag chain, one side of the nearest-neighbour bipartition"""
    return tuple(range(0, n_sites, 2))


def marshall_transform(state, sublattice):
    """
    Multiply each amplitude by (-1)^(number of down spins on the sublattice)

    Equivalent to diag(1, -1) on every sublattice site; the result is
    rephased so its largest amplitude is real positive.

    Args:
        state (np.ndarray): Length-2^N statevector
        sublattice (sequence): Site indices of sublattice A

    Returns:
        np.ndarray: Transformed statevector
    """
    state = np.asarray(state, dtype=np.complex128)
    n_sites = int(round(np.log2(len(state))))
    parity = basis_configurations(n_sites)[:, list(sublattice)].sum(axis=1) % 2
    return fix_global_phase(state * (1.0 - 2.0 * parity))


def _hard_sign_average(amplitudes, weights):
    weights = np.asarray(weights, dtype=np.float64)
    return float(np.sum(weights * np.sign(np.real(amplitudes))) / np.sum(weights))


def sign_statistics(batch):
    """
    Average hard sign over a sample batch with its standard error

    Args:
        batch (SampleBatch): Samples or a weighted enumeration

    Returns:
        tuple: (average sign, standard error); the error is 0 for weighted batches
    """
    signs = np.sign(np.real(batch.amplitudes))
    if batch.weights is not None:
        return _hard_sign_average(batch.amplitudes, batch.weights), 0.0
    mean = float(np.mean(signs))
    stderr = float(np.std(signs, ddof=1) / np.sqrt(len(signs))) if len(signs) > 1 else float("nan")
    return mean, stderr


def average_sign(psi, batch=None, n_samples=1000, rng_seed=0):
    """
    Born-weighted average of HardSign(Re psi(sigma)), with HardSign(0) = 0

    Dense vectors and MPS with N <= 12 are enumerated exactly, even when a
    batch is given; larger MPS use `batch` if given, otherwise `n_samples`
    fresh samples.

    Args:
        psi (np.ndarray or MatrixProductState): State to measure
        batch (SampleBatch, optional): Samples to estimate from
        n_samples (int): Sample count when sampling is needed
        rng_seed (int): Seed when sampling is needed

    Returns:
        float: Average sign in [-1, 1]
    """
    if isinstance(psi, MatrixProductState):
        if psi.n_sites > ENUMERATION_LIMIT:
            if batch is None:
                batch = psi.perfect_sample(n_samples, rng_seed)
            return sign_statistics(batch)[0]
        psi = psi.to_dense()
    psi = np.asarray(psi)
    return _hard_sign_average(psi, np.abs(psi) ** 2)
