"""
Positivization cost and its corrected stochastic gradient.

Per configuration the cost is

    C(sigma) = gamma |Im psi(sigma)| - (1 - gamma) SoftSign_beta(Re psi(sigma))

and the sampled objective adds alpha times the half-chain entanglement
entropy. Differentiating the sample mean alone misses the dependence of the
sampling distribution on the parameters, so gradients are taken of the
effective cost

    C*(sigma) = C(sigma) + 2 {C(sigma)}_ng log|psi(sigma)|

where {.}_ng is a detached (stop-gradient) value. Amplitudes on the
differentiated path come from an exact, untruncated contraction of the
input state with the circuit; the entropy is differentiated through the
singular values only.
"""
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .circuit import apply_circuit_dense
from .exceptions import ConfigError, NumericError
from .mps import MatrixProductState
from .tensor_ops import pairwise_sum, singular_value_gradient, svd_truncated

logger = logging.getLogger(__name__)

ENTROPY_CLAMP = 1e-12


@dataclass(frozen=True)
class CostParams:
    """Weights of the cost function and the per-iteration sample count"""
    gamma: float = 0.5
    alpha: float = 0.01
    beta: float = 10.0
    n_samples: int = 1000
    log_clamp: float = 1e-30

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if not self.beta > 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be positive, got {self.n_samples}")
        if not self.log_clamp > 0.0:
            raise ConfigError(f"log_clamp must be positive, got {self.log_clamp}")

    def to_dict(self):
        data = asdict(self)
        if math.isinf(self.beta):
            data["beta"] = "inf"
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if isinstance(data.get("beta"), str):
            data["beta"] = float(data["beta"])
        return cls(**data)


@dataclass
class CostReport:
    """Metrics of one training iteration"""
    iteration: int
    soft_cost: float
    hard_avg_sign: float
    imag_residual: float
    entropy: float
    grad_norm: float
    sign_stderr: float = 0.0
    truncation_error: float = 0.0
    alpha: float = 0.0
    clamped_amplitudes: int = 0

    def to_dict(self):
        return asdict(self)


def soft_sign(x, beta):
    """
    Smooth sign 2 / (1 + exp(-beta x)) - 1, evaluated as tanh(beta x / 2)

    beta = inf gives the hard sign with Sign(0) = 0. Accepts floats, numpy
    arrays and torch tensors.

    Args:
        x (float, np.ndarray or torch.Tensor): Argument
        beta (float): Inverse temperature

    Returns:
        Same type as x: values in (-1, 1)
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if torch.is_tensor(x):
        return torch.sign(x) if math.isinf(beta) else torch.tanh(0.5 * beta * x)
    x = np.asarray(x, dtype=np.float64)
    result = np.sign(x) if math.isinf(beta) else np.tanh(0.5 * beta * x)
    return float(result) if result.ndim == 0 else result


def sample_costs(amplitudes, params):
    """
    Per-configuration cost C(sigma) for numpy or torch amplitudes

    Args:
        amplitudes (np.ndarray or torch.Tensor): Complex amplitudes
        params (CostParams): Cost weights

    Returns:
        Same type as amplitudes: real costs
    """
    if torch.is_tensor(amplitudes):
        imag, real = amplitudes.imag.abs(), amplitudes.real
    else:
        amplitudes = np.asarray(amplitudes)
        imag, real = np.abs(amplitudes.imag), amplitudes.real
    return params.gamma * imag - (1.0 - params.gamma) * soft_sign(real, params.beta)


def sample_cost(psi_out, batch, params, bond=None):
    """
    Sampled cost: batch mean of C(sigma_j) plus alpha times the entanglement entropy

    Args:
        psi_out (MatrixProductState): Output state the batch was drawn from
        batch (SampleBatch): Samples (or weighted enumeration)
        params (CostParams): Cost weights
        bond (int, optional): Entropy cut, defaults to the equal bipartition

    Returns:
        float: Cost value
    """
    if len(batch) == 0:
        raise ValueError("Cannot evaluate the cost on an empty batch")
    costs = sample_costs(batch.amplitudes, params)
    value = float(pairwise_sum(batch.normalized_weights() * costs))
    if params.alpha:
        value += params.alpha * psi_out.entanglement_entropy(bond)
    return value


class SingularValues(torch.autograd.Function):
    """Singular values of a matrix, back-propagated with `singular_value_gradient`"""

    @staticmethod
    def forward(ctx, matrix):
        result = svd_truncated(matrix.detach().numpy(), split=1, cutoff=0.0)
        ctx.result = result
        return torch.from_numpy(result.singular_values.copy())

    @staticmethod
    def backward(ctx, upstream):
        return torch.from_numpy(singular_value_gradient(ctx.result, upstream.detach().numpy()))


def entanglement_entropy_dense(state, n_sites, bond=None):
    """
    Differentiable von Neumann entropy of a dense statevector

    Args:
        state (torch.Tensor): complex128 vector of length 2^N
        n_sites (int): Number of sites
        bond (int, optional): Number of sites in the left block, default N // 2

    Returns:
        torch.Tensor: Scalar entropy (natural log)
    """
    bond = n_sites // 2 if bond is None else bond
    singular_values = SingularValues.apply(state.reshape(2 ** bond, -1))
    probabilities = singular_values ** 2
    probabilities = probabilities / probabilities.sum()
    return -(probabilities * torch.log(torch.clamp(probabilities, min=ENTROPY_CLAMP))).sum()


def effective_cost(amplitudes, params, entropy=0.0, weights=None, frozen_costs=None, correction=True):
    """
    Differentiable effective cost

        sum_j w_j [C(sigma_j) + 2 {C(sigma_j)}_ng log|psi(sigma_j)|] + alpha S

    Its gradient is the corrected estimator of the gradient of the expected
    cost. With `correction=False` the second term is dropped, which gives the
    naive gradient of the sample mean. `frozen_costs` replaces the detached
    costs by fixed values, which is how finite differences of this function
    are taken.

    Args:
        amplitudes (torch.Tensor): Complex amplitudes of the batch, part of the graph
        params (CostParams): Cost weights
        entropy (torch.Tensor or float): Entanglement entropy of the output state
        weights (array-like, optional): Row weights, uniform if None
        frozen_costs (array-like, optional): Values standing in for {C}_ng
        correction (bool): Include the log-amplitude correction term

    Returns:
        tuple: (scalar torch.Tensor, number of amplitudes below the log clamp)
    """
    n = amplitudes.shape[0]
    if n == 0:
        raise ValueError("Cannot evaluate the cost on an empty batch")
    if weights is None:
        w = torch.full((n,), 1.0 / n, dtype=torch.float64)
    else:
        w = torch.as_tensor(np.asarray(weights, dtype=np.float64))
        w = w / w.sum()

    costs = sample_costs(amplitudes, params)
    value = pairwise_sum(w * costs)

    magnitudes = amplitudes.abs()
    n_clamped = int((magnitudes.detach() < params.log_clamp).sum())
    if correction:
        stopped = costs.detach() if frozen_costs is None else torch.as_tensor(np.asarray(frozen_costs, dtype=np.float64))
        log_magnitudes = torch.log(torch.clamp(magnitudes, min=params.log_clamp))
        value = value + pairwise_sum(w * 2.0 * stopped * log_magnitudes)

    return value + params.alpha * entropy, n_clamped


def _dense_input(psi_in):
    if isinstance(psi_in, MatrixProductState):
        psi_in = psi_in.to_dense()
    if torch.is_tensor(psi_in):
        return psi_in.to(torch.complex128)
    return torch.from_numpy(np.ascontiguousarray(psi_in, dtype=np.complex128))


def output_graph(circuit, psi_in, batch, params, theta):
    """
    Exact amplitudes of the batch and the output entropy as functions of theta

    Args:
        circuit (Circuit): Gate layout
        psi_in (MatrixProductState, np.ndarray or torch.Tensor): Input state
        batch (SampleBatch): Configurations to project on
        params (CostParams): Cost weights (alpha = 0 skips the entropy)
        theta (torch.Tensor): Flat circuit parameters

    Returns:
        tuple: (amplitudes, entropy) torch tensors
    """
    output = apply_circuit_dense(circuit, _dense_input(psi_in), theta)
    amplitudes = output[torch.from_numpy(batch.indices())]
    if params.alpha:
        entropy = entanglement_entropy_dense(output, circuit.n_sites)
    else:
        entropy = torch.zeros((), dtype=torch.float64)
    return amplitudes, entropy


def gradient(circuit, psi_in, batch, params, correction=True):
    """
    Reverse-mode gradient of the effective cost over all circuit parameters

    Sample configurations are constants; amplitudes are recomputed on the
    exact contraction so the gradient is unaffected by MPS truncation.

    Args:
        circuit (Circuit): Current circuit
        psi_in (MatrixProductState or np.ndarray): Input state
        batch (SampleBatch): Samples drawn from the circuit output
        params (CostParams): Cost weights
        correction (bool): Use the corrected estimator (False gives the naive one)

    Returns:
        tuple: (gradient np.ndarray, info dict with "cost", "effective_cost",
        "entropy" and "clamped")
    """
    theta = torch.tensor(circuit.parameters(), dtype=torch.float64, requires_grad=True)
    amplitudes, entropy = output_graph(circuit, psi_in, batch, params, theta)
    loss, n_clamped = effective_cost(amplitudes, params, entropy, batch.weights, correction=correction)

    with torch.no_grad():
        plain, _ = effective_cost(amplitudes, params, entropy, batch.weights, correction=False)

    if n_clamped:
        logger.warning(f"{n_clamped} sampled amplitude(s) below the log clamp {params.log_clamp:.0e}")

    if circuit.n_params == 0:
        grad = np.zeros(0)
    else:
        loss.backward()
        grad = theta.grad.detach().numpy().copy()

    bad = np.flatnonzero(~np.isfinite(grad))
    if len(bad):
        raise NumericError(f"Non-finite gradient for parameter {bad[0]}", param_index=int(bad[0]))

    info = {
        "cost": float(plain),
        "effective_cost": float(loss.detach()),
        "entropy": float(entropy.detach()),
        "clamped": n_clamped,
    }
    return grad, info


def exact_cost(circuit, psi_in, params, theta=None):
    """
    Expected cost sum_sigma |psi(sigma)|^2 C(sigma) + alpha S by enumeration

    Args:
        circuit (Circuit): Circuit to apply
        psi_in (MatrixProductState or np.ndarray): Input state
        params (CostParams): Cost weights
        theta (array-like, optional): Parameters overriding the circuit's

    Returns:
        float: Exact cost
    """
    theta = torch.from_numpy(np.asarray(circuit.parameters() if theta is None else theta, dtype=np.float64))
    with torch.no_grad():
        output = apply_circuit_dense(circuit, _dense_input(psi_in), theta)
        entropy = entanglement_entropy_dense(output, circuit.n_sites) if params.alpha else 0.0
    amplitudes = output.numpy()
    probabilities = np.abs(amplitudes) ** 2
    value = float(np.sum(probabilities * sample_costs(amplitudes, params)) / np.sum(probabilities))
    return value + params.alpha * float(entropy)
