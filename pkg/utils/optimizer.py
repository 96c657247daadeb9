"""
Training loop: sample the circuit output, evaluate the corrected gradient,
take an Adam step. Also parameter initialization, checkpoints and the
angle diagnostic for z-rotation circuits.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import pandas as pd
import torch

from .circuit import GATE_KINDS, Circuit, apply_circuit, brick_wall
from .cost_function import CostParams, CostReport, exact_cost, gradient, sample_cost
from .exceptions import ConfigError, DimensionError, NormalizationError, NumericError
from .ladder_model import ENUMERATION_LIMIT, sign_statistics
from .mps import DEFAULT_CUTOFF, DEFAULT_MAX_BOND, NORM_TOLERANCE, SampleBatch
from .tensor_ops import pairwise_sum

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ALPHA_SCHEDULES = ("constant", "linear")
GENERAL_INIT_SCALE = 0.01


@dataclass(frozen=True)
class CircuitConfig:
    depth: int = 1
    kind: str = "general_two_qubit"

    def __post_init__(self):
        if self.depth < 0:
            raise ConfigError(f"Circuit depth must be non-negative, got {self.depth}")
        if self.kind not in GATE_KINDS:
            raise ConfigError(f"Unknown gate kind {self.kind!r}, expected one of {GATE_KINDS}")


@dataclass(frozen=True)
class TrainConfig:
    """Every hyperparameter of a positivization run"""
    eta: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_iters: int = 3000
    seed: int = 0
    cost: CostParams = field(default_factory=CostParams)
    circuit: CircuitConfig = field(default_factory=CircuitConfig)
    cutoff: float = DEFAULT_CUTOFF
    max_bond: int = DEFAULT_MAX_BOND
    checkpoint_every: int = 100
    plateau_window: int = 50
    plateau_tol: float = 1e-6
    alpha_schedule: str = "constant"
    n_jobs: int = 1
    threads: int = 1
    snapshot_every: int = 10
    strict_unitary: bool = False

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be at least 1, got {self.max_iters}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("Adam decay rates must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.cutoff < 0 or self.max_bond < 1:
            raise ConfigError("cutoff must be non-negative and max_bond positive")
        if self.checkpoint_every < 1 or self.plateau_window < 1 or self.snapshot_every < 1:
            raise ConfigError("checkpoint_every, plateau_window and snapshot_every must be positive")
        if self.alpha_schedule not in ALPHA_SCHEDULES:
            raise ConfigError(f"Unknown alpha schedule {self.alpha_schedule!r}")
        if self.n_jobs == 0 or self.threads < 1:
            raise ConfigError("n_jobs must be non-zero and threads positive")

    def alpha_at(self, iteration):
        """Entropy weight at an iteration under the configured schedule"""
        if self.alpha_schedule == "constant" or self.max_iters == 1:
            return self.cost.alpha
        return self.cost.alpha * max(0.0, 1.0 - iteration / (self.max_iters - 1))

    def to_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["cost"] = self.cost.to_dict()
        data["circuit"] = asdict(self.circuit)
        return data

    @classmethod
    def from_dict(cls, data):
        """
        Build a config from a (possibly partial) nested dict

        Args:
            data (dict): Values overriding the defaults

        Returns:
            TrainConfig: Validated configuration
        """
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown configuration key(s): {', '.join(unknown)}")
        try:
            if "cost" in data:
                data["cost"] = CostParams.from_dict(data["cost"])
            if "circuit" in data:
                data["circuit"] = CircuitConfig(**data["circuit"])
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"Invalid configuration: {e}")


@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_params):
        return cls(step=0, m=np.zeros(n_params), v=np.zeros(n_params))

    def to_dict(self):
        return {"step": self.step, "m": self.m.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(step=int(data["step"]), m=np.asarray(data["m"], dtype=np.float64), v=np.asarray(data["v"], dtype=np.float64))


def adam_step(params, grads, state, config):
    """
    One bias-corrected Adam update

    Args:
        params (np.ndarray): Current parameters
        grads (np.ndarray): Gradient at params
        state (AdamState): Moments before the step
        config (TrainConfig): Step size and decay rates

    Returns:
        tuple: (new parameters, new AdamState)
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise DimensionError(f"Adam shapes differ: params {params.shape}, grads {grads.shape}, moments {state.m.shape}")

    step = state.step + 1
    m = config.adam_beta1 * state.m + (1.0 - config.adam_beta1) * grads
    v = config.adam_beta2 * state.v + (1.0 - config.adam_beta2) * grads * grads
    m_hat = m / (1.0 - config.adam_beta1 ** step)
    v_hat = v / (1.0 - config.adam_beta2 ** step)
    updated = params - config.eta * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return updated, AdamState(step=step, m=m, v=v)


def init_parameters(circuit, rng):
    """
    Random starting parameters

    rz angles are uniform in (-pi, pi); general two-qubit gates start near
    the identity with normal(0, 0.01) Hermitian coefficients.

    Args:
        circuit (Circuit): Layout to initialize
        rng (np.random.Generator): Random source

    Returns:
        Circuit: Same layout with fresh parameters
    """
    values = []
    for gate in circuit.gates():
        if gate.kind == "rz":
            values.append(rng.uniform(-np.pi, np.pi, size=gate.n_params))
        else:
            values.append(rng.normal(scale=GENERAL_INIT_SCALE, size=gate.n_params))
    return circuit.with_parameters(np.concatenate(values) if values else np.zeros(0))


def iteration_seed(seed, iteration):
    """Sampling seed of one iteration, a pure function of (seed, iteration)"""
    return int(np.random.SeedSequence([seed, iteration]).generate_state(1)[0])


@dataclass
class TrainTrace:
    """Per-iteration reports and parameter snapshots"""
    reports: list = field(default_factory=list)
    parameters: list = field(default_factory=list)

    def __len__(self):
        return len(self.reports)

    def append(self, report, params):
        if self.reports and report.iteration <= self.reports[-1].iteration:
            raise ValueError(f"Iteration {report.iteration} does not follow {self.reports[-1].iteration}")
        self.reports.append(report)
        self.parameters.append(np.array(params, copy=True))

    @property
    def final(self):
        return self.reports[-1] if self.reports else None

    def soft_costs(self):
        return np.array([report.soft_cost for report in self.reports])

    def plateaued(self, window, tol):
        """True if the soft cost moved by less than tol (relative) over the last `window` iterations"""
        if len(self.reports) <= window:
            return False
        old, new = self.reports[-window - 1].soft_cost, self.reports[-1].soft_cost
        return abs(new - old) <= tol * max(abs(old), 1e-300)

    def to_frame(self):
        return pd.DataFrame([report.to_dict() for report in self.reports])


@dataclass
class Checkpoint:
    """Everything needed to continue a run: the next iteration, circuit, Adam moments and config"""
    iteration: int
    circuit: Circuit
    adam: AdamState
    config: TrainConfig

    def save(self, path):
        data = {
            "format_version": CHECKPOINT_VERSION,
            "iteration": self.iteration,
            "circuit": self.circuit.to_dict(),
            "adam": self.adam.to_dict(),
            "config": self.config.to_dict(),
        }
        with open(path, "w") as f:
            json.dump(data, f)
        logger.info(f"Checkpoint at iteration {self.iteration} written to {path}")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            data = json.load(f)
        if data.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(f"Unsupported checkpoint version {data.get('format_version')} in {path}")
        return cls(
            iteration=int(data["iteration"]),
            circuit=Circuit.from_dict(data["circuit"]),
            adam=AdamState.from_dict(data["adam"]),
            config=TrainConfig.from_dict(data["config"]),
        )


def _imag_residual(batch):
    return float(pairwise_sum(batch.normalized_weights() * np.abs(np.imag(batch.amplitudes))))


def train(psi_in, config, circuit=None, checkpoint_path=None, trace_writer=None, resume=None, snapshot_writer=None):
    """
    Optimize a circuit so that its output on psi_in has a positive sign structure

    Each iteration evolves psi_in with truncation, draws a fresh batch with a
    seed derived from (config.seed, iteration), evaluates the corrected
    gradient on the exact contraction and applies Adam. Stops after
    max_iters or when the soft cost plateaus.

    Args:
        psi_in (MatrixProductState): Normalized input state
        config (TrainConfig): Hyperparameters
        circuit (Circuit, optional): Starting circuit; a randomly initialized
            brick wall from config.circuit if omitted
        checkpoint_path (str, optional): Where to write checkpoints
        trace_writer (callable, optional): Called with each report dict
        resume (Checkpoint, optional): Continue from a checkpoint
        snapshot_writer (callable, optional): Called with {iteration, parameters}
            every config.snapshot_every iterations and at the last one

    Returns:
        tuple: (final Circuit, TrainTrace)
    """
    norm = psi_in.norm()
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise NormalizationError(f"Input state must be normalized, norm is {norm:.12f}")
    torch.set_num_threads(config.threads)

    if resume is not None:
        circuit, adam, start = resume.circuit, resume.adam, resume.iteration
        logger.info(f"Resuming from iteration {start}")
    else:
        if circuit is None:
            layout = brick_wall(psi_in.n_sites, config.circuit.depth, config.circuit.kind)
            circuit = init_parameters(layout, np.random.default_rng(config.seed))
        adam, start = AdamState.zeros(circuit.n_params), 0

    dense_in = torch.from_numpy(psi_in.to_dense())
    trace = TrainTrace()
    logger.info(f"Training depth-{circuit.depth} circuit ({circuit.n_params} parameters) on {psi_in.n_sites} sites")

    for iteration in range(start, config.max_iters):
        params = replace(config.cost, alpha=config.alpha_at(iteration))
        try:
            psi_out, truncation = apply_circuit(
                circuit, psi_in, cutoff=config.cutoff, max_rank=config.max_bond, strict=config.strict_unitary
            )
            batch = psi_out.perfect_sample(params.n_samples, iteration_seed(config.seed, iteration), config.n_jobs)
            grad, info = gradient(circuit, dense_in, batch, params)
        except NumericError as e:
            logger.error(f"Numeric failure at iteration {iteration}: {e}")
            if checkpoint_path:
                Checkpoint(iteration, circuit, adam, config).save(checkpoint_path)
            raise

        sign, stderr = sign_statistics(batch)
        report = CostReport(
            iteration=iteration,
            soft_cost=sample_cost(psi_out, batch, params),
            hard_avg_sign=sign,
            imag_residual=_imag_residual(batch),
            entropy=psi_out.entanglement_entropy(),
            grad_norm=float(np.linalg.norm(grad)),
            sign_stderr=stderr,
            truncation_error=truncation,
            alpha=params.alpha,
            clamped_amplitudes=info["clamped"],
        )
        trace.append(report, circuit.parameters())
        if trace_writer is not None:
            trace_writer(report.to_dict())
        if snapshot_writer is not None and iteration % config.snapshot_every == 0:
            snapshot_writer({"iteration": iteration, "parameters": circuit.parameters().tolist()})
        logger.debug(
            f"iter {iteration}: cost {report.soft_cost:.6f}, sign {sign:.4f}, "
            f"imag {report.imag_residual:.4f}, S {report.entropy:.4f}, |g| {report.grad_norm:.3e}"
        )

        if circuit.n_params == 0:
            break

        updated, adam = adam_step(circuit.parameters(), grad, adam, config)
        circuit = circuit.with_parameters(updated)

        if checkpoint_path and (iteration + 1) % config.checkpoint_every == 0:
            Checkpoint(iteration + 1, circuit, adam, config).save(checkpoint_path)
        if trace.plateaued(config.plateau_window, config.plateau_tol):
            logger.info(f"Soft cost plateaued at iteration {iteration}")
            break

    final = trace.final
    if snapshot_writer is not None and final is not None and final.iteration % config.snapshot_every:
        snapshot_writer({"iteration": final.iteration, "parameters": trace.parameters[-1].tolist()})
    if final is not None:
        if checkpoint_path:
            Checkpoint(final.iteration + 1, circuit, adam, config).save(checkpoint_path)
        logger.info(f"Finished after {len(trace)} iterations: sign {final.hard_avg_sign:.4f}")
    return circuit, trace


def evaluate_circuit(
    circuit, psi_in, params, cutoff=DEFAULT_CUTOFF, max_bond=DEFAULT_MAX_BOND, n_samples=None, rng_seed=0, n_jobs=1, strict=False
):
    """
    Metrics of the circuit output: enumerated for N <= 12, sampled above

    Args:
        circuit (Circuit): Circuit to apply
        psi_in (MatrixProductState): Input state
        params (CostParams): Cost weights for the reported cost
        cutoff (float): Truncation cutoff of the forward evolution
        max_bond (int): Bond cap of the forward evolution
        n_samples (int, optional): Sample count above the enumeration limit
        rng_seed (int): Sampling seed
        n_jobs (int): Sampling workers
        strict (bool): Raise on non-unitary gates instead of warning

    Returns:
        dict: hard_avg_sign, sign_stderr, imag_residual, entropy,
        truncation_error, soft_cost, n_samples (None when enumerated)
    """
    if circuit.n_sites != psi_in.n_sites:
        raise DimensionError(f"Circuit acts on {circuit.n_sites} sites, state has {psi_in.n_sites}")

    psi_out, truncation = apply_circuit(circuit, psi_in, cutoff=cutoff, max_rank=max_bond, strict=strict)
    if psi_in.n_sites <= ENUMERATION_LIMIT:
        batch = SampleBatch.enumerate(psi_out)
        n_used = None
        soft_cost = exact_cost(circuit, psi_in, params)
    else:
        n_used = n_samples or params.n_samples
        batch = psi_out.perfect_sample(n_used, rng_seed, n_jobs)
        soft_cost = sample_cost(psi_out, batch, params)

    sign, stderr = sign_statistics(batch)
    return {
        "hard_avg_sign": sign,
        "sign_stderr": stderr,
        "imag_residual": _imag_residual(batch),
        "entropy": psi_out.entanglement_entropy(),
        "truncation_error": truncation,
        "soft_cost": soft_cost,
        "n_samples": n_used,
    }


def _wrap(angles):
    return np.angle(np.exp(1j * np.asarray(angles, dtype=np.float64)))


def angle_clusters(angles, sublattice=None):
    """
    Split rotation angles into two groups separated by about pi

    The axis is the circular mean of the doubled angles; each angle joins the
    group whose center it is closer to.

    Args:
        angles (array-like): One angle per site
        sublattice (sequence, optional): Sites of sublattice A, to compare labels with

    Returns:
        dict: centers, separation in [0, pi], labels, max deviation from the
        group centers and (if sublattice is given) whether the labels follow it
    """
    angles = _wrap(angles)
    axis = 0.5 * np.angle(np.mean(np.exp(2j * angles)))
    labels = (np.cos(angles - axis) < 0).astype(int)

    centers = []
    for label in (0, 1):
        members = angles[labels == label]
        centers.append(float(np.angle(np.mean(np.exp(1j * members)))) if len(members) else math.nan)

    separation = abs(float(_wrap(centers[1] - centers[0]))) if not math.isnan(centers[1] + centers[0]) else math.nan
    deviation = max(
        (abs(float(_wrap(angle - centers[label]))) for angle, label in zip(angles, labels)),
        default=0.0,
    )
    result = {"centers": centers, "separation": separation, "labels": labels.tolist(), "max_deviation": deviation}

    if sublattice is not None:
        membership = np.isin(np.arange(len(angles)), list(sublattice)).astype(int)
        result["aligned_with_sublattice"] = bool(np.all(labels == membership) or np.all(labels != membership))
    return result
