"""Variational minimisation loop: sample or enumerate, estimate, update."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ansatz import HybridState, save_checkpoint
from .estimator import ExactSum, sampled_estimate

__all__ = [
    "OptimizerConfig",
    "TraceRecord",
    "OptimizationTrace",
    "OptimizationResult",
    "DivergenceError",
    "Adam",
    "optimize",
    "bond_ladder",
]

logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    method: str = "adam"
    learning_rate: float = 1e-2
    lr_decay: bool = True
    plateau_window: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mode: str = "exact_sum"
    n_samples: int = 2048
    adaptive_samples: bool = True
    max_samples: int = 65536
    adapt_fraction: float = 0.5
    max_iterations: int = 1000
    seed: int = 0
    warm_start: bool = False
    warm_start_iterations: int = 100
    gradient_clip: float | None = None
    convergence_window: int = 50
    convergence_tol: float = 1e-9
    gradient_tol: float = 1e-10
    divergence_factor: float = 1.0
    threads: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.method not in ("adam", "sgd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.mode not in ("exact_sum", "sampled"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class TraceRecord:
    iteration: int
    energy: float
    std_error: float
    grad_norm: float
    acceptance_rate: float
    wall_time: float
    phase: str = "symmetric"
    n_samples: int = 0
    learning_rate: float = 0.0


@dataclass
class OptimizationTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")


@dataclass
class OptimizationResult:
    state: HybridState
    best_state: HybridState
    best_energy: float
    trace: OptimizationTrace
    converged: bool = False


class DivergenceError(RuntimeError):
    def __init__(self, message, result: OptimizationResult):
        super().__init__(message)
        self.result = result


class Adam:
    """Adam on the real and imaginary parts of complex parameters independently."""

    def __init__(self, n: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n, dtype=np.complex128)
        self.v_re = np.zeros(n)
        self.v_im = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v_re = b2 * self.v_re + (1 - b2) * grad.real ** 2
        self.v_im = b2 * self.v_im + (1 - b2) * grad.imag ** 2
        mh = self.m / (1 - b1 ** self.t)
        c2 = 1 - b2 ** self.t
        return -lr * (mh.real / (np.sqrt(self.v_re / c2) + self.eps) + 1j * mh.imag / (np.sqrt(self.v_im / c2) + self.eps))


def _clip(grad: np.ndarray, limit: float | None) -> np.ndarray:
    if limit is None:
        return grad
    n = np.linalg.norm(grad)
    return grad * (limit / n) if n > limit else grad


def optimize(
    state: HybridState,
    terms,
    config: OptimizerConfig,
    exact: ExactSum | None = None,
    checkpoint_path=None,
    callback=None,
) -> OptimizationResult:
    """Minimise the sector energy of ``state`` over its MPS tensors.

    With ``warm_start`` the first ``warm_start_iterations`` steps optimise
    the same tensors with only the S^z constraint, then symmetrisation is
    switched on. Returns the final and the lowest-energy state.
    """
    trace = OptimizationTrace()
    phases = []
    if config.warm_start and config.warm_start_iterations > 0:
        phases.append(("warm", state.with_trivial_group(), min(config.warm_start_iterations, config.max_iterations)))
    phases.append(("symmetric", state, config.max_iterations - sum(p[2] for p in phases)))

    params = state.parameters
    opt = Adam(len(params), config.beta1, config.beta2, config.eps) if config.method == "adam" else None
    rng = np.random.default_rng(config.seed)
    n_samples = config.n_samples
    best_energy = np.inf
    best_params = params.copy()
    initial = None
    converged = False
    lr = config.learning_rate
    plateau_start = None
    last_improve = 0
    t0 = time.perf_counter()
    it = 0
    current = state
    for phase, proto, n_iter in phases:
        ex = None
        if config.mode == "exact_sum":
            ex = exact if (phase == "symmetric" and exact is not None) else ExactSum(proto, terms)
        phase_best = np.inf
        for _ in range(n_iter):
            current = proto.with_parameters(params)
            if ex is not None:
                est, grad = ex.evaluate(current)
            else:
                est, grad = sampled_estimate(
                    current, terms, n_samples, seed=int(rng.integers(2**63)), threads=config.threads
                )
            e = est.mean
            if initial is None:
                initial = e
            if not np.isfinite(e) or e - initial > config.divergence_factor * max(abs(initial), 1.0):
                result = OptimizationResult(current, state.with_parameters(best_params), best_energy, trace)
                raise DivergenceError(f"energy diverged at iteration {it}: {e}", result)
            if phase == "symmetric" and e < best_energy:
                best_energy, best_params = e, params.copy()
            if e < phase_best - 1e-12:
                phase_best, last_improve = e, it
            g = _clip(grad.vector, config.gradient_clip)
            trace.records.append(TraceRecord(
                it, e, est.std_error, float(np.linalg.norm(grad.vector)), est.acceptance_rate,
                time.perf_counter() - t0, phase, est.n_samples, lr,
            ))
            if callback is not None:
                callback(trace.records[-1], current)
            if (
                checkpoint_path is not None and config.checkpoint_every
                and it % config.checkpoint_every == 0 and phase == "symmetric"
            ):
                save_checkpoint(state.with_parameters(best_params), checkpoint_path)
            if phase == "symmetric" and grad.norm <= config.gradient_tol:
                # stationary point: Adam would blow rounding noise up to full-size steps
                converged = True
                break
            if config.lr_decay:
                if plateau_start is None and it - last_improve >= config.plateau_window:
                    plateau_start = it
                if plateau_start is not None:
                    lr = config.learning_rate / np.sqrt(1 + it - plateau_start)
            step = opt.step(g, lr) if opt is not None else -lr * g
            params = params + step
            if config.mode == "sampled" and config.adaptive_samples and len(trace) > 1:
                de = abs(trace.records[-1].energy - trace.records[-2].energy)
                if est.std_error > config.adapt_fraction * max(de, 1e-300) and n_samples < config.max_samples:
                    n_samples = min(2 * n_samples, config.max_samples)
            it += 1
            w = config.convergence_window
            sym = [r.energy for r in trace.records if r.phase == "symmetric"]
            if config.mode == "exact_sum" and phase == "symmetric" and len(sym) >= 2 * w:
                if np.median(sym[-2 * w:-w]) - np.median(sym[-w:]) < config.convergence_tol * max(abs(sym[-1]), 1.0):
                    converged = True
                    break
    final = state.with_parameters(params)
    if best_energy == np.inf:
        best_params = params
    best_state = state.with_parameters(best_params)
    if checkpoint_path is not None:
        save_checkpoint(best_state, checkpoint_path)
    return OptimizationResult(final, best_state, float(best_energy), trace, converged)


def bond_ladder(state: HybridState, terms, Ds, config: OptimizerConfig, exact: ExactSum | None = None,
                noise: float = 1e-3, callback=None):
    """Optimise at each ``D`` in ``Ds`` (ascending), warm-starting from the previous best state."""
    results = {}
    current = state
    for k, D in enumerate(sorted(Ds)):
        if D > current.bond_dim:
            current = current.grow_bond(D, noise=noise, seed=config.seed + k)
        res = optimize(current, terms, config, exact=exact, callback=callback)
        results[D] = res
        current = res.best_state
    return results
