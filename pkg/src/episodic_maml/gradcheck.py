"""Finite-difference self-checks for the MLP kernel (used by ``episodic-maml gradcheck``)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import (
    LabeledBatch,
    MlpArchitecture,
    MlpParameters,
    hessian_vector_product,
    init_parameters,
    loss,
    loss_gradient,
)

GRAD_TOL = 1e-5
HVP_TOL = 1e-4
SYMMETRY_TOL = 1e-6


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b) / scale)


def fd_gradient(params: MlpParameters, batch: LabeledBatch) -> np.ndarray:
    """Central differences of the loss, step 1e-6 * max(1, |theta_j|)."""
    theta = params.vector
    out = np.empty_like(theta)
    for j in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        out[j] = (loss(params.like(up), batch) - loss(params.like(down), batch)) / (2 * h)
    return out


def fd_hessian(params: MlpParameters, batch: LabeledBatch, step: float = 1e-5) -> np.ndarray:
    """Explicit Hessian, one column per central difference of the analytic gradient."""
    theta = params.vector
    cols = []
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += step
        down[j] -= step
        g_up = loss_gradient(params.like(up), batch)[1].vector
        g_down = loss_gradient(params.like(down), batch)[1].vector
        cols.append((g_up - g_down) / (2 * step))
    hess = np.stack(cols, axis=1)
    return 0.5 * (hess + hess.T)


def random_problem(rng: np.random.Generator, max_params: int, activation: str):
    """A random small network (at most ``max_params`` weights) with a random batch."""
    while True:
        input_dim = int(rng.integers(2, 6))
        output_dim = int(rng.integers(2, 5))
        hidden = tuple(int(w) for w in rng.integers(2, 9, size=int(rng.integers(1, 3))))
        arch = MlpArchitecture(input_dim, output_dim, hidden, activation)
        if arch.n_params <= max_params:
            break
    base = init_parameters(arch, int(rng.integers(2**31)))
    params = base + 0.3 * rng.standard_normal(arch.n_params)
    n = int(rng.integers(3, 9))
    batch = LabeledBatch(rng.standard_normal((n, input_dim)), rng.integers(0, output_dim, size=n))
    return params, batch


@dataclass
class GradcheckReport:
    max_grad_error: float
    max_hvp_error: float
    max_symmetry_error: float

    @property
    def passed(self) -> bool:
        return (self.max_grad_error <= GRAD_TOL and self.max_hvp_error <= HVP_TOL
                and self.max_symmetry_error <= SYMMETRY_TOL)


def run_gradcheck(seed: int = 0, grad_nets: int = 20, hvp_nets: int = 10) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    grad_err = 0.0
    for i in range(grad_nets):
        params, batch = random_problem(rng, 200, ("relu", "tanh")[i % 2])
        grad_err = max(grad_err, relative_error(loss_gradient(params, batch)[1].vector, fd_gradient(params, batch)))

    hvp_err = sym_err = 0.0
    for i in range(hvp_nets):
        params, batch = random_problem(rng, 60, ("relu", "tanh")[i % 2])
        u = rng.standard_normal(params.vector.size)
        v = rng.standard_normal(params.vector.size)
        hv = hessian_vector_product(params, batch, v).vector
        hu = hessian_vector_product(params, batch, u).vector
        hvp_err = max(hvp_err, relative_error(hv, fd_hessian(params, batch) @ v))
        a, b = float(v @ hu), float(u @ hv)
        sym_err = max(sym_err, abs(a - b) / max(abs(a), abs(b), 1e-12))
    return GradcheckReport(grad_err, hvp_err, sym_err)
