"""
Levenberg-Marquardt for robust, confidence-weighted least squares.

Problems expose a robust cost, an IRLS-whitened linearization and a
retraction on their parameter manifold; the loop itself is shared by
camera registration, bundle adjustment and the joint hand/camera solve.
"""
from __future__ import annotations

import logging
import math
import typing as tp
from dataclasses import dataclass

import torch

from grasp_capture.utils.common import SolveReport


@dataclass
class SolverConfig:
    max_iterations: int = 100
    initial_damping: float = 1e-3
    min_damping: float = 1e-12
    max_damping: float = 1e12
    damping_up: float = 10.0
    damping_down: float = 0.1
    # Relative cost decrease and relative step norm
    ftol: float = 1e-10
    xtol: float = 1e-12
    # Max-norm of the whitened gradient
    gtol: float = 1e-10
    # Absolute cost below which the problem is solved (squared pixels)
    cost_tol: float = 1e-20
    huber_width: float = 4.0
    confidence_threshold: float = 0.2
    seed: int | None = None

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("The iteration cap must be non-negative.")
        for name in [
            "initial_damping",
            "min_damping",
            "max_damping",
            "ftol",
            "xtol",
            "gtol",
            "cost_tol",
            "huber_width",
        ]:
            if not getattr(self, name) > 0:
                raise ValueError(f"`{name}` must be positive, got {getattr(self, name)}.")
        if not (self.damping_up > 1 and 0 < self.damping_down < 1):
            raise ValueError("Damping factors must satisfy up > 1 > down > 0.")
        if not 0 <= self.confidence_threshold < 1:
            raise ValueError(f"Confidence threshold must lie in [0, 1), got {self.confidence_threshold}.")


def huber_cost(norms: torch.Tensor, width: float) -> torch.Tensor:
    """Squared norm inside `width`, linear growth outside."""
    return torch.where(norms <= width, norms**2, 2.0 * width * norms - width**2)


def huber_weight(norms: torch.Tensor, width: float) -> torch.Tensor:
    return torch.where(norms <= width, torch.ones_like(norms), width / norms.clamp(min=width))


def robust_cost(residuals: torch.Tensor, weights: torch.Tensor, width: float) -> torch.Tensor:
    """Sum of confidence-weighted Huber costs of 2D residuals (m, 2)."""
    norms = torch.linalg.vector_norm(residuals, dim=-1)
    return (weights * huber_cost(norms, width)).sum()


def whiten(
    residuals: torch.Tensor, jacobians: torch.Tensor, weights: torch.Tensor, width: float
) -> tuple[torch.Tensor, torch.Tensor]:
    """IRLS-whitened residual vector (2m,) and Jacobian (2m, n) from blocks (m, 2) and (m, 2, n)."""
    norms = torch.linalg.vector_norm(residuals, dim=-1)
    sqrt_w = (weights * huber_weight(norms, width)).sqrt()
    r = (sqrt_w[:, None] * residuals).reshape(-1)
    jac = (sqrt_w[:, None, None] * jacobians).reshape(-1, jacobians.shape[-1])
    return r, jac


class LeastSquaresProblem:
    """Interface of the problems solved by `levenberg_marquardt`."""

    def cost(self, state) -> float:
        """Robust objective; `math.inf` for inadmissible states."""
        raise NotImplementedError

    def linearize(self, state) -> tuple[torch.Tensor, torch.Tensor]:
        """Whitened residual vector and its Jacobian w.r.t. the tangent parameters."""
        raise NotImplementedError

    def retract(self, state, delta: torch.Tensor):
        raise NotImplementedError

    def norm(self, state) -> float:
        return 0.0


def levenberg_marquardt(
    problem: LeastSquaresProblem,
    state,
    cfg: SolverConfig,
    callback: tp.Callable | None = None,
) -> tuple[tp.Any, SolveReport]:
    """Minimizes `problem.cost` from `state`; the accepted-cost sequence is non-increasing.

    Running out of iterations is reported with `converged=False`; the
    best state found is returned either way.
    """
    cost = problem.cost(state)
    history = [cost]
    if not math.isfinite(cost):
        raise ValueError("The initial state is inadmissible.")
    if cost <= cfg.cost_tol:
        return state, SolveReport(cost, 0, True, "cost_tol", tuple(history))

    damping = cfg.initial_damping
    reason = "max_iterations"
    iteration = 0
    while iteration < cfg.max_iterations:
        residual, jac = problem.linearize(state)
        grad = jac.transpose(0, 1) @ residual
        if grad.abs().max() <= cfg.gtol:
            reason = "gtol"
            break
        iteration += 1

        hessian = jac.transpose(0, 1) @ jac
        diag = torch.diagonal(hessian)
        diag = diag + 1e-12 * diag.max().clamp(min=1.0)
        accepted = False
        while not accepted:
            system = hessian + damping * torch.diag(diag)
            delta = -torch.linalg.solve(system, grad)
            if torch.linalg.vector_norm(delta) <= cfg.xtol * (problem.norm(state) + cfg.xtol):
                reason = "xtol"
                break
            candidate = problem.retract(state, delta)
            new_cost = problem.cost(candidate)
            if math.isfinite(new_cost) and new_cost <= cost:
                accepted = True
                damping = max(damping * cfg.damping_down, cfg.min_damping)
            else:
                damping *= cfg.damping_up
                if damping > cfg.max_damping:
                    reason = "stalled"
                    break
        if not accepted:
            break

        decrease = cost - new_cost
        state, cost = candidate, new_cost
        history.append(cost)
        if callback is not None:
            callback(iteration, cost)
        if cost <= cfg.cost_tol:
            reason = "cost_tol"
            break
        if decrease <= cfg.ftol * cost:
            reason = "ftol"
            break

    converged = reason != "max_iterations"
    logging.debug("LM stopped after %d iterations (%s) at cost %.6g.", iteration, reason, cost)
    return state, SolveReport(cost, iteration, converged, reason, tuple(history))
