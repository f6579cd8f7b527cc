from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from grasp_capture.contact.energy import CapsuleProxy, ContactConfig, contact_energy
from grasp_capture.contact.mesh import ContactMap, TriMesh
from grasp_capture.hand.skeleton import HandParams


@dataclass
class RefineConfig:
    max_iterations: int = 1000
    # Projected-gradient norm and relative energy decrease at which descent stops
    gtol: float = 1e-8
    ftol: float = 1e-8
    initial_step: float = 1e-3
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40

    def __post_init__(self):
        if not (self.gtol > 0 and self.ftol > 0 and self.initial_step > 0):
            raise ValueError("Tolerances and the initial step must be positive.")
        if not 0 < self.backtrack < 1:
            raise ValueError(f"Backtracking factor must lie in (0, 1), got {self.backtrack}.")


@dataclass(frozen=True, eq=False)
class RefineResult:
    params: HandParams
    energy: float
    initial_energy: float
    iterations: int
    converged: bool
    reason: str
    history: tuple[float, ...] = ()


def projected_gradient(params: HandParams, grad: torch.Tensor, proxy: CapsuleProxy) -> torch.Tensor:
    """Drops angle components that would push through an active joint limit."""
    skeleton = proxy.skeleton
    at_lower = (params.angles <= skeleton.lower) & (grad[6:] > 0)
    at_upper = (params.angles >= skeleton.upper) & (grad[6:] < 0)
    out = grad.clone()
    out[6:][at_lower | at_upper] = 0.0
    return out


def refine_grasp(
    init: HandParams,
    proxy: CapsuleProxy,
    mesh: TriMesh,
    cmap: ContactMap,
    cfg: RefineConfig | None = None,
    contact_cfg: ContactConfig | None = None,
) -> RefineResult:
    """Projected gradient descent with Armijo backtracking on the contact energy.

    `mesh` must be posed in the world frame of the hand.
    """
    cfg = cfg or RefineConfig()
    skeleton = proxy.skeleton
    params = init
    energy, grad = contact_energy(params, proxy, mesh, cmap, contact_cfg)
    initial = energy
    history = [energy]
    step = cfg.initial_step
    reason = "max_iterations"
    iterations = 0

    while iterations < cfg.max_iterations:
        direction = projected_gradient(params, grad, proxy)
        if energy == 0.0 or torch.linalg.vector_norm(direction) < cfg.gtol:
            reason = "gtol"
            break
        for _ in range(cfg.max_backtracks):
            candidate = params.retract(-step * direction, skeleton)
            # Actual displacement after projection onto the limits
            moved = torch.cat([-step * direction[:6], candidate.angles - params.angles])
            new_energy, new_grad = contact_energy(candidate, proxy, mesh, cmap, contact_cfg)
            if new_energy <= energy + cfg.armijo * (grad @ moved).item():
                break
            step *= cfg.backtrack
        else:
            reason = "stalled"
            break

        iterations += 1
        decrease = energy - new_energy
        params, energy, grad = candidate, new_energy, new_grad
        history.append(energy)
        step *= 2.0
        if decrease <= cfg.ftol * max(energy, 1e-300):
            reason = "ftol"
            break

    converged = reason != "max_iterations"
    log = logging.info if converged else logging.warning
    log("Grasp refinement: %d iterations (%s), energy %.6g -> %.6g.", iterations, reason, initial, energy)
    return RefineResult(params, energy, initial, iterations, converged, reason, tuple(history))
