"""Flow-matching math: linear-path interpolation, the velocity-matching loss,
the Euler sampler, the one-step layout derivation used during joint training,
and a finite-difference gradient checker.

All functions accept plain tensors of any matching shape; LatentGrid objects
are unwrapped by the thin helpers at the bottom.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import torch

from .latent import LatentGrid


class FlowShapeError(ValueError):
    pass


class NumericalError(RuntimeError):
    """Non-finite value produced during sampling; carries the step index."""

    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"step {step}: {message}")


@dataclass
class FlowSample:
    x0: torch.Tensor        # noise draw
    x1: torch.Tensor        # data point
    t: float
    xt: torch.Tensor        # (1 - t) x0 + t x1
    v_target: torch.Tensor  # x1 - x0


def interpolate(x0: torch.Tensor, x1: torch.Tensor, t: float) -> FlowSample:
    """Point on the linear path from noise x0 to data x1 at time t."""
    if x0.shape != x1.shape:
        raise FlowShapeError(f"shape mismatch {tuple(x0.shape)} vs {tuple(x1.shape)}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    xt = (1.0 - t) * x0 + t * x1
    return FlowSample(x0=x0, x1=x1, t=t, xt=xt, v_target=x1 - x0)


def fm_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted and target velocities."""
    if predicted.shape != target.shape:
        raise FlowShapeError(f"shape mismatch {tuple(predicted.shape)} vs {tuple(target.shape)}")
    return ((predicted - target) ** 2).mean()


def euler_sample(velocity_fn: Callable[[torch.Tensor, float], torch.Tensor],
                 x0: torch.Tensor, n_steps: int) -> torch.Tensor:
    """Integrate dx/dt = u(x, t) from t=0 to 1 with fixed-step Euler.

    x_{k+1} = x_k + (1/n) * u(x_k, k/n). Exact for constant fields at any
    step count. Raises NumericalError (with the step index) on non-finite
    model output.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x = x0
    dt = 1.0 / n_steps
    for k in range(n_steps):
        v = velocity_fn(x, k / n_steps)
        if not torch.isfinite(v).all():
            raise NumericalError(k, "velocity model returned non-finite values")
        x = x + dt * v
    return x


def derive_onestep(m0: torch.Tensor,
                   velocity_fn: Callable[[torch.Tensor, float], torch.Tensor]) -> torch.Tensor:
    """One-step clean-layout estimate: m0 + u(m0, t=0).

    The result stays attached to the autograd graph, so losses computed on
    anything conditioned on it backpropagate into the velocity model.
    """
    return m0 + velocity_fn(m0, 0.0)


# --------------------------------------------------------------------------
# finite-difference verification
# --------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    analytic_norm: float
    numeric_norm: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: list
    max_rel_error: float

    def worst(self) -> GradCheckEntry:
        return max(self.entries, key=lambda e: e.rel_error)


def gradcheck(loss_fn: Callable[[], torch.Tensor],
              named_params: dict,
              epsilon: float = 1e-5) -> GradCheckReport:
    """Compare autograd gradients of loss_fn against central finite
    differences for every element of every tensor in named_params.

    loss_fn must be deterministic (it is evaluated twice up front and must
    agree bit-for-bit) and is re-evaluated 2 * numel times, so keep the
    parameter subset small. The per-tensor relative error is
    ||g_a - g_n|| / max(||g_a||, ||g_n||, 1e-12).
    """
    base1 = float(loss_fn())
    base2 = float(loss_fn())
    if base1 != base2:
        raise RuntimeError(
            f"loss_fn is not deterministic ({base1!r} != {base2!r}); "
            "freeze all randomness before gradcheck")

    params = list(named_params.items())
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)

    entries = []
    for (name, p), g in zip(params, grads):
        analytic = torch.zeros_like(p) if g is None else g.detach().clone()
        numeric = torch.zeros_like(p)
        flat = p.data.view(-1)
        nflat = numeric.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + epsilon
            f_plus = float(loss_fn())
            flat[i] = orig - epsilon
            f_minus = float(loss_fn())
            flat[i] = orig
            nflat[i] = (f_plus - f_minus) / (2.0 * epsilon)
        an = analytic.norm().item()
        nn_ = numeric.norm().item()
        rel = (analytic - numeric).norm().item() / max(an, nn_, 1e-12)
        entries.append(GradCheckEntry(name=name, analytic_norm=an,
                                      numeric_norm=nn_, rel_error=rel))
    return GradCheckReport(entries=entries,
                           max_rel_error=max(e.rel_error for e in entries) if entries else 0.0)


# --------------------------------------------------------------------------
# LatentGrid conveniences
# --------------------------------------------------------------------------

def grid_like(grid: LatentGrid, tokens: torch.Tensor) -> LatentGrid:
    return LatentGrid(tokens=tokens, patch_size=grid.patch_size,
                      height=grid.height, width=grid.width)


def randn_grid_like(grid: LatentGrid, generator: torch.Generator) -> LatentGrid:
    tokens = torch.randn(grid.tokens.shape, generator=generator, dtype=grid.tokens.dtype)
    return grid_like(grid, tokens)
