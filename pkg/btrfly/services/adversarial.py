# btrfly/services/adversarial.py
from typing import Callable, Optional

import torch
import torch.nn.functional as F
from torch import autograd

from btrfly.models.adversaries import (
    EnergyDiscriminator,
    WassersteinDiscriminator,
    reconstruction_energy,
)

Critic = Callable[[torch.Tensor], torch.Tensor]


def ebd_energy(
    discriminator: EnergyDiscriminator, x: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Energy of an adversary input under the autoencoder discriminator.

    Args:
        discriminator: EB-D; dropout is active only in training mode
        x: (N, 1, h, w, 26) adversary input

    Returns:
        (energy per sample, reconstruction)
    """
    return discriminator(x)


def ebd_losses(
    energy_real: torch.Tensor, energy_fake: torch.Tensor, margin: float
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Margin losses of the energy-based regime.

    L_D = E_real + max(0, m - E_fake); the generator's adversarial term is E_fake.
    Batch means are returned.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    loss_d = (energy_real + F.relu(margin - energy_fake)).mean()
    return loss_d, energy_fake.mean()


def margin_schedule(iteration: int, total_iters: int, m0: float) -> float:
    """Linear decay from m0 at iteration 0 to 0 at total_iters"""
    if not 0 <= iteration <= total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {total_iters}]")
    return m0 * (1.0 - iteration / total_iters)


def wd_score(discriminator: WassersteinDiscriminator, x: torch.Tensor) -> torch.Tensor:
    """Unbounded critic score per sample, (N,)"""
    return discriminator(x)


def gradient_penalty(
    critic: Critic,
    y_real: torch.Tensor,
    y_fake: torch.Tensor,
    gp_lambda: float,
    generator: Optional[torch.Generator] = None,
    epsilon: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    lambda * (||grad D(y_hat)||_2 - 1)^2 averaged over the batch.

    y_hat = eps * y_real + (1 - eps) * y_fake with one eps ~ U[0, 1] per sample.
    `epsilon` may be passed explicitly, shape (N,).
    """
    if y_real.shape != y_fake.shape:
        raise ValueError(f"real {tuple(y_real.shape)} and fake {tuple(y_fake.shape)} differ in shape")
    n = y_real.shape[0]
    if epsilon is None:
        epsilon = torch.rand(n, generator=generator, dtype=y_real.dtype, device="cpu").to(y_real.device)
    epsilon = epsilon.reshape(n, *([1] * (y_real.dim() - 1))).to(y_real)
    interpolates = (epsilon * y_real.detach() + (1 - epsilon) * y_fake.detach()).requires_grad_(True)
    scores = critic(interpolates)
    gradients = autograd.grad(
        outputs=scores,
        inputs=interpolates,
        grad_outputs=torch.ones_like(scores),
        create_graph=True,
        retain_graph=True,
        allow_unused=True,
    )[0]
    if gradients is None:
        gradients = torch.zeros_like(interpolates)
    norms = gradients.reshape(n, -1).norm(p=2, dim=1)
    return gp_lambda * ((norms - 1) ** 2).mean()


def wd_losses(
    critic: Critic,
    y_real: torch.Tensor,
    y_fake: torch.Tensor,
    gp_lambda: float,
    generator: Optional[torch.Generator] = None,
    epsilon: Optional[torch.Tensor] = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Wasserstein losses with gradient penalty.

    L_D = D(y_fake) - D(y_real) + penalty, computed on a detached y_fake;
    the generator's adversarial term is -D(y_fake), differentiable w.r.t. y_fake.
    """
    loss_d = (
        critic(y_fake.detach()).mean()
        - critic(y_real).mean()
        + gradient_penalty(critic, y_real, y_fake, gp_lambda, generator, epsilon)
    )
    return loss_d, -critic(y_fake).mean()
