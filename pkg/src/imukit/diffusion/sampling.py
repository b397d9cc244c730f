"""Ancestral reverse sampling and noise-then-denoise editing."""

from __future__ import annotations

import numpy as np

from imukit.diffusion.model import predict_noise
from imukit.diffusion.schedule import forward_diffuse


def reverse_step(model, x_t, t, prompt, rng, sigma_override=None):
    """One denoising step from level t to level t-1.

    x_(t-1) = (x_t - (1-a_t)/sqrt(1-abar_t) * eps_hat) / sqrt(a_t) + sigma_t * z
    with z drawn from rng and sigma_t = sqrt(beta_t) unless overridden.
    """
    sched = model.schedule
    if not (1 <= t < sched.T):
        raise ValueError(f"reverse_step: timestep {t} outside [1, {sched.T})")
    x_t = np.asarray(x_t, dtype=np.float32)
    eps_hat, _ = predict_noise(model, x_t, t, prompt)
    a = sched.alpha[t]
    abar = sched.alpha_bar[t]
    coef = np.float32((1.0 - a) / np.sqrt(1.0 - abar))
    mean = (x_t - coef * eps_hat.data) * np.float32(1.0 / np.sqrt(a))
    sigma = sched.sigma[t] if sigma_override is None else sigma_override
    if sigma == 0.0:
        return mean
    z = rng.standard_normal(x_t.shape).astype(np.float32)
    return mean + np.float32(sigma) * z


def edit(model, x, edit_prompt, t_edit, rng):
    """Noise the image to level t_edit, then denoise under the edit caption.

    t_edit = 0 applies no diffusion at all and returns the clamped input.
    Output is clamped to [0, 1]. Deterministic for a fixed rng seed.
    """
    sched = model.schedule
    if not (0 <= t_edit < sched.T):
        raise ValueError(f"edit: t_edit {t_edit} outside [0, {sched.T})")
    x = np.asarray(x, dtype=np.float32)
    if t_edit == 0:
        return np.clip(x, 0.0, 1.0)
    eps = rng.standard_normal(x.shape).astype(np.float32)
    x_t = forward_diffuse(sched, x, t_edit, eps)
    for t in range(t_edit, 0, -1):
        x_t = reverse_step(model, x_t, t, edit_prompt, rng)
    return np.clip(x_t, 0.0, 1.0)
