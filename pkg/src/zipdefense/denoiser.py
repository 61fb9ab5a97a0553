"""Closed-form noise predictors standing in for a trained diffusion network.

Each backend computes the exact posterior mean ``E[x0 | x_t]`` under its prior
and converts it into a noise prediction through the forward-process identity
``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.
"""

from __future__ import annotations

import abc

import numpy as np

from zipdefense.schedule import NoiseSchedule


class Denoiser(abc.ABC):
    """Noise predictor ``g(x_t, t)`` operating on latents shaped ``(..., H, W, C)``."""

    @abc.abstractmethod
    def posterior_mean(self, x_t: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        ...

    def predict_epsilon(self, x_t, t: int, s: NoiseSchedule) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        ab = s.abar(t)
        noise_var = 1.0 - ab
        if noise_var <= 0.0:
            return np.zeros_like(x_t)
        x0 = self.posterior_mean(x_t, t, s)
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(noise_var)


class DiscreteDatasetDenoiser(Denoiser):
    """Bayes-optimal denoiser for a uniform prior over a finite reference set.

    Samples drawn with it collapse onto the references, which is exactly the
    "generate only from the training distribution" behaviour the defense
    relies on.
    """

    def __init__(self, refs):
        refs = np.asarray(refs, dtype=np.float64)
        if refs.ndim != 4 or refs.shape[0] == 0:
            raise ValueError(f"refs must be a non-empty (N, H, W, C) stack, got shape {refs.shape}")
        self.refs = refs
        self.refs.setflags(write=False)
        self._flat = refs.reshape(refs.shape[0], -1)
        self._sqnorm = np.einsum("nd,nd->n", self._flat, self._flat)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.refs.shape[1:]

    def _flatten(self, x_t: np.ndarray) -> np.ndarray:
        if x_t.shape[-3:] != self.shape:
            raise ValueError(f"latent shape {x_t.shape[-3:]} does not match reference shape {self.shape}")
        return x_t.reshape(-1, self._flat.shape[1])

    def weights(self, x_t, t: int, s: NoiseSchedule) -> np.ndarray:
        """Posterior weights over references, shape ``(..., N)``."""
        x_t = np.asarray(x_t, dtype=np.float64)
        flat = self._flatten(x_t)
        ab = s.abar(t)
        # ||x||^2 is common to every reference and cancels in the softmax
        logits = (np.sqrt(ab) * flat @ self._flat.T - 0.5 * ab * self._sqnorm) / (1.0 - ab)
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        return w.reshape(*x_t.shape[:-3], -1)

    def posterior_mean(self, x_t, t: int, s: NoiseSchedule) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        w = self.weights(x_t, t, s).reshape(-1, self.refs.shape[0])
        return (w @ self._flat).reshape(x_t.shape)


class AnalyticGaussianDenoiser(Denoiser):
    """Exact denoiser for an isotropic Gaussian prior ``N(mu, std^2 I)``."""

    def __init__(self, mu, std: float):
        if not std > 0:
            raise ValueError(f"prior std must be positive, got {std}")
        self.mu = np.asarray(mu, dtype=np.float64)
        self.std = float(std)

    def posterior_mean(self, x_t, t: int, s: NoiseSchedule) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        if self.mu.ndim and np.broadcast_shapes(self.mu.shape, x_t.shape) != x_t.shape:
            raise ValueError(f"prior mean shape {self.mu.shape} incompatible with {x_t.shape}")
        ab = s.abar(t)
        v = self.std ** 2
        return (v * np.sqrt(ab) * x_t + (1.0 - ab) * self.mu) / (v * ab + (1.0 - ab))


class TiledDenoiser(Denoiser):
    """Applies ``inner`` independently to every ``tile_h x tile_w`` tile of a mosaic.

    This is the exact posterior for a prior that factorises over tiles, so a
    mosaic of unrelated images is denoised as if each image were alone.
    """

    def __init__(self, inner: Denoiser, tile_h: int, tile_w: int):
        self.inner = inner
        self.tile_h = int(tile_h)
        self.tile_w = int(tile_w)

    def posterior_mean(self, x_t, t: int, s: NoiseSchedule) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        *lead, H, W, C = x_t.shape
        th, tw = self.tile_h, self.tile_w
        if H % th or W % tw:
            raise ValueError(f"mosaic {H}x{W} is not a whole number of {th}x{tw} tiles")
        r, c = H // th, W // tw
        n = len(lead)
        tiles = x_t.reshape(*lead, r, th, c, tw, C)
        tiles = np.moveaxis(tiles, n + 2, n + 1)  # (..., r, c, th, tw, C)
        out = self.inner.posterior_mean(tiles, t, s)
        out = np.moveaxis(out, n + 1, n + 2)
        return out.reshape(x_t.shape)
