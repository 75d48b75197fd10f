"""Cross-style feature normalization and the covariance matching loss.

Feature maps are ``(C, H, W)`` float arrays. Channel statistics use the
population variance with a stabilizer inside the root,
``sigma = sqrt(var + eps**2)``, so ``sigma >= eps`` even for constant channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError
from .rng import derive_seed, keyed_stream, stream

__all__ = [
    "ChannelStats",
    "InstanceNormParams",
    "CsnPolicy",
    "CmlResult",
    "BackboneOutput",
    "DEFAULT_EPS",
    "channel_stats",
    "instance_norm",
    "cross_style_swap",
    "sample_active_layers",
    "flatten",
    "unflatten",
    "gram",
    "cml_loss",
    "finite_diff_check",
    "fixed_point_free_pairing",
    "toy_backbone_forward",
]

DEFAULT_EPS = 1e-5
GRAD_EPS = 1e-12


def _as_map(F, name: str = "feature map") -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 3 or min(F.shape) < 1:
        raise ValidationError(f"{name} must have shape (C, H, W) with positive sizes, got {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValidationError(f"{name} has non-finite values")
    return F


@dataclass(frozen=True)
class ChannelStats:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class InstanceNormParams:
    gamma_affine: np.ndarray
    beta_affine: np.ndarray

    @classmethod
    def identity(cls, channels: int) -> InstanceNormParams:
        return cls(np.ones(channels), np.zeros(channels))


@dataclass(frozen=True)
class CsnPolicy:
    probability: float = 0.1
    max_active: int = 2
    epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.probability <= 1.0:
            problems.append(f"csn.probability must be in [0, 1], got {self.probability}")
        if int(self.max_active) != self.max_active or self.max_active < 1:
            problems.append(f"csn.max_active must be a positive integer, got {self.max_active}")
        if not self.epsilon > 0:
            problems.append(f"csn.epsilon must be > 0, got {self.epsilon}")
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class CmlResult:
    loss: float
    grad_a: np.ndarray
    grad_b: np.ndarray


def channel_stats(F, eps: float = DEFAULT_EPS) -> ChannelStats:
    F = _as_map(F)
    flat = F.reshape(F.shape[0], -1)
    mu = flat.mean(axis=1)
    var = ((flat - mu[:, None]) ** 2).mean(axis=1)
    return ChannelStats(mu, np.sqrt(var + eps * eps))


def instance_norm(F, params: InstanceNormParams | None = None, eps: float = DEFAULT_EPS) -> np.ndarray:
    F = _as_map(F)
    stats = channel_stats(F, eps)
    normed = (F - stats.mu[:, None, None]) / stats.sigma[:, None, None]
    if params is None:
        return normed
    g = np.asarray(params.gamma_affine, dtype=np.float64)[:, None, None]
    b = np.asarray(params.beta_affine, dtype=np.float64)[:, None, None]
    return g * normed + b


def cross_style_swap(F_A, F_B, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Give each map the other's channel mean and std; spatial sizes may differ."""
    F_A = _as_map(F_A, "F_A")
    F_B = _as_map(F_B, "F_B")
    if F_A.shape[0] != F_B.shape[0]:
        raise ValidationError(f"channel count mismatch: {F_A.shape[0]} vs {F_B.shape[0]}")
    sa, sb = channel_stats(F_A, eps), channel_stats(F_B, eps)
    mu_a, sig_a = sa.mu[:, None, None], sa.sigma[:, None, None]
    mu_b, sig_b = sb.mu[:, None, None], sb.sigma[:, None, None]
    return sig_b * (F_A - mu_a) / sig_a + mu_b, sig_a * (F_B - mu_b) / sig_b + mu_a


def sample_active_layers(policy: CsnPolicy, n_layers: int, rng_seed: int) -> np.ndarray:
    """Independent Bernoulli(p) gate per layer, truncated to the earliest ``max_active`` hits."""
    mask = stream(rng_seed).random(n_layers) < policy.probability
    active = np.flatnonzero(mask)
    mask[active[policy.max_active:]] = False
    return mask


def flatten(F) -> np.ndarray:
    """(C, H, W) -> (H*W, C): one row per spatial position."""
    F = np.asarray(F, dtype=np.float64)
    return F.reshape(F.shape[0], -1).T


def unflatten(Fbar, height: int, width: int) -> np.ndarray:
    Fbar = np.asarray(Fbar, dtype=np.float64)
    return Fbar.T.reshape(Fbar.shape[1], height, width)


def gram(F) -> np.ndarray:
    Fbar = flatten(_as_map(F))
    return Fbar.T @ Fbar


def cml_loss(F_A, F_B) -> CmlResult:
    """Frobenius norm of the Gram-matrix difference, with analytic gradients.

    With ``D = G_A - G_B`` and ``L = ||D||_F`` the gradient with respect to the
    flattened map is ``2 * Fbar_A @ D / L`` (and ``-2 * Fbar_B @ D / L``).
    Below ``L = 1e-12`` both gradients are zero, a valid subgradient.
    """
    F_A = _as_map(F_A, "F_A")
    F_B = _as_map(F_B, "F_B")
    if F_A.shape[0] != F_B.shape[0]:
        raise ValidationError(f"channel count mismatch: {F_A.shape[0]} vs {F_B.shape[0]}")
    A, B = flatten(F_A), flatten(F_B)
    D = A.T @ A - B.T @ B
    loss = float(np.sqrt(np.sum(D * D)))
    if loss < GRAD_EPS:
        return CmlResult(loss, np.zeros_like(F_A), np.zeros_like(F_B))
    grad_a = unflatten(2.0 * A @ D / loss, *F_A.shape[1:])
    grad_b = unflatten(-2.0 * B @ D / loss, *F_B.shape[1:])
    return CmlResult(loss, grad_a, grad_b)


def finite_diff_check(F_A, F_B, h: float = 1e-5) -> float:
    """Max over all coordinates of ``|analytic - numeric| / max(1, |numeric|)``."""
    F_A = _as_map(F_A, "F_A").copy()
    F_B = _as_map(F_B, "F_B").copy()
    result = cml_loss(F_A, F_B)
    if not result.loss > 1e-6:
        raise ValidationError(f"loss {result.loss} is too close to the non-smooth point at 0")
    worst = 0.0
    for F, grad in ((F_A, result.grad_a), (F_B, result.grad_b)):
        for idx in np.ndindex(F.shape):
            orig = F[idx]
            F[idx] = orig + h
            up = cml_loss(F_A, F_B).loss
            F[idx] = orig - h
            down = cml_loss(F_A, F_B).loss
            F[idx] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, float(abs(grad[idx] - numeric) / max(1.0, abs(numeric))))
    return worst


# -- toy backbone harness ----------------------------------------------------

LAYER_CHANNELS = (8, 8, 16, 16)


def fixed_point_free_pairing(n: int, seed: int) -> list[tuple[int, int]]:
    """Random perfect matching of ``range(n)``; nobody is paired with itself."""
    if n < 2 or n % 2:
        raise ValidationError(f"pairing needs an even batch of at least 2, got {n}")
    perm = stream(seed).permutation(n)
    return [(int(perm[k]), int(perm[k + 1])) for k in range(0, n, 2)]


def _conv3x3_s2(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
    return np.einsum("bchwij,ocij->bohw", windows, weights, optimize=True)


def _backbone_weights(seed: int, in_channels: int) -> list[np.ndarray]:
    weights = []
    c_in = in_channels
    for layer, c_out in enumerate(LAYER_CHANNELS):
        rng = keyed_stream(seed, "conv", layer)
        weights.append(rng.standard_normal((c_out, c_in, 3, 3)) * math.sqrt(2.0 / (9 * c_in)))
        c_in = c_out
    return weights


@dataclass
class BackboneOutput:
    features: list[np.ndarray]
    active: np.ndarray
    pairs: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    losses: dict[int, list[float]] = field(default_factory=dict)

    @property
    def total_cml(self) -> float | None:
        """Sum of every per-pair loss, or None when no CSN site fired."""
        if not self.losses:
            return None
        return float(sum(sum(v) for v in self.losses.values()))


def toy_backbone_forward(
    batch,
    weights_seed: int,
    policy: CsnPolicy,
    pairing_seed: int,
) -> BackboneOutput:
    """Four stride-2 3x3 conv + ReLU layers with CSN sites after each layer.

    The gate mask comes from :func:`sample_active_layers`. At each active site
    the batch is split into random pairs, each pair's channel statistics are
    swapped, and the covariance matching loss is computed on the swapped maps.
    The swapped maps are what the next layer sees.
    """
    x = np.stack([_as_map(img, "batch item") for img in batch])
    n = x.shape[0]
    if n < 2 or n % 2:
        raise ValidationError(f"batch size must be even and >= 2, got {n}")
    weights = _backbone_weights(weights_seed, x.shape[1])
    active = sample_active_layers(policy, len(weights), derive_seed(pairing_seed, "gate"))
    out = BackboneOutput([], active)
    for layer, w in enumerate(weights):
        x = np.maximum(_conv3x3_s2(x, w), 0.0)
        if active[layer]:
            pairs = fixed_point_free_pairing(n, derive_seed(pairing_seed, "pairs", layer))
            swapped = x.copy()
            losses = []
            for a, b in pairs:
                fa, fb = cross_style_swap(x[a], x[b], policy.epsilon)
                swapped[a], swapped[b] = fa, fb
                losses.append(cml_loss(fa, fb).loss)
            x = swapped
            out.pairs[layer] = pairs
            out.losses[layer] = losses
        out.features.append(x)
    return out
