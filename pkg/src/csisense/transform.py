"""Spatial-frequency <-> angular-delay conversion and input normalization.

Both DFT matrices use the unitary 1/sqrt(N) convention, so the round trip is
exact and truncation loss obeys Parseval: the energy removed by dropping
delay rows equals the reconstruction error exactly.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

DEFAULT_DELAY_TAPS = 32


def dft_matrix(n):
    """Unitary DFT matrix, F[j, k] = exp(-2i pi jk / n) / sqrt(n)."""
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)


@dataclass(frozen=True)
class DftPlan:
    f_delay: np.ndarray
    f_angle: np.ndarray
    n_delay: int

    @property
    def n_subcarriers(self):
        return self.f_delay.shape[0]

    @property
    def n_antennas(self):
        return self.f_angle.shape[0]


def make_plan(subcarriers, antennas, n_delay=DEFAULT_DELAY_TAPS) -> DftPlan:
    if not 1 <= n_delay <= subcarriers:
        raise ConfigError(f"n_delay {n_delay} outside [1, {subcarriers}]")
    return DftPlan(dft_matrix(subcarriers), dft_matrix(antennas), n_delay)


def _check_dims(h, plan):
    if h.shape[-2:] != (plan.n_subcarriers, plan.n_antennas):
        raise ShapeError(
            f"channel shape {h.shape[-2:]} does not match plan "
            f"({plan.n_subcarriers}, {plan.n_antennas})"
        )


def to_angular_delay(h, plan: DftPlan):
    """Full complex angular-delay matrix; works on (..., N_c, N_t) batches."""
    _check_dims(h, plan)
    return plan.f_delay.conj().T @ h @ plan.f_angle


def from_angular_delay(hhat, plan: DftPlan):
    """Inverse of to_angular_delay."""
    if hhat.shape[-2:] != (plan.n_subcarriers, plan.n_antennas):
        raise ShapeError(f"angular-delay shape {hhat.shape[-2:]} does not match plan")
    return plan.f_delay @ hhat @ plan.f_angle.conj().T


def truncate_and_split(hhat, n_delay):
    """Keep the first n_delay delay rows, split real/imag into two channels.

    Returns (tensor, energy_retained); tensor is (..., 2, n_delay, N_t) real,
    energy_retained the per-sample kept-energy fraction (1.0 for zero input).
    """
    if n_delay > hhat.shape[-2]:
        raise ShapeError(f"n_delay {n_delay} exceeds {hhat.shape[-2]} rows")
    kept = hhat[..., :n_delay, :]
    total = np.sum(np.abs(hhat) ** 2, axis=(-2, -1))
    kept_e = np.sum(np.abs(kept) ** 2, axis=(-2, -1))
    energy = np.where(total > 0, kept_e / np.where(total > 0, total, 1.0), 1.0)
    tensor = np.stack([kept.real, kept.imag], axis=-3)
    if tensor.ndim == 3:
        return tensor, float(energy)
    return tensor, energy


def merge_to_complex(tensor):
    """(..., 2, n_delay, N_t) real channels back to a complex matrix."""
    if tensor.shape[-3] != 2:
        raise ShapeError(f"expected 2 channels, got shape {tensor.shape}")
    return tensor[..., 0, :, :] + 1j * tensor[..., 1, :, :]


def embed_truncated(hhat_trunc, subcarriers):
    """Zero-pad truncated delay rows back to the full subcarrier count."""
    shape = hhat_trunc.shape[:-2] + (subcarriers, hhat_trunc.shape[-1])
    out = np.zeros(shape, dtype=hhat_trunc.dtype)
    out[..., : hhat_trunc.shape[-2], :] = hhat_trunc
    return out


@dataclass(frozen=True)
class NormStats:
    """Dataset-global min-max affine map: x -> (x - offset) / scale."""

    offset: float
    scale: float


def fit_norm(tensors) -> NormStats:
    """Min-max stats over training tensors only (callers must not pass test data)."""
    lo = float(np.min(tensors))
    hi = float(np.max(tensors))
    if hi == lo:
        warnings.warn("constant training tensors; normalization centers on 0.5")
        return NormStats(offset=lo - 0.5, scale=1.0)
    return NormStats(offset=lo, scale=hi - lo)


def normalize(tensor, stats: NormStats):
    return (tensor - stats.offset) / stats.scale


def denormalize(tensor, stats: NormStats):
    return tensor * stats.scale + stats.offset
