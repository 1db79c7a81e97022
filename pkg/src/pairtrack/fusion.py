"""Cross-modal feature fusion: Gram alignment and hypergraph convolution.

The alignment half maps one modality's tokens through the other modality's
Frobenius-normalized Gram matrix, blends with a learnable scalar, and fuses
the two directions through a fully connected layer. The hypergraph half
groups vertices by epsilon-balls in feature space and applies a residual
degree-normalized convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError
from .numerics import (
    Parameter,
    Tensor,
    add,
    concat,
    constant,
    linear,
    matmul,
    mul,
    pow_const,
    reciprocal,
    scale,
    transpose,
    tsum,
)


@dataclass
class ModalityKeys:
    """Key tokens of the two modalities; shapes must agree."""

    k_r: Tensor
    k_x: Tensor

    def __post_init__(self):
        if self.k_r.shape != self.k_x.shape or self.k_r.ndim != 2:
            raise ShapeError(
                f"modality keys must share a [T, D] shape, got "
                f"{self.k_r.shape} and {self.k_x.shape}"
            )


@dataclass
class AlignWeights:
    """Learnable scalar blend weights for the two mapping directions."""

    w_r: Parameter
    w_x: Parameter


@dataclass
class GramBasis:
    """Raw Gram g = k^T k, its Frobenius norm, and the normalized basis."""

    g: Tensor
    norm: float
    normalized: Tensor


@dataclass
class Hypergraph:
    """Binary incidence with one epsilon-ball hyperedge per vertex."""

    incidence: np.ndarray
    d_v: np.ndarray
    d_e: np.ndarray
    epsilon: float


@dataclass
class HyperConvParams:
    theta1: Parameter
    theta2: Parameter


def multi_level_fuse(levels: list[Tensor], w, b=None) -> Tensor:
    """Concatenate per-layer features along the feature axis and project."""
    if not levels:
        raise ContractError("multi_level_fuse: empty level list")
    shape = levels[0].shape
    for lvl in levels[1:]:
        if lvl.shape != shape:
            raise ContractError(
                f"multi_level_fuse: shapes differ: {shape} vs {lvl.shape}"
            )
    return linear(concat(levels, axis=1), w, b)


def gram_basis(k: Tensor) -> GramBasis:
    """Gram matrix of key columns, Frobenius-normalized into a basis map."""
    if k.ndim != 2 or k.shape[0] < 1:
        raise ShapeError(f"gram_basis expects [T, D] keys with T >= 1, got {k.shape}")
    g = matmul(transpose(k), k)
    norm_sq = tsum(mul(g, g))
    norm_value = float(np.sqrt(norm_sq.data))
    if not norm_value > 0.0:
        raise DegenerateInputError("gram_basis: zero-norm Gram (zero key matrix)")
    norm_t = pow_const(norm_sq, 0.5)
    normalized = scale(g, reciprocal(norm_t))
    return GramBasis(g=g, norm=norm_value, normalized=normalized)


def gram_map(k_src: Tensor, basis: GramBasis) -> Tensor:
    """Map tokens through the target modality's normalized Gram basis."""
    if not basis.norm > 0.0:
        raise DegenerateInputError("gram_map: degenerate basis")
    return matmul(k_src, basis.normalized)


def align_fuse(k_self: Tensor, k_mapped: Tensor, w) -> Tensor:
    """k_self + w * k_mapped with a learnable scalar w."""
    wt = w.tensor if hasattr(w, "tensor") else w
    return add(k_self, scale(k_mapped, wt))


def cross_align(keys: ModalityKeys, weights: AlignWeights, fc_w, fc_b=None) -> Tensor:
    """Bidirectional Gram alignment followed by concat + fully connected."""
    basis_r = gram_basis(keys.k_r)
    basis_x = gram_basis(keys.k_x)
    f_x = align_fuse(keys.k_x, gram_map(keys.k_x, basis_r), weights.w_x)
    f_r = align_fuse(keys.k_r, gram_map(keys.k_r, basis_x), weights.w_r)
    return linear(concat([f_x, f_r], axis=1), fc_w, fc_b)


def build_hypergraph(x, epsilon: float) -> Hypergraph:
    """One hyperedge per vertex: all vertices strictly within ``epsilon``.

    ``x`` may be a Tensor or array; the structure is discrete and carries
    no gradient.
    """
    values = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ContractError(f"build_hypergraph expects [V, D] features, got {values.shape}")
    if not epsilon > 0:
        raise ContractError(f"build_hypergraph: epsilon must be positive, got {epsilon}")
    incidence = (_pairwise_distances(values) < epsilon).astype(np.int64)
    # column e = ball around vertex e; the diagonal is always 1
    return Hypergraph(
        incidence=incidence,
        d_v=incidence.sum(axis=1),
        d_e=incidence.sum(axis=0),
        epsilon=float(epsilon),
    )


def _pairwise_distances(values: np.ndarray) -> np.ndarray:
    sq = np.sum(values * values, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (values @ values.T)
    np.maximum(d2, 0.0, out=d2)  # guard rounding-induced tiny negatives
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def pairwise_mean_distance(x) -> float:
    """Mean Euclidean distance over distinct vertex pairs (0 if fewer than 2)."""
    values = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    v = values.shape[0]
    if v < 2:
        return 0.0
    return float(_pairwise_distances(values).sum() / (v * (v - 1)))


def auto_epsilon(x, factor: float = 0.5, fallback: float = 1.0) -> float:
    """Scale-adaptive ball radius: ``factor`` times the mean pairwise distance."""
    mean_dist = pairwise_mean_distance(x)
    return factor * mean_dist if mean_dist > 0 else fallback


def propagation_matrix(hg: Hypergraph) -> np.ndarray:
    """Row-stochastic operator D_v^-1 H D_e^-1 H^T."""
    h = hg.incidence.astype(np.float64)
    return (h / hg.d_v[:, None]) @ (h.T / hg.d_e[:, None])


def hyperconv(x: Tensor, hg: Hypergraph, params: HyperConvParams) -> Tensor:
    """Residual hypergraph convolution: x + P x Theta1 Theta2."""
    if hg.incidence.shape[0] != x.shape[0]:
        raise ShapeError(
            f"hyperconv: {x.shape[0]} vertices vs incidence {hg.incidence.shape}"
        )
    if np.any(hg.d_v < 1) or np.any(hg.d_e < 1):
        raise ContractError("hyperconv: hypergraph has a zero degree")
    p = constant(propagation_matrix(hg))
    propagated = matmul(matmul(matmul(p, x), params.theta1.tensor), params.theta2.tensor)
    return add(x, propagated)
