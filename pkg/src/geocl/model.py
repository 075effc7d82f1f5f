"""Backbone, distance-softmax classifier, and the training losses.

The backbone is a two-layer perceptron (affine, tanh, affine) whose output
is sliced into the factors of the current mixed space. Classification is a
softmax over negated squared product distances to per-class prototype rows.

Two evaluation paths exist: a differentiable one (autodiff tensors, used
for training) and a plain-numpy one (used for evaluation and for frozen
previous-step snapshots).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import Tensor
from .errors import ContractViolation
from .product import MixedSpace


@dataclass(frozen=True)
class Backbone:
    """Two-layer perceptron: input -> hidden (tanh) -> feature."""

    in_dim: int
    hidden_dim: int
    feature_dim: int

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        w1 = rng.normal(0.0, 1.0 / np.sqrt(self.in_dim), (self.in_dim, self.hidden_dim))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(self.hidden_dim), (self.hidden_dim, self.feature_dim))
        return {
            "w1": w1,
            "b1": np.zeros(self.hidden_dim),
            "w2": w2,
            "b2": np.zeros(self.feature_dim),
        }


def features_np(params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params["w1"].shape[0]:
        raise ContractViolation(
            f"input dim {x.shape[1]} != backbone dim {params['w1'].shape[0]}"
        )
    h = np.tanh(x @ params["w1"] + params["b1"])
    return h @ params["w2"] + params["b2"]


def features_t(params: dict[str, Tensor], x: np.ndarray) -> Tensor:
    h = ad.tanh(ad.matmul(Tensor(np.atleast_2d(x)), params["w1"]) + params["b1"])
    return ad.matmul(h, params["w2"]) + params["b2"]


# -- distance logits ----------------------------------------------------

def sq_dist_matrix_np(feats: np.ndarray, protos: np.ndarray, space: MixedSpace,
                      weights: np.ndarray | None = None) -> np.ndarray:
    """(batch, n_proto) matrix of (optionally weighted) squared product distances."""
    feats = np.atleast_2d(feats)
    protos = np.atleast_2d(protos)
    total = np.zeros((feats.shape[0], protos.shape[0]))
    for j, f in enumerate(space.factors):
        u = f.take(feats)[:, None, :]
        v = f.take(protos)[None, :, :]
        x = geometry.exp_map(np.zeros_like(u), u, f.curvature)
        w = geometry.exp_map(np.zeros_like(v), v, f.curvature)
        d = geometry.distance(x, w, f.curvature)
        d2 = d * d
        if weights is not None:
            d2 = weights[j] * d2
        total += d2
    return total


def class_probs_np(feats: np.ndarray, protos: np.ndarray, space: MixedSpace) -> np.ndarray:
    """Softmax over negated squared product distances to the class prototypes."""
    if protos.shape[0] == 0:
        raise ContractViolation("no class prototypes")
    logits = -sq_dist_matrix_np(feats, protos, space)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def _factor_params(space: MixedSpace, kmag: Tensor | None):
    """Yield (factor, magnitude tensor, sign) triples for a space."""
    for j, f in enumerate(space.factors):
        sign = float(np.sign(f.curvature))
        if kmag is None:
            mag = Tensor(abs(f.curvature)) if sign != 0 else Tensor(0.0)
        else:
            mag = ad.item(kmag, f.pool_index)
        yield j, f, mag, sign


def sq_dist_matrix_t(feats: Tensor, protos: Tensor, space: MixedSpace,
                     kmag: Tensor | None = None,
                     weights: Tensor | None = None) -> Tensor:
    """Differentiable counterpart of :func:`sq_dist_matrix_np`.

    ``kmag`` optionally supplies trainable curvature magnitudes indexed by
    pool index; ``weights`` optionally supplies per-factor selection
    weights (same indexing) for the weight-sum loss.
    """
    from . import diffgeo

    b = feats.shape[0]
    n = protos.shape[0]
    total = None
    for j, f, mag, sign in _factor_params(space, kmag):
        u = ad.reshape(ad.cols(feats, f.slice_start - 1, f.slice_end), (b, 1, f.dim))
        v = ad.reshape(ad.cols(protos, f.slice_start - 1, f.slice_end), (1, n, f.dim))
        d2 = diffgeo.lifted_sq_distance(u, v, mag, sign)
        if weights is not None:
            d2 = ad.item(weights, f.pool_index) * d2
        total = d2 if total is None else total + d2
    return total


def ce_loss_t(feats: Tensor, protos: Tensor, labels: np.ndarray, space: MixedSpace,
              kmag: Tensor | None = None, weights: Tensor | None = None) -> Tensor:
    labels = np.asarray(labels)
    if labels.max(initial=-1) >= protos.shape[0]:
        raise ContractViolation("label outside the seen classes")
    logits = -sq_dist_matrix_t(feats, protos, space, kmag=kmag, weights=weights)
    return ad.cross_entropy(logits, labels)


# -- structure preservation ---------------------------------------------

def tangent_concat_t(feats: Tensor, space: MixedSpace) -> Tensor:
    """Concatenated origin-tangent coordinates of the lifted representation.

    Inside the injectivity radius log0(exp0(v)) is exactly v, so the
    tangent is the concatenation of the factor slices of the raw feature;
    computing it this way keeps the result exactly curvature-free.
    """
    return ad.concat([ad.cols(feats, f.slice_start - 1, f.slice_end) for f in space.factors])


def tangent_concat_np(feats: np.ndarray, space: MixedSpace) -> np.ndarray:
    feats = np.atleast_2d(feats)
    return np.concatenate([f.take(feats) for f in space.factors], axis=-1)


def cosine_matrix_np(tangents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs cosine matrix plus a validity mask (nonzero-norm rows)."""
    n = np.linalg.norm(tangents, axis=1, keepdims=True)
    ok = (n[:, 0] > geometry.ZERO_TOL)
    unit = tangents / np.maximum(n, geometry.ZERO_TOL)
    return unit @ unit.T, np.outer(ok, ok)


def angular_reg_loss_t(cur_feats: Tensor, cur_space: MixedSpace,
                       prev_cos: np.ndarray, valid: np.ndarray) -> Tensor:
    """Huber penalty on changes of pairwise origin-tangent cosines.

    ``prev_cos``/``valid`` come from the frozen previous-step model; pairs
    with a degenerate tangent on either side are skipped via the mask.
    """
    from . import diffgeo

    q = tangent_concat_t(cur_feats, cur_space)
    cur_ok = np.linalg.norm(q.value, axis=1) > geometry.ZERO_TOL
    b = q.shape[0]
    mask = np.triu(np.ones((b, b)), k=1) * valid * np.outer(cur_ok, cur_ok)
    cos_cur = diffgeo.pairwise_cosines(q)
    per_pair = ad.huber(cos_cur, Tensor(prev_cos))
    # Averaged over pairs so the batch-pair count does not set the scale.
    return ad.sum_(per_pair * Tensor(mask)) * (1.0 / max(mask.sum(), 1.0))


def neighbor_sets(sq_dists: np.ndarray, labels: np.ndarray, tau2: float):
    """Within/between neighbor masks from snapshot squared distances."""
    labels = np.asarray(labels)
    close = sq_dists < tau2
    np.fill_diagonal(close, False)
    same = labels[:, None] == labels[None, :]
    return close & same, close & ~same


def affinity_matrix(sq_dists: np.ndarray, labels: np.ndarray, tau2: float) -> np.ndarray:
    """Pairwise affinity: +1 within-class neighbors, -1 between-class, else 0.

    The neighbor relation is symmetrized ("either direction"), which makes
    the masks symmetric already since the distance matrix is.
    """
    within, between = neighbor_sets(sq_dists, labels, tau2)
    w = (within | within.T).astype(float)
    b = (between | between.T).astype(float)
    return w - b


def tau2_same_class_mean(sq_dists: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared snapshot distance over distinct same-class pairs."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    if not same.any():
        return 0.0
    return float(sq_dists[same].mean())


def neighbor_robustness_loss_t(cur_feats: Tensor, cur_space: MixedSpace,
                               affinity: np.ndarray, kmag: Tensor | None = None,
                               repulsion_cap: float | None = None) -> Tensor:
    """Signed sum of current pairwise squared distances, weighted by affinity."""
    b = cur_feats.shape[0]
    psi2 = sq_dist_matrix_t(cur_feats, cur_feats, cur_space, kmag=kmag)
    weight = np.triu(np.ones((b, b)), k=1) * affinity
    if repulsion_cap is not None:
        # Stop pushing apart pairs already separated past the cap.
        capped = (affinity < 0) & (psi2.value > repulsion_cap)
        weight = np.where(capped, 0.0, weight)
    n_pairs = b * (b - 1) / 2.0
    return ad.sum_(psi2 * Tensor(weight)) * (1.0 / max(n_pairs, 1.0))


def total_loss_t(ce: Tensor, lam1: float, global_term: Tensor | None,
                 lam2: float, local_term: Tensor | None) -> Tensor:
    loss = ce
    if global_term is not None:
        loss = loss + lam1 * global_term
    if local_term is not None:
        loss = loss + lam2 * local_term
    return loss


# -- checkpointing ------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, backbone: Backbone, params: dict[str, np.ndarray],
                    classifier: np.ndarray, factors, kmag: np.ndarray,
                    signs: np.ndarray, weights: np.ndarray, rng_state: dict):
    payload = {
        "version": CHECKPOINT_VERSION,
        "backbone": {"in_dim": backbone.in_dim, "hidden_dim": backbone.hidden_dim,
                     "feature_dim": backbone.feature_dim},
        "params": {k: v.tolist() for k, v in params.items()},
        "classifier": np.asarray(classifier).tolist(),
        "factors": [
            {"pool_index": f.pool_index, "slice_start": f.slice_start,
             "slice_end": f.slice_end, "curvature": f.curvature, "weight": f.weight}
            for f in factors
        ],
        "curvature_magnitudes": np.asarray(kmag).tolist(),
        "curvature_signs": np.asarray(signs).tolist(),
        "selection_weights": np.asarray(weights).tolist(),
        "rng_state": rng_state,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    from .product import FactorSpec

    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ContractViolation(f"unsupported checkpoint version {payload.get('version')}")
    payload["params"] = {k: np.asarray(v) for k, v in payload["params"].items()}
    payload["classifier"] = np.asarray(payload["classifier"])
    payload["factors"] = [FactorSpec(**f) for f in payload["factors"]]
    for key in ("curvature_magnitudes", "curvature_signs", "selection_weights"):
        payload[key] = np.asarray(payload[key])
    payload["backbone"] = Backbone(**payload["backbone"])
    return payload
