"""Probabilistic fusion baselines over single-stream features and posteriors.

Three classical combiners: the product rule on output probabilities, a
Gaussian naive Bayes over concatenated features, and a one-vs-rest linear
SVM trained by hinge-loss subgradient descent. The affordance posterior is
lifted to object space through the valid-combination matrix with a uniform
conditional: P(object | affordance) spreads each affordance's mass evenly
over the objects that afford it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .taxonomy import Taxonomy, TAXONOMY

VAR_FLOOR = 1e-6


@dataclass
class FeaturePair:
    """Penultimate-layer features from both streams plus the object label."""

    app_feat: np.ndarray
    aff_feat: np.ndarray
    label: int

    @property
    def concat(self) -> np.ndarray:
        return np.concatenate([self.app_feat, self.aff_feat])


def lift_affordance_posterior(aff_post: np.ndarray,
                              taxonomy: Taxonomy = TAXONOMY) -> np.ndarray:
    """13-way affordance posterior -> 14-way object-space distribution."""
    valid = taxonomy.valid.astype(np.float64)
    colsum = valid.sum(axis=0)
    return valid @ (np.asarray(aff_post, dtype=np.float64) / colsum)


def product_rule_fuse(obj_post: np.ndarray, aff_post: np.ndarray,
                      taxonomy: Taxonomy = TAXONOMY) -> np.ndarray:
    """Elementwise product of the object posterior with the lifted affordance
    posterior, renormalized. Zero total mass falls back to the object
    posterior with a warning."""
    obj_post = np.asarray(obj_post, dtype=np.float64)
    lifted = lift_affordance_posterior(aff_post, taxonomy)
    fused = obj_post * lifted
    total = fused.sum()
    if total <= 0.0:
        warnings.warn("product rule produced zero mass; falling back to the "
                      "object posterior")
        return obj_post.copy()
    return fused / total


# ---------------------------------------------------------------------------
# naive Bayes


@dataclass
class NbModel:
    means: np.ndarray      # (classes, features)
    variances: np.ndarray  # (classes, features), floored
    priors: np.ndarray     # (classes,)


def nb_fit(pairs: Sequence[FeaturePair], n_classes: int = 14) -> NbModel:
    feats = np.stack([p.concat for p in pairs])
    labels = np.array([p.label for p in pairs])
    dim = feats.shape[1]
    means = np.zeros((n_classes, dim))
    variances = np.full((n_classes, dim), VAR_FLOOR)
    counts = np.zeros(n_classes)
    for c in range(n_classes):
        members = feats[labels == c]
        counts[c] = len(members)
        if len(members) == 0:
            continue
        means[c] = members.mean(axis=0)
        if len(members) < 2:
            warnings.warn(f"class {c} has {len(members)} sample(s); variance floored")
        else:
            variances[c] = np.maximum(members.var(axis=0), VAR_FLOOR)
    total = counts.sum()
    priors = counts / total if total else np.full(n_classes, 1.0 / n_classes)
    return NbModel(means, variances, priors)


def nb_predict(model: NbModel, pair: FeaturePair) -> np.ndarray:
    """Posterior over classes: softmax of per-class Gaussian log scores."""
    x = pair.concat
    with np.errstate(divide="ignore"):
        log_prior = np.where(model.priors > 0, np.log(np.maximum(model.priors, 1e-300)),
                             -np.inf)
    log_lik = -0.5 * (np.log(2 * np.pi * model.variances)
                      + (x - model.means) ** 2 / model.variances).sum(axis=1)
    scores = log_prior + log_lik
    scores = np.where(np.isfinite(scores), scores, -1e300)
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


# ---------------------------------------------------------------------------
# linear SVM (one-vs-rest, hinge subgradient)


@dataclass
class SvmModel:
    weights: np.ndarray  # (classes, features)
    biases: np.ndarray   # (classes,)


def svm_fit(pairs: Sequence[FeaturePair], epochs: int = 200, lr: float = 0.05,
            reg: float = 1e-4, n_classes: int = 14) -> SvmModel:
    """Full-batch subgradient descent on the regularized hinge loss,
    one binary margin per class."""
    feats = np.stack([p.concat for p in pairs])
    labels = np.array([p.label for p in pairs])
    n, dim = feats.shape
    w = np.zeros((n_classes, dim))
    b = np.zeros(n_classes)
    ys = np.where(labels[None, :] == np.arange(n_classes)[:, None], 1.0, -1.0)
    for _ in range(epochs):
        margins = ys * (w @ feats.T + b[:, None])  # (classes, n)
        viol = margins < 1.0
        grad_w = reg * w - (ys * viol) @ feats / n
        grad_b = -(ys * viol).sum(axis=1) / n
        w -= lr * grad_w
        b -= lr * grad_b
    return SvmModel(w, b)


def svm_margins(model: SvmModel, pair: FeaturePair) -> np.ndarray:
    return model.weights @ pair.concat + model.biases


def svm_predict(model: SvmModel, pair: FeaturePair) -> int:
    return int(np.argmax(svm_margins(model, pair)))
