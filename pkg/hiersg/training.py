"""
Training Module
Losses, analytic gradients and a constant learning-rate SGD loop.

Gradients are backpropagated by hand through the head (projection, super-
category softmax, per-category softmaxes, optional flat head) in float64 and
checked against central finite differences in the test suite.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from hiersg.commonsense import AlignmentSets
from hiersg.constants import DEFAULT_LAMBDA_STRONG, DEFAULT_LAMBDA_WEAK, DEFAULT_TEMPERATURE, PROB_CLAMP
from hiersg.core_model import RelationHierarchy, SceneGraph, Triplet
from hiersg.error_handler import MissingFlatHead, ShapeMismatch, TargetCategoryMismatch
from hiersg.performance import timed
from hiersg.relhead import ComposedDistribution, HeadParameters, hierarchical_scores, project, softmax

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the loss terms and the contrastive temperature."""
    w_sup: float = 1.0
    w_sub: float = 1.0
    w_con: float = 1.0
    temperature: float = DEFAULT_TEMPERATURE
    w_flat: float = 0.0
    normalize_contrastive: bool = True

    def __post_init__(self):
        if min(self.w_sup, self.w_sub, self.w_con, self.w_flat) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True, eq=False)
class TrainingSample:
    """
    One directed pair: pooled input u (length 2*(h+1)) and its targets.

    target_rel is None exactly when target_sc is the background index.
    """
    u: np.ndarray
    target_sc: int
    target_rel: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'u', np.asarray(self.u, dtype=np.float64))

    @classmethod
    def for_relation(cls, u: np.ndarray, relation: Optional[int], hierarchy: RelationHierarchy) -> 'TrainingSample':
        if relation is None:
            return cls(u, hierarchy.background_index, None)
        return cls(u, hierarchy.category_of(relation), relation)

    @property
    def is_background(self) -> bool:
        return self.target_rel is None


@dataclass(frozen=True, eq=False)
class GradientSet:
    """Gradients keyed by parameter name, mirroring HeadParameters.named_arrays()."""
    grads: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def names(self) -> List[str]:
        return list(self.grads)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.grads.values())


@dataclass
class TrainingResult:
    """Final parameters and per-step losses (loss before each update)."""
    params: HeadParameters
    losses: List[float] = field(default_factory=list)
    final_loss: float = 0.0


def check_targets(samples: Sequence[TrainingSample], h: RelationHierarchy) -> None:
    for i, s in enumerate(samples):
        if s.target_sc == h.background_index:
            if s.target_rel is not None:
                raise TargetCategoryMismatch(f"sample {i}: background target carries relation {s.target_rel}")
            continue
        if s.target_rel is None or not 0 <= s.target_sc < h.num_categories:
            raise TargetCategoryMismatch(f"sample {i}: category {s.target_sc} needs a relation target")
        if h.assignment.get(s.target_rel) != s.target_sc:
            raise TargetCategoryMismatch(
                f"sample {i}: relation {s.target_rel} is not in category {h.super_categories[s.target_sc]}")


# Component losses on a single composed distribution

def loss_super(cd: ComposedDistribution, target_sc: int) -> float:
    """-log r_sc[target_sc]."""
    return float(-np.log(max(cd.r_sc[target_sc], PROB_CLAMP)))


def loss_sub(cd: ComposedDistribution, target_sc: int, target_rel: Optional[int], h: RelationHierarchy) -> float:
    """-log joint[target_sc][target_rel]; zero for background targets."""
    if target_sc == h.background_index:
        return 0.0
    if target_rel is None or h.assignment.get(target_rel) != target_sc:
        raise TargetCategoryMismatch(f"relation {target_rel} is not in category {target_sc}")
    joint = cd.joint[target_sc][h.position_in_category(target_rel)]
    return float(-np.log(max(joint, PROB_CLAMP)))


def _l2_normalize(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.maximum(np.linalg.norm(X, axis=1, keepdims=True), PROB_CLAMP)
    return X / norms, norms


def _l2_normalize_backward(Y: np.ndarray, norms: np.ndarray, dY: np.ndarray) -> np.ndarray:
    return (dY - Y * np.sum(Y * dY, axis=1, keepdims=True)) / norms


def _contrastive(Y: np.ndarray, labels: np.ndarray, temperature: float) -> Tuple[float, np.ndarray]:
    """
    Supervised contrastive loss over rows of Y and its gradient.

    Anchor a contributes logsumexp_{n in N(a)} s_an - mean_{p in P(a)} s_ap
    with s = y_a . y / temperature. The mean is over anchors with a non-empty
    positive set; anchors without negatives count as zero.
    """
    M = len(labels)
    S = Y @ Y.T / temperature
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(M, dtype=bool)
    neg = ~same
    n_pos = pos.sum(axis=1)
    n_neg = neg.sum(axis=1)
    anchors = n_pos > 0
    num_anchors = int(anchors.sum())
    if num_anchors == 0:
        return 0.0, np.zeros_like(Y)

    valid = anchors & (n_neg > 0)
    row_max = np.where(n_neg > 0, np.max(np.where(neg, S, -np.inf), axis=1), 0.0)
    exp_neg = np.exp(np.where(neg, S - row_max[:, None], -np.inf))
    sum_neg = np.where(valid, exp_neg.sum(axis=1), 1.0)
    lse = row_max + np.log(sum_neg)
    safe_pos = np.maximum(n_pos, 1)[:, None]
    pos_mean = np.sum(np.where(pos, S, 0.0), axis=1) / safe_pos[:, 0]
    loss = float(np.sum(np.where(valid, lse - pos_mean, 0.0)) / num_anchors)

    dS = np.where(valid[:, None], exp_neg / sum_neg[:, None] - pos / safe_pos, 0.0) / num_anchors
    dG = dS / temperature
    return loss, (dG + dG.T) @ Y


def loss_contrastive(batch: Sequence[Tuple[np.ndarray, int]], temperature: float = DEFAULT_TEMPERATURE,
                     normalize: bool = False) -> float:
    """Supervised contrastive loss of (feature, relation label) pairs; raw dot products unless normalize."""
    if len(batch) < 2:
        raise ValueError("contrastive loss needs at least two samples")
    X = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    labels = np.asarray([label for _, label in batch])
    if normalize:
        X, _ = _l2_normalize(X)
    return _contrastive(X, labels, temperature)[0]


def loss_distill(t: Triplet, aligned: AlignmentSets, lambda_weak: float = DEFAULT_LAMBDA_WEAK,
                 lambda_strong: float = DEFAULT_LAMBDA_STRONG) -> float:
    """lambda_weak if t is not known-aligned, plus lambda_strong if t is known-violated."""
    penalty = 0.0
    if t not in aligned.aligned:
        penalty += lambda_weak
    if t in aligned.violated:
        penalty += lambda_strong
    return penalty


def candidate_penalties(graph: SceneGraph, sets: AlignmentSets, lambda_weak: float = DEFAULT_LAMBDA_WEAK,
                        lambda_strong: float = DEFAULT_LAMBDA_STRONG) -> List[float]:
    """loss_distill for every predicted candidate of a graph, in candidate order."""
    return [loss_distill(graph.candidate_triplet(c), sets, lambda_weak, lambda_strong)
            for c in graph.pred_candidates]


# Batch loss and gradients

def _cross_entropy(P: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    """Summed -log P[n, t_n] and its logits gradient (zero where the clamp is active)."""
    rows = np.arange(len(targets))
    p_t = P[rows, targets]
    grad = P.copy()
    grad[rows, targets] -= 1.0
    grad[p_t < PROB_CLAMP] = 0.0
    return float(np.sum(-np.log(np.maximum(p_t, PROB_CLAMP)))), grad


def total_loss_and_grads(samples: Sequence[TrainingSample], p: HeadParameters, h: RelationHierarchy,
                         w: LossWeights) -> Tuple[float, GradientSet]:
    """
    w_sup*mean(L_sup) + w_sub*mean(L_sub) + w_con*L_con (+ w_flat*mean(flat CE)),
    with gradients for every parameter in p.
    """
    if not samples:
        raise ValueError("training batch is empty")
    p.check_hierarchy(h)
    check_targets(samples, h)

    n = len(samples)
    U = np.stack([s.u for s in samples])
    X = project(U, p)
    R, Q = hierarchical_scores(X, p)
    t_sc = np.asarray([s.target_sc for s in samples])

    loss = 0.0
    dZ_sc = np.zeros_like(R)
    dZ_cat = [np.zeros_like(q) for q in Q]
    dX = np.zeros_like(X)

    if w.w_sup:
        total, grad = _cross_entropy(R, t_sc)
        loss += w.w_sup * total / n
        dZ_sc += w.w_sup * grad / n

    if w.w_sub:
        total = 0.0
        for c in range(h.num_categories):
            idx = np.flatnonzero(t_sc == c)
            if idx.size == 0:
                continue
            rows = np.arange(idx.size)
            positions = np.asarray([h.position_in_category(samples[i].target_rel) for i in idx])
            joint = Q[c][idx, positions] * R[idx, c]
            active = joint >= PROB_CLAMP
            total += float(np.sum(-np.log(np.maximum(joint, PROB_CLAMP))))
            grad_q = Q[c][idx].copy()
            grad_q[rows, positions] -= 1.0
            grad_r = R[idx].copy()
            grad_r[:, c] -= 1.0
            grad_q[~active] = 0.0
            grad_r[~active] = 0.0
            dZ_cat[c][idx] += w.w_sub * grad_q / n
            dZ_sc[idx] += w.w_sub * grad_r / n
        loss += w.w_sub * total / n

    dZ_flat = None
    if w.w_flat:
        if not p.has_flat:
            raise MissingFlatHead("w_flat > 0 needs parameters initialized with a flat head")
        background = p.W_flat.shape[1] - 1
        t_flat = np.asarray([background if s.is_background else s.target_rel for s in samples])
        total, grad = _cross_entropy(softmax(X @ p.W_flat + p.b_flat), t_flat)
        loss += w.w_flat * total / n
        dZ_flat = w.w_flat * grad / n
        dX += dZ_flat @ p.W_flat.T

    if w.w_con:
        idx = np.asarray([i for i, s in enumerate(samples) if not s.is_background], dtype=int)
        if idx.size >= 2:
            labels = np.asarray([samples[i].target_rel for i in idx])
            Xc = X[idx]
            if w.normalize_contrastive:
                Y, norms = _l2_normalize(Xc)
                con, dY = _contrastive(Y, labels, w.temperature)
                dXc = _l2_normalize_backward(Y, norms, dY)
            else:
                con, dXc = _contrastive(Xc, labels, w.temperature)
            loss += w.w_con * con
            dX[idx] += w.w_con * dXc

    dX += dZ_sc @ p.W_sc.T
    for w_c, dz in zip(p.W_cat, dZ_cat):
        dX += dz @ w_c.T

    grads = {
        'W_proj': U.T @ dX,
        'b_proj': dX.sum(axis=0),
        'W_sc': X.T @ dZ_sc,
        'b_sc': dZ_sc.sum(axis=0),
    }
    names = list(p.named_arrays())
    for c, dz in enumerate(dZ_cat):
        grads[names[4 + 2 * c]] = X.T @ dz
        grads[names[5 + 2 * c]] = dz.sum(axis=0)
    if p.has_flat:
        if dZ_flat is None:
            grads['W_flat'] = np.zeros_like(p.W_flat)
            grads['b_flat'] = np.zeros_like(p.b_flat)
        else:
            grads['W_flat'] = X.T @ dZ_flat
            grads['b_flat'] = dZ_flat.sum(axis=0)
    return float(loss), GradientSet({name: grads[name] for name in names})


def finite_difference_gradients(loss_fn: Callable[[HeadParameters], float], p: HeadParameters,
                                eps: float = 1e-4) -> GradientSet:
    """Central differences (f(theta+eps) - f(theta-eps)) / (2 eps) for every parameter entry."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads = {}
    for name, array in p.named_arrays().items():
        grad = np.zeros_like(array, dtype=np.float64)
        for index in np.ndindex(array.shape):
            plus = np.array(array, dtype=np.float64)
            minus = np.array(array, dtype=np.float64)
            plus[index] += eps
            minus[index] -= eps
            f_plus = loss_fn(p.replace_arrays({name: plus}))
            f_minus = loss_fn(p.replace_arrays({name: minus}))
            grad[index] = (f_plus - f_minus) / (2 * eps)
        grads[name] = grad
    return GradientSet(grads)


def max_relative_error(a: GradientSet, b: GradientSet, floor: float = 1e-3) -> float:
    """max |a - b| / max(|a|, |b|, floor) over all entries."""
    worst = 0.0
    for name in a.names():
        x, y = a[name], b[name]
        err = np.abs(x - y) / np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def sgd_step(p: HeadParameters, g: GradientSet, lr: float) -> HeadParameters:
    """theta <- theta - lr * g for every parameter."""
    arrays = p.named_arrays()
    if set(arrays) != set(g.names()):
        raise ShapeMismatch(f"gradient names {sorted(g.names())} do not match parameters {sorted(arrays)}")
    updated = {}
    for name, theta in arrays.items():
        if g[name].shape != theta.shape:
            raise ShapeMismatch(f"{name}: gradient shape {g[name].shape} != parameter shape {theta.shape}")
        updated[name] = theta - lr * g[name]
    return p.replace_arrays(updated)


def joint_accuracy(samples: Sequence[TrainingSample], p: HeadParameters, h: RelationHierarchy) -> float:
    """Top-1 accuracy of the argmax over every joint entry plus background."""
    if not samples:
        return 0.0
    X = project(np.stack([s.u for s in samples]), p)
    R, Q = hierarchical_scores(X, p)
    scores = np.concatenate([q * R[:, c:c + 1] for c, q in enumerate(Q)] + [R[:, -1:]], axis=1)
    labels = [r for members in h.within_category_order for r in members] + [None]
    predicted = np.argmax(scores, axis=1)
    correct = sum(labels[k] == s.target_rel for k, s in zip(predicted, samples))
    return correct / len(samples)


@timed('train')
def train(samples: Sequence[TrainingSample], params: HeadParameters, h: RelationHierarchy,
          weights: LossWeights, lr: float, steps: int, log_every: int = 100) -> TrainingResult:
    """Full-batch SGD for `steps` steps."""
    result = TrainingResult(params=params)
    for step in range(steps):
        loss, grads = total_loss_and_grads(samples, result.params, h, weights)
        result.losses.append(loss)
        if log_every and step % log_every == 0:
            logger.info("step %d loss %.6f", step, loss)
        result.params = sgd_step(result.params, grads, lr)
    result.final_loss, _ = total_loss_and_grads(samples, result.params, h, weights)
    logger.info("Training finished after %d steps, final loss %.6f", steps, result.final_loss)
    return result
