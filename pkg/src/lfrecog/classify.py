"""Per-cell softmax scoring, probability averaging, sum-rule score fusion,
and rank-k decision metrics."""

import csv
import time
from dataclasses import dataclass

import numpy as np

from .numerics import softmax


class ClassifyError(Exception):
    pass


@dataclass
class SoftmaxHead:
    """Shared classification head applied to every cell's hidden state."""

    W_s: np.ndarray  # class_count x hidden_dim
    b_s: np.ndarray  # class_count

    @property
    def class_count(self):
        return self.W_s.shape[0]

    def copy(self):
        return SoftmaxHead(self.W_s.copy(), self.b_s.copy())


def cell_scores(hidden_states, head):
    """One normalized class distribution per hidden state."""
    h = np.asarray(hidden_states, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    if h.shape[1] != head.W_s.shape[1]:
        raise ClassifyError(
            f"hidden dim {h.shape[1]} does not match head {head.W_s.shape[1]}"
        )
    logits = h @ head.W_s.T + head.b_s
    return softmax(logits, axis=1)


def average_scores(scores):
    """Arithmetic mean of class distributions across cells."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ClassifyError("cannot average an empty score list")
    return scores.mean(axis=0)


def fuse_sum(a, b):
    """Sum-rule score fusion; result is unnormalized, only argmax matters."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ClassifyError(f"class-count mismatch: {a.shape} vs {b.shape}")
    return a + b


def predict(model, sequences, use_last_cell=False, timer=None):
    """Score one sample and pick a label.

    ``sequences`` is a list of per-branch description stacks (T×D arrays);
    fusion topologies pass two branches whose within-branch averages are
    summed, single-branch topologies pass one.  Ties break to the lowest
    class index.  Returns (label_index, score_vector).
    """
    if not sequences:
        raise ClassifyError("predict needs at least one sequence")
    branch_hidden = []
    t0 = time.perf_counter()
    for branch_idx, descs in enumerate(sequences):
        branch_hidden.append(model.hidden_states(descs, branch=branch_idx))
    t1 = time.perf_counter()
    branch_scores = []
    for branch_idx, hs in enumerate(branch_hidden):
        per_cell = cell_scores(hs, model.head_for(branch_idx))
        if use_last_cell:
            branch_scores.append(per_cell[-1])
        else:
            branch_scores.append(average_scores(per_cell))
    fused = branch_scores[0]
    for s in branch_scores[1:]:
        fused = fuse_sum(fused, s)
    if timer is not None:
        timer.add("angular", t1 - t0)
        timer.add("classification", time.perf_counter() - t1)
    return int(np.argmax(fused)), fused


def rank_of_true(scores, true_label):
    """1-based rank of the true class; ties break by class id."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    return int(np.where(order == true_label)[0][0]) + 1


def rank_k(score_lists, true_labels, k):
    """Fraction of samples whose true label ranks within the top k."""
    if k < 1:
        raise ClassifyError("k must be >= 1")
    if len(score_lists) == 0:
        raise ClassifyError("rank_k needs at least one sample")
    n_classes = np.asarray(score_lists[0]).size
    if k > n_classes:
        raise ClassifyError(f"k={k} exceeds class count {n_classes}")
    hits = sum(
        1 for s, t in zip(score_lists, true_labels) if rank_of_true(s, t) <= k
    )
    return hits / len(score_lists)


def train_softmax_baseline(descriptions, labels, class_count, epochs=200,
                           learning_rate=1e-2, seed=0):
    """Plain softmax regression on single-view descriptions.

    Serves as the no-angular-information reference: same descriptors, same
    per-output MSE objective, but one view and no recurrence.  Returns a
    SoftmaxHead applied directly to the description vector."""
    X = np.stack([np.asarray(getattr(d, "values", d), dtype=np.float64)
                  for d in descriptions])
    y = np.asarray(labels, dtype=np.int64)
    n, d = X.shape
    Y = np.zeros((n, class_count))
    Y[np.arange(n), y] = 1.0
    mean = X.mean(axis=0)
    std = X.std(axis=0) + 1e-8
    Xn = (X - mean) / std
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    W = rng.uniform(-bound, bound, size=(class_count, d))
    b = np.zeros(class_count)
    m = {k: 0.0 for k in ("W", "b")}
    v = {k: 0.0 for k in ("W", "b")}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for step in range(1, epochs + 1):
        P = softmax(Xn @ W.T + b, axis=1)
        err = P - Y
        dP = 2.0 * err / err.size
        dZ = P * (dP - (dP * P).sum(axis=1, keepdims=True))
        grads = {"W": dZ.T @ Xn, "b": dZ.sum(axis=0)}
        lr_t = learning_rate * np.sqrt(1 - beta2 ** step) / (1 - beta1 ** step)
        for key, target in (("W", W), ("b", b)):
            m[key] = beta1 * m[key] + (1 - beta1) * grads[key]
            v[key] = beta2 * v[key] + (1 - beta2) * grads[key] ** 2
            target -= lr_t * m[key] / (np.sqrt(v[key]) + eps)
    return {"W": W, "b": b, "mean": mean, "std": std}


def baseline_scores(baseline, description):
    x = np.asarray(getattr(description, "values", description), dtype=np.float64)
    xn = (x - baseline["mean"]) / baseline["std"]
    return softmax(baseline["W"] @ xn + baseline["b"])


def write_prediction_dump(path, rows):
    """CSV dump: image_id, true_label, predicted_label, rank_of_true, top1_score."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "true_label", "predicted_label",
                    "rank_of_true", "top1_score"])
        for row in rows:
            w.writerow(row)
