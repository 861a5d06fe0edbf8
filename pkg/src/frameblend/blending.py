"""Posterior ensembling and the blended soft/hard training objective.

The blend weight trades the cross-entropy against the teacher's retained
classes (weight ``lam``) against the negative log-likelihood of the hard
label (weight ``1 - lam``). Both endpoints short-circuit to the single
remaining term, so a zero blend weight is bit-identical to plain
hard-label training.
"""

import numpy as np

from . import tensor as at
from .tensor import Tensor
from .softlabels import pad_records
from .validation import check_mixture_weights, check_unit_interval


def ensemble_posterior(members, weights=None):
    """Convex combination of posterior vectors/matrices over the same classes."""
    arrs = [np.asarray(m, dtype=np.float64) for m in members]
    for i, a in enumerate(arrs[1:], start=1):
        if a.shape != arrs[0].shape:
            raise ValueError(f"member {i} shape {a.shape} != member 0 shape {arrs[0].shape}")
    weights = check_mixture_weights(
        np.full(len(arrs), 1.0 / len(arrs)) if weights is None else weights, n=len(arrs))
    out = np.zeros_like(arrs[0])
    for w, a in zip(weights, arrs):
        out += w * a
    return out


def two_model_ensemble(p_first, p_second, gamma):
    """gamma * p_first + (1 - gamma) * p_second."""
    gamma = check_unit_interval("gamma", gamma)
    return ensemble_posterior([p_first, p_second], [gamma, 1.0 - gamma])


def blended_loss(record, label, q, lam):
    """Loss for one example: lam * soft cross-entropy over the record's
    retained classes + (1 - lam) * hard negative log-likelihood.

    ``q`` is the student's posterior, as a graph Tensor or a plain array;
    the result is a scalar Tensor differentiable through ``q``.
    """
    lam = check_unit_interval("lam", lam)
    if not isinstance(q, Tensor):
        q = Tensor(np.asarray(q, dtype=np.float64))
    if lam == 0.0:
        return at.cross_entropy((np.array([label]), np.array([1.0])), q)
    soft = at.cross_entropy((record.class_ids, record.probs), q)
    if lam == 1.0:
        return soft
    hard = at.cross_entropy((np.array([label]), np.array([1.0])), q)
    return at.scale(soft, lam) + at.scale(hard, 1.0 - lam)


def blended_loss_batch(records, labels, q, lam):
    """Mean-over-batch blended loss. ``q``: Tensor (B, K).

    ``records`` may be None when ``lam`` is 0 (pure hard-label training).
    """
    lam = check_unit_interval("lam", lam)
    labels = np.asarray(labels)
    if lam == 0.0:
        return at.tmean(at.nll_rows(q, labels))
    ids, vals, counts = pad_records(records, dtype=q.data.dtype)
    soft = at.tmean(at.sparse_ce_rows(q, ids, vals, counts))
    if lam == 1.0:
        return soft
    hard = at.tmean(at.nll_rows(q, labels))
    return at.scale(soft, lam) + at.scale(hard, 1.0 - lam)


def blended_loss_gradient_check(model, windows, labels, records, lam, n_coords=30,
                                rng=None, eps=1e-5):
    """Max relative error between the autodiff gradient of the batch loss
    and central finite differences on randomly sampled parameter
    coordinates."""
    from .models import zero_gradients
    from .tensor import backward, max_relative_error

    rng = np.random.default_rng(0) if rng is None else rng

    def loss_value():
        q = at.softmax(model.logits(windows))
        return blended_loss_batch(records, labels, q, lam)

    zero_gradients(model)
    backward(loss_value())

    worst = 0.0
    params = model.named_parameters()
    for _ in range(n_coords):
        _, p = params[rng.integers(len(params))]
        flat = p.data.reshape(-1)
        idx = int(rng.integers(flat.size))
        orig = flat[idx]
        flat[idx] = orig + eps
        up = loss_value().item()
        flat[idx] = orig - eps
        dn = loss_value().item()
        flat[idx] = orig
        fd = (up - dn) / (2 * eps)
        worst = max(worst, max_relative_error(p.grad.reshape(-1)[idx], fd))
    return worst
