"""Minibatch SGD with Nesterov momentum and plateau-driven learning-rate
schedules.

Two schedule flavors, differing in what they monitor and what a decay
does: the convolutional schedule watches validation loss and just lowers
the learning rate on a plateau; the recurrent schedule watches
validation frame error and additionally rolls parameters back to the
best epoch (velocity reset) when it decays. Both stop once the learning
rate falls below a floor, and both return the best-validation snapshot.
"""

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as at
from .blending import blended_loss_batch
from .corpus import FrameSampler, extract_windows
from .models import predict_posteriors, zero_gradients
from .softlabels import retruncate_store
from .validation import check_unit_interval


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    batch_size: int = 64
    batches_per_epoch: int = 50
    learning_rate: float = 1.7e-2
    momentum: float = 0.9
    lr_decay: float = 0.7
    patience: int = 5
    min_learning_rate: float = 5e-5
    max_epochs: int = 200
    rollback: bool = False
    monitor: str = "loss"  # "loss" or "fer"
    seed: int = 0
    lam: float = 0.0
    c_max: int = 0   # 0 = use the store's own cap
    tau: float = 0.0  # 0 = use the store's own threshold
    window_halfwidth: int = 20

    def __post_init__(self):
        check_unit_interval("lam", self.lam)
        if not 0.0 < self.lr_decay < 1.0:
            raise ValueError("lr_decay must lie in (0, 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.batches_per_epoch < 1:
            raise ValueError("learning rate, batch size, batches per epoch must be positive")
        if self.monitor not in ("loss", "fer"):
            raise ValueError(f"unknown monitor {self.monitor!r}")


@dataclass
class EpochRecord:
    epoch: int
    learning_rate: float
    train_loss: float
    val_loss: float
    val_fer: float


@dataclass
class TrainState:
    epoch: int = 0
    learning_rate: float = 0.0
    best_value: float = np.inf
    best_epoch: int = -1
    bad_epochs: int = 0
    best_snapshot: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    history: list = field(default_factory=list)


def sgd_nesterov_step(params, grads, velocities, lr, momentum):
    """v <- mu*v - lr*g; theta <- theta + v.

    ``grads`` must be evaluated at the lookahead point theta + mu*v (the
    caller applies and removes the lookahead); with mu = 0 this reduces
    to plain SGD.
    """
    for p, g, v in zip(params, grads, velocities):
        v *= momentum
        v -= lr * g
        p += v


def _snapshot(model):
    return [p.data.copy() for _, p in model.named_parameters()]


def _restore(model, snapshot):
    for (_, p), saved in zip(model.named_parameters(), snapshot):
        p.data[...] = saved


def evaluate_validation(model, utterances, k=20, batch_size=512):
    """(mean hard-label cross-entropy, frame error percent) over all frames."""
    total_nll = 0.0
    wrong = 0
    n = 0
    for utt in utterances:
        pairs = [(0, t) for t in range(utt.length)]
        windows = extract_windows([utt], pairs, k)
        for lo in range(0, utt.length, batch_size):
            w = windows[lo:lo + batch_size]
            labels = utt.labels[lo:lo + w.shape[0]]
            post = predict_posteriors(model, w)
            rows = np.arange(w.shape[0])
            total_nll += float(-np.log(np.maximum(post[rows, labels], at.CE_FLOOR)).sum())
            wrong += int((post.argmax(axis=1) != labels).sum())
            n += w.shape[0]
    return total_nll / n, wrong / n * 100.0


def train_model(model, corpus, config, store=None, progress=None):
    """Run the configured schedule; returns (model, history).

    The model ends at its best-validation parameters. ``store`` is
    required when the blend weight is positive; it is re-truncated first
    when the config requests a smaller cap or threshold.
    """
    if config.lam > 0 and store is None:
        raise ValueError("blended training (lam > 0) needs a soft-label store")
    if store is not None and (config.c_max or config.tau):
        c_max = config.c_max or store.c_max
        tau = config.tau or store.tau
        if (c_max, tau) != (store.c_max, store.tau):
            store = retruncate_store(store, c_max, tau)

    rng = np.random.default_rng(config.seed)
    sampler = FrameSampler(corpus.train)
    params = [p for _, p in model.named_parameters()]
    state = TrainState(learning_rate=config.learning_rate,
                       velocities=[np.zeros_like(p.data) for p in params],
                       best_snapshot=_snapshot(model))
    mu = config.momentum
    labels_by_utt = [u.labels for u in corpus.train]

    while state.learning_rate >= config.min_learning_rate and state.epoch < config.max_epochs:
        epoch_loss = 0.0
        for _ in range(config.batches_per_epoch):
            pairs = sampler.sample_batch(rng, config.batch_size)
            windows = extract_windows(corpus.train, pairs, config.window_halfwidth)
            labels = np.array([labels_by_utt[u][t] for u, t in pairs])
            records = store.get_many(pairs) if config.lam > 0 else None

            theta = [p.data.copy() for p in params]
            if mu != 0.0:
                for p, v in zip(params, state.velocities):
                    p.data += mu * v
            zero_gradients(model)
            q = at.softmax(model.logits(windows))
            loss = blended_loss_batch(records, labels, q, config.lam)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise DivergenceError(
                    f"non-finite loss at epoch {state.epoch}, lr {state.learning_rate}")
            at.backward(loss)
            grads = [p.grad for p in params]
            for p, saved in zip(params, theta):
                p.data = saved
            sgd_nesterov_step([p.data for p in params], grads, state.velocities,
                              state.learning_rate, mu)
            epoch_loss += loss_val

        val_loss, val_fer = evaluate_validation(model, corpus.validation,
                                                k=config.window_halfwidth)
        record = EpochRecord(state.epoch, state.learning_rate,
                             epoch_loss / config.batches_per_epoch, val_loss, val_fer)
        state.history.append(record)
        if progress:
            progress(record)

        monitored = val_loss if config.monitor == "loss" else val_fer
        if monitored < state.best_value:
            state.best_value = monitored
            state.best_epoch = state.epoch
            state.best_snapshot = _snapshot(model)
            state.bad_epochs = 0
        else:
            state.bad_epochs += 1
            if state.bad_epochs >= config.patience:
                state.learning_rate *= config.lr_decay
                state.bad_epochs = 0
                if config.rollback:
                    _restore(model, state.best_snapshot)
                    for v in state.velocities:
                        v[...] = 0
        state.epoch += 1

    _restore(model, state.best_snapshot)
    return model, state


def train_cnn_schedule(model, corpus, config=None, store=None, progress=None):
    """Plateau schedule monitoring validation loss, no rollback."""
    config = config or TrainConfig()
    if config.monitor != "loss" or config.rollback:
        raise ValueError("cnn schedule monitors loss and never rolls back")
    return train_model(model, corpus, config, store=store, progress=progress)


def train_lstm_schedule(model, corpus, config=None, progress=None):
    """Plateau schedule monitoring validation frame error; a decay rolls
    parameters back to the best epoch and resets velocity."""
    if config is None:
        config = TrainConfig(learning_rate=0.05, patience=3, lr_decay=2.0 / 3.0,
                             min_learning_rate=1e-5, rollback=True, monitor="fer")
    if config.monitor != "fer" or not config.rollback:
        raise ValueError("lstm schedule monitors frame error and rolls back on decay")
    return train_model(model, corpus, config, progress=progress)


def history_rows(state):
    return [asdict(r) for r in state.history]


def write_history_csv(path, state, provenance=None):
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.DictWriter(fh, fieldnames=["epoch", "learning_rate", "train_loss",
                                                "val_loss", "val_fer"])
        writer.writeheader()
        for row in history_rows(state):
            writer.writerow(row)
