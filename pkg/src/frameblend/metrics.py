"""Frame and token error metrics, error-overlap analysis, cost accounting.

Token error rates here are a decode *proxy*: prior-scaled per-frame
argmax collapsed over repeats, aligned against the collapsed reference
labels. No language model or lattice decoder is involved, so proxy
numbers are only meaningful for comparisons between models evaluated the
same way; every report labels them as a proxy.
"""

import time
from dataclasses import dataclass

import numpy as np

from .corpus import extract_window, extract_windows
from .models import BLSTMModel, CNNModel, ConvSpec, predict_posteriors


@dataclass(frozen=True)
class AlignmentCounts:
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    def __add__(self, other):
        return AlignmentCounts(self.substitutions + other.substitutions,
                               self.deletions + other.deletions,
                               self.insertions + other.insertions,
                               self.reference_length + other.reference_length)


def align(reference, hypothesis):
    """Minimum-edit alignment counts with unit costs.

    Among all minimal-edit alignments the one with the fewest
    insertions+deletions is preferred (substitutions are cheaper to
    explain than an insert/delete pair of the same total cost). Given the
    sequence lengths, those two minimized quantities already pin down
    (S, D, I) exactly, so no backtrace is materialized: alignment-path
    tie-breaks such as substitution placement cannot change the counts.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    n, m = len(ref), len(hyp)
    # lexicographic (total edits, insertions+deletions) packed into one int
    base = n + m + 1
    prev = [j * (base + 1) for j in range(m + 1)]  # aligning empty ref: j insertions
    for i in range(1, n + 1):
        cur = [i * (base + 1)] + [0] * m
        r = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if r == hyp[j - 1] else base)
            best = prev[j] + base + 1  # deletion
            left = cur[j - 1] + base + 1  # insertion
            if left < best:
                best = left
            if diag < best:
                best = diag
            cur[j] = best
        prev = cur
    total, indel = divmod(prev[m], base)
    # D - I == n - m and D + I == indel
    deletions = (indel + n - m) // 2
    insertions = indel - deletions
    return AlignmentCounts(total - indel, deletions, insertions, n)


def word_error_rate(counts):
    """(S + D + I) / N * 100; undefined for an empty reference."""
    if counts.reference_length < 1:
        raise ValueError("word_error_rate undefined for empty reference")
    return (counts.substitutions + counts.deletions + counts.insertions) \
        / counts.reference_length * 100.0


def _posterior_fn(model_or_fn):
    if callable(model_or_fn) and not isinstance(model_or_fn, (CNNModel, BLSTMModel)):
        return model_or_fn
    return lambda windows: predict_posteriors(model_or_fn, windows)


def frame_error_rate(model, utterances, k=20, batch_size=512):
    """Percent of frames whose argmax posterior misses the label.

    Argmax ties resolve to the lowest class id. ``model`` may also be a
    callable mapping a window stack to posteriors (used for ensembles).
    """
    predict = _posterior_fn(model)
    wrong = 0
    total = 0
    for utt in utterances:
        for lo in range(0, utt.length, batch_size):
            ts = range(lo, min(lo + batch_size, utt.length))
            windows = np.stack([extract_window(utt, t, k) for t in ts])
            pred = predict(windows).argmax(axis=1)
            wrong += int((pred != utt.labels[lo:lo + len(ts)]).sum())
            total += len(ts)
    return wrong / total * 100.0


def frame_error_rate_from_posteriors(posteriors, labels):
    pred = np.asarray(posteriors).argmax(axis=1)
    labels = np.asarray(labels)
    return float((pred != labels).mean() * 100.0)


def collapse_repeats(tokens):
    out = []
    for t in tokens:
        if not out or out[-1] != t:
            out.append(int(t))
    return out


def decode_proxy(model, utterance, priors, k=20, batch_size=512):
    """Posterior/prior-scaled per-frame argmax collapsed over repeats."""
    predict = _posterior_fn(model)
    priors = np.asarray(priors, dtype=np.float64)
    if np.any(priors <= 0):
        raise ValueError("priors must be strictly positive")
    hyp = []
    for lo in range(0, utterance.length, batch_size):
        ts = range(lo, min(lo + batch_size, utterance.length))
        windows = np.stack([extract_window(utterance, t, k) for t in ts])
        scaled = predict(windows) / priors
        hyp.extend(scaled.argmax(axis=1).tolist())
    return collapse_repeats(hyp)


def wer_proxy(model, utterances, priors, k=20):
    """Aggregate token-error-rate proxy over a validation set."""
    total = AlignmentCounts(0, 0, 0, 0)
    for utt in utterances:
        ref = collapse_repeats(utt.labels)
        hyp = decode_proxy(model, utt, priors, k)
        total = total + align(ref, hyp)
    return word_error_rate(total), total


@dataclass
class OverlapStats:
    error_iou: float        # |A intersect B| / |A union B| over error frames
    agreement_rate: float   # fraction of frames with identical argmax
    errors_first: int
    errors_second: int
    n_frames: int


def error_overlap(model_a, model_b, utterances, k=20, batch_size=512):
    """Compare the per-frame error sets of two models on a validation set."""
    pa = _posterior_fn(model_a)
    pb = _posterior_fn(model_b)
    err_a, err_b, agree, total = 0, 0, 0, 0
    both = 0
    either = 0
    for utt in utterances:
        pairs = [(0, t) for t in range(utt.length)]
        windows = extract_windows([utt], pairs, k)
        for lo in range(0, utt.length, batch_size):
            w = windows[lo:lo + batch_size]
            labels = utt.labels[lo:lo + w.shape[0]]
            pred_a = pa(w).argmax(axis=1)
            pred_b = pb(w).argmax(axis=1)
            ea = pred_a != labels
            eb = pred_b != labels
            err_a += int(ea.sum())
            err_b += int(eb.sum())
            both += int((ea & eb).sum())
            either += int((ea | eb).sum())
            agree += int((pred_a == pred_b).sum())
            total += w.shape[0]
    iou = 1.0 if either == 0 else both / either
    return OverlapStats(iou, agree / total, err_a, err_b, total)


# ---------------------------------------------------------------------------
# cost accounting
# ---------------------------------------------------------------------------

def analytic_macs(config):
    """Multiply-accumulate count of one forward pass from the architecture."""
    from .models import BLSTMConfig, CNNConfig

    if isinstance(config, CNNConfig):
        total = 0
        trace = config.shape_trace()
        c_in = config.input_channels
        stage = 0
        for spec in config.features:
            stage += 1
            if isinstance(spec, ConvSpec):
                _, h, w = trace[stage]
                total += spec.out_channels * c_in * spec.kernel_h * spec.kernel_w * h * w
                c_in = spec.out_channels
        width = config.flat_features()
        for fc in config.fc_widths:
            total += fc * width
            width = fc
        total += config.n_classes * width
        return total
    if isinstance(config, BLSTMConfig):
        h = config.hidden_size
        t = config.window_width
        center = config.center
        total = 0
        d_in = config.input_dim
        for layer in range(config.n_layers):
            per_step = 4 * h * (d_in + h) + 3 * h  # gates plus peepholes
            if layer == config.n_layers - 1:
                steps = (center + 1) + (t - center)
            else:
                steps = 2 * t
            total += per_step * steps
            d_in = 2 * h
        total += config.n_classes * 2 * h
        return total
    raise TypeError(f"no analytic cost model for {type(config)!r}")


@dataclass
class CostEntry:
    name: str
    macs: int
    seconds_per_window: float
    mac_factor: float
    time_factor: float


@dataclass
class CostReport:
    baseline: str
    entries: list


def cost_report(named_models, baseline, n_windows=1000, window_shape=(31, 41), seed=0):
    """Analytic MAC counts plus measured mean wall-time per window.

    ``named_models`` maps name -> model or list of models (an ensemble
    executes all members, and its MAC count is the exact sum of theirs).
    Factors are relative to ``baseline``.
    """
    rng = np.random.default_rng(seed)
    windows = rng.standard_normal((n_windows,) + window_shape).astype(np.float32)

    raw = {}
    for name, entry in named_models.items():
        members = entry if isinstance(entry, (list, tuple)) else [entry]
        macs = sum(analytic_macs(m.config) for m in members)
        start = time.perf_counter()
        for m in members:
            predict_posteriors(m, windows)
        elapsed = time.perf_counter() - start
        raw[name] = (macs, elapsed / n_windows)

    base_macs, base_time = raw[baseline]
    entries = [CostEntry(name, macs, sec, macs / base_macs, sec / base_time)
               for name, (macs, sec) in raw.items()]
    return CostReport(baseline, entries)
