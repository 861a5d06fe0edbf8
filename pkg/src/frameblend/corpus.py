"""Synthetic frame-classification corpus.

Utterances are variable-length sequences of 31-channel feature frames.
Labels evolve as a dwell-time Markov chain over classes; each class pair
shares a spectral template and the two members of a pair differ only by
a faint secondary bump, so resolving the pair member requires temporal
context (the chain's ring step depends on it). Every quantity is a pure
function of the config seed.
"""

import io
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np


@dataclass(frozen=True)
class CorpusConfig:
    n_train_utterances: int = 2000
    n_val_utterances: int = 100
    n_classes: int = 50
    n_channels: int = 31
    min_length: int = 30
    max_length: int = 300
    mean_length: float = 70.0
    length_sigma: float = 0.55  # lognormal shape; larger = more skew
    class_skew: float = 0.8     # Zipf exponent of the jump distribution over pairs
    ring_step_prob: float = 0.85
    mean_dwell: float = 6.0
    twin_contrast: float = 0.35
    noise_level: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.n_train_utterances < 1 or self.n_val_utterances < 0:
            raise ValueError("utterance counts must be positive")
        if not 0 < self.min_length <= self.max_length:
            raise ValueError("bad length bounds")


@dataclass
class Utterance:
    uid: int
    features: np.ndarray  # (n_channels, T) float32
    labels: np.ndarray    # (T,) int64

    @property
    def length(self):
        return self.labels.shape[0]


class Corpus:
    def __init__(self, train, validation, config):
        self.train = train
        self.validation = validation
        self.config = config
        self.n_classes = config.n_classes
        self.n_channels = config.n_channels

    @property
    def total_train_frames(self):
        return sum(u.length for u in self.train)

    @property
    def total_validation_frames(self):
        return sum(u.length for u in self.validation)


# ---------------------------------------------------------------------------
# label chain
# ---------------------------------------------------------------------------

def label_transition_matrix(config):
    """Segment-to-segment class transition matrix (K x K, rows sum to 1).

    From class k = (pair m, parity b): with probability ``ring_step_prob``
    the next pair is (m + 1 + b) mod n_pairs — the step size encodes the
    parity, which is what makes the faint pair member recoverable from
    context — otherwise the next pair is drawn from a Zipf-skewed jump
    distribution. The next parity is uniform.
    """
    k = config.n_classes
    n_pairs = (k + 1) // 2
    jump = (np.arange(1, n_pairs + 1, dtype=np.float64)) ** (-config.class_skew)
    jump /= jump.sum()
    t = np.zeros((k, k))
    for cls in range(k):
        m, b = divmod(cls, 2)
        pair_probs = (1.0 - config.ring_step_prob) * jump.copy()
        pair_probs[(m + 1 + b) % n_pairs] += config.ring_step_prob
        for m2 in range(n_pairs):
            members = [c for c in (2 * m2, 2 * m2 + 1) if c < k]
            for c in members:
                t[cls, c] = pair_probs[m2] / len(members)
    return t


def stationary_distribution(transition, iters=10_000, tol=1e-13):
    """Stationary row vector of a stochastic matrix, by power iteration."""
    k = transition.shape[0]
    p = np.full(k, 1.0 / k)
    for _ in range(iters):
        nxt = p @ transition
        if np.abs(nxt - p).max() < tol:
            return nxt / nxt.sum()
        p = nxt
    return p / p.sum()


def class_templates(config):
    """(K, n_channels) spectral templates; pair members differ by a faint
    secondary bump shifted up in frequency."""
    k, ch = config.n_classes, config.n_channels
    n_pairs = (k + 1) // 2
    chans = np.arange(ch, dtype=np.float64)
    centers = np.linspace(2.0, ch - 3.0, n_pairs)
    out = np.zeros((k, ch))
    for cls in range(k):
        m, b = divmod(cls, 2)
        out[cls] = np.exp(-0.5 * ((chans - centers[m]) / 1.8) ** 2)
        if b:
            out[cls] += config.twin_contrast * np.exp(-0.5 * ((chans - centers[m] - 3.0) / 1.2) ** 2)
    return out


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _utterance_length(rng, config):
    mu = np.log(config.mean_length) - 0.5 * config.length_sigma ** 2
    t = int(round(float(rng.lognormal(mu, config.length_sigma))))
    return int(np.clip(t, config.min_length, config.max_length))


def _labels(rng, t_frames, trans_cum, stat_cum, dwell_p):
    labels = np.empty(t_frames, dtype=np.int64)
    cls = int(np.searchsorted(stat_cum, rng.random()))
    t = 0
    while t < t_frames:
        dwell = int(rng.geometric(dwell_p))
        labels[t:t + dwell] = cls
        t += dwell
        cls = int(np.searchsorted(trans_cum[cls], rng.random()))
    return labels


def _features(rng, labels, templates, config):
    t_frames = labels.shape[0]
    feats = np.empty((config.n_channels, t_frames), dtype=np.float64)
    # per-segment amplitude jitter
    start = 0
    for t in range(1, t_frames + 1):
        if t == t_frames or labels[t] != labels[start]:
            amp = rng.uniform(0.8, 1.2)
            feats[:, start:t] = amp * templates[labels[start]][:, None]
            start = t
    feats += config.noise_level * rng.standard_normal((config.n_channels, t_frames))
    return feats.astype(np.float32)


def generate_corpus(config):
    """Deterministic per seed: same config -> bit-identical corpus."""
    rng = np.random.default_rng(config.seed)
    trans = label_transition_matrix(config)
    trans_cum = np.cumsum(trans, axis=1)
    stat_cum = np.cumsum(stationary_distribution(trans))
    templates = class_templates(config)
    dwell_p = min(1.0, 1.0 / config.mean_dwell)

    def make(uid):
        t_frames = _utterance_length(rng, config)
        labels = _labels(rng, t_frames, trans_cum, stat_cum, dwell_p)
        return Utterance(uid, _features(rng, labels, templates, config), labels)

    train = [make(i) for i in range(config.n_train_utterances)]
    val = [make(config.n_train_utterances + i) for i in range(config.n_val_utterances)]
    return Corpus(train, val, config)


# ---------------------------------------------------------------------------
# windows, sampling, priors
# ---------------------------------------------------------------------------

def extract_window(utterance, t, k=20):
    """(n_channels, 2k+1) window centered at frame t; frames outside the
    utterance are zero (the utterance is implicitly zero padded)."""
    feats = utterance.features
    t_frames = feats.shape[1]
    if not 0 <= t < t_frames:
        raise IndexError(f"frame {t} outside utterance of length {t_frames}")
    width = 2 * k + 1
    out = np.zeros((feats.shape[0], width), dtype=feats.dtype)
    lo, hi = t - k, t + k + 1
    src_lo, src_hi = max(lo, 0), min(hi, t_frames)
    out[:, src_lo - lo:src_hi - lo] = feats[:, src_lo:src_hi]
    return out


def extract_windows(utterances, pairs, k=20):
    """Stack windows for (utterance_index, frame) pairs -> (n, C, 2k+1)."""
    n = len(pairs)
    ch = utterances[0].features.shape[0]
    out = np.zeros((n, ch, 2 * k + 1), dtype=np.float32)
    for i, (u, t) in enumerate(pairs):
        out[i] = extract_window(utterances[u], t, k)
    return out


class FrameSampler:
    """Length-proportional utterance draw, then a uniform frame within it.

    The composition makes every (utterance, frame) pair equally likely.
    Callers own the random stream, so parallel consumers stay
    reproducible by splitting seeds.
    """

    def __init__(self, utterances):
        if not utterances:
            raise ValueError("empty corpus")
        self.utterances = utterances
        lengths = np.array([u.length for u in utterances], dtype=np.int64)
        self._cum = np.cumsum(lengths)
        self.lengths = lengths

    @property
    def total_frames(self):
        return int(self._cum[-1])

    def sample(self, rng):
        # utterance proportional to length via its share of the cumulative sum
        u = int(np.searchsorted(self._cum, rng.integers(self._cum[-1]), side="right"))
        t = int(rng.integers(self.lengths[u]))
        return u, t

    def sample_batch(self, rng, n):
        us = np.searchsorted(self._cum, rng.integers(self._cum[-1], size=n), side="right")
        ts = (rng.random(n) * self.lengths[us]).astype(np.int64)
        return list(zip(us.tolist(), ts.tolist()))


def sample_training_frame(corpus, rng):
    return FrameSampler(corpus.train).sample(rng)


def compute_priors(utterances, n_classes, smoothing=1e-3):
    """Relative class frequencies with additive smoothing; strictly positive."""
    counts = np.zeros(n_classes, dtype=np.float64)
    for u in utterances:
        counts += np.bincount(u.labels, minlength=n_classes)
    priors = counts + smoothing
    return priors / priors.sum()


def validation_set(utterances):
    """Every (utterance_index, frame) pair exactly once, in corpus order."""
    return [(u, t) for u, utt in enumerate(utterances) for t in range(utt.length)]


# ---------------------------------------------------------------------------
# binary corpus file
# ---------------------------------------------------------------------------

MAGIC = b"FBCR"
VERSION = 1


def save_corpus(path, corpus, extra_provenance=None):
    prov = {"config": asdict(corpus.config), "seed": corpus.config.seed}
    if extra_provenance:
        prov.update(extra_provenance)
    blob = json.dumps(prov, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IIIII", VERSION, corpus.n_classes, corpus.n_channels,
                          len(corpus.train), len(corpus.validation)))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for utt in corpus.train + corpus.validation:
        buf.write(struct.pack("<II", utt.uid, utt.length))
        buf.write(utt.labels.astype("<i4").tobytes())
        buf.write(utt.features.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_corpus(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a corpus file")
    version, k, ch, n_train, n_val = struct.unpack_from("<IIIII", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported corpus version {version}")
    off = 24
    (blob_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    prov = json.loads(raw[off:off + blob_len])
    off += blob_len
    config = CorpusConfig(**prov["config"])
    utts = []
    for _ in range(n_train + n_val):
        uid, t_frames = struct.unpack_from("<II", raw, off)
        off += 8
        labels = np.frombuffer(raw, dtype="<i4", count=t_frames, offset=off).astype(np.int64)
        off += 4 * t_frames
        feats = np.frombuffer(raw, dtype="<f4", count=ch * t_frames, offset=off).reshape(ch, t_frames).copy()
        off += 4 * ch * t_frames
        utts.append(Utterance(uid, feats, labels))
    return Corpus(utts[:n_train], utts[n_train:], config)


def summary_text(corpus, length_bins=10):
    """Plain-text lengths and class histograms (for quick plotting)."""
    lengths = np.array([u.length for u in corpus.train])
    counts = np.zeros(corpus.n_classes, dtype=np.int64)
    for u in corpus.train:
        counts += np.bincount(u.labels, minlength=corpus.n_classes)
    lines = [f"train utterances: {len(corpus.train)}  frames: {lengths.sum()}",
             f"validation utterances: {len(corpus.validation)}  frames: {corpus.total_validation_frames}",
             "", "utterance length histogram:"]
    edges = np.linspace(lengths.min(), lengths.max() + 1, length_bins + 1)
    hist, _ = np.histogram(lengths, bins=edges)
    for i, h in enumerate(hist):
        lines.append(f"  [{edges[i]:6.0f}, {edges[i + 1]:6.0f}): {h}")
    lines.append("")
    lines.append("class frame counts:")
    for cls, c in enumerate(counts):
        lines.append(f"  class {cls:3d}: {c}")
    return "\n".join(lines) + "\n"
