"""Queue-based contrastive training of the embedding encoder.

Two independently degraded 2.5 s views of each track form a positive
pair. The query view passes through the trainable encoder; the key view
passes through a momentum-averaged copy whose outputs feed a fixed-size
FIFO dictionary of negatives. The loss is softmax cross-entropy over one
positive logit and the whole queue, at a fixed temperature. Negatives
come from the queue only; the current batch's other keys are not used.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio import AudioBuffer, TARGET_RATE
from .degrade import apply, sample_spec
from .errors import ConfigError, InputError
from .features import SNIPPET_SAMPLES, mel_spectrogram
from .nn import Encoder, EncoderConfig, ParamSet, cosine_lr, sgd_step
from .nn.checkpoint import save_checkpoint
from .seeding import derive_seed, rng_from

TEMPERATURE = 0.07
KEY_MOMENTUM = 0.999

# Worst-case speed*tempo shrink is 1.44; views are cut from windows with
# a little slack beyond that so a degraded copy always covers one snippet.
MIN_VIEW_SAMPLES = int(SNIPPET_SAMPLES * 1.44)
TRAIN_WINDOW_SAMPLES = 60000

# Seed-stream tags (see seeding.derive_seed)
_SALT_INIT = 1
_SALT_WARMUP = 2
_SALT_EPOCH = 3
_SALT_PRECUT = 4
_SALT_VIEWS = 5


@dataclass(frozen=True)
class TrainHyper:
    """Training hyperparameters; defaults are the desk-scale settings."""

    temperature: float = TEMPERATURE
    key_momentum: float = KEY_MOMENTUM
    batch_size: int = 16
    queue_size: int = 512
    total_steps: int = 1000
    lr0: float = 0.03

    def __post_init__(self):
        if not (0.0 < self.temperature):
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not (0.0 <= self.key_momentum <= 1.0):
            raise ConfigError(f"key_momentum must lie in [0, 1], got {self.key_momentum}")
        if self.batch_size < 1 or self.queue_size < 1 or self.total_steps < 1:
            raise ConfigError("batch_size, queue_size and total_steps must be >= 1")
        if self.lr0 < 0.0:
            raise ConfigError(f"lr0 must be non-negative, got {self.lr0}")
        if self.queue_size % self.batch_size != 0:
            raise ConfigError(
                f"queue_size {self.queue_size} must be a multiple of batch_size {self.batch_size}"
            )


class DictionaryQueue:
    """Fixed-capacity FIFO of unit-norm embedding rows."""

    def __init__(self, capacity: int, dim: int = 256):
        if capacity < 1:
            raise ConfigError(f"queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self._rows = np.zeros((capacity, dim), dtype=np.float32)
        self._head = 0  # next write position; oldest row when full
        self._filled = 0

    def __len__(self) -> int:
        return self._filled

    @property
    def filled(self) -> int:
        return self._filled

    @property
    def head(self) -> int:
        return self._head

    def enqueue(self, rows: np.ndarray) -> None:
        """Append rows, evicting the oldest when full. len(rows) <= capacity."""
        rows = np.asarray(rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise InputError(f"queue wants (n, {self.dim}) rows, got {rows.shape}")
        if len(rows) > self.capacity:
            raise InputError(f"cannot enqueue {len(rows)} rows into capacity {self.capacity}")
        norms = np.linalg.norm(rows.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise InputError("queue rows must be unit-norm within 1e-4")
        n = len(rows)
        first = min(n, self.capacity - self._head)
        self._rows[self._head:self._head + first] = rows[:first]
        if first < n:
            self._rows[:n - first] = rows[first:]
        self._head = (self._head + n) % self.capacity
        self._filled = min(self.capacity, self._filled + n)

    def matrix(self) -> np.ndarray:
        """Stored rows (filled count x dim); order is storage order."""
        return self._rows[:self._filled].copy() if self._filled < self.capacity else self._rows.copy()

    def contents(self) -> np.ndarray:
        """Stored rows ordered oldest to newest."""
        if self._filled < self.capacity:
            return self._rows[:self._filled].copy()
        return np.roll(self._rows, -self._head, axis=0)


def _check_unit_rows(name: str, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows)
    if not np.isfinite(rows).all():
        raise FloatingPointError(f"{name} contains non-finite values")
    norms = np.linalg.norm(rows.astype(np.float64), axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-4):
        raise InputError(f"{name} rows must be unit-norm within 1e-4")
    return rows


def info_nce(query: np.ndarray, key_pos: np.ndarray, key_negs: np.ndarray,
             temperature: float = TEMPERATURE) -> tuple[float, np.ndarray]:
    """Contrastive loss for one query against one positive and M negatives.

    Returns (loss, dloss/dquery) with the keys treated as constants.
    Computed in float64 with max-subtracted softmax.
    """
    q = _check_unit_rows("query", query).astype(np.float64)
    kp = _check_unit_rows("key_pos", key_pos).astype(np.float64)
    kn = _check_unit_rows("key_negs", np.atleast_2d(key_negs)).astype(np.float64)
    if q.shape != kp.shape or q.ndim != 1 or kn.shape[1] != q.shape[0]:
        raise InputError(f"shape mismatch: q {q.shape}, k+ {kp.shape}, negatives {kn.shape}")
    logits = np.concatenate([[q @ kp], kn @ q]) / temperature
    peak = logits.max()
    lse = peak + np.log(np.sum(np.exp(logits - peak)))
    loss = lse - logits[0]
    softmax = np.exp(logits - lse)
    grad = (softmax[0] * kp + softmax[1:] @ kn - kp) / temperature
    return float(loss), grad


def info_nce_batch(queries: np.ndarray, keys: np.ndarray, negatives: np.ndarray,
                   temperature: float = TEMPERATURE) -> tuple[float, np.ndarray, float]:
    """Mean contrastive loss over a batch of aligned (query, key) pairs.

    Returns (mean loss, dloss/dqueries, mean positive similarity).
    Gradients flow into the queries only.
    """
    q = _check_unit_rows("queries", queries).astype(np.float64)
    k = _check_unit_rows("keys", keys).astype(np.float64)
    negs = _check_unit_rows("negatives", negatives).astype(np.float64)
    if q.shape != k.shape or negs.shape[1] != q.shape[1]:
        raise InputError(f"shape mismatch: queries {q.shape}, keys {k.shape}, negatives {negs.shape}")
    n = len(q)
    pos = np.sum(q * k, axis=1)
    logits = np.concatenate([pos[:, None], q @ negs.T], axis=1) / temperature
    peak = logits.max(axis=1, keepdims=True)
    lse = peak + np.log(np.sum(np.exp(logits - peak), axis=1, keepdims=True))
    losses = (lse[:, 0] - logits[:, 0])
    softmax = np.exp(logits - lse)
    dlogits = softmax
    dlogits[:, 0] -= 1.0
    dq = (dlogits[:, 0:1] * k + dlogits[:, 1:] @ negs) / (temperature * n)
    return float(losses.mean()), dq, float(pos.mean())


def momentum_update(key_params: ParamSet, query_params: ParamSet, momentum: float = KEY_MOMENTUM) -> ParamSet:
    """key <- momentum * key + (1 - momentum) * query, elementwise.

    momentum = 1 freezes the key parameters exactly (bit-for-bit).
    """
    if set(key_params) != set(query_params):
        raise ConfigError("key/query parameter names do not match")
    if momentum == 1.0:
        return {name: p.copy() for name, p in key_params.items()}
    out: ParamSet = {}
    for name, kp in key_params.items():
        qp = query_params[name]
        if qp.shape != kp.shape:
            raise ConfigError(f"{name}: shape {qp.shape} != {kp.shape}")
        m = kp.dtype.type(momentum)
        out[name] = kp * m + qp * (kp.dtype.type(1.0) - m)
    return out


def make_views(tracks: list[AudioBuffer], seed: int) -> tuple[list[AudioBuffer], list[AudioBuffer]]:
    """Two independently degraded 2.5 s snippets per track.

    Each view samples its own degradation spec (training menu, no EQ),
    applies it, and keeps the first 2.5 s of the result. Tracks must
    survive the worst-case speed*tempo shrink with a full snippet left.
    """
    queries: list[AudioBuffer] = []
    keys: list[AudioBuffer] = []
    for i, track in enumerate(tracks):
        if track.sample_rate != TARGET_RATE:
            raise InputError(f"track {i}: expected {TARGET_RATE} Hz, got {track.sample_rate}")
        if len(track) < MIN_VIEW_SAMPLES:
            raise InputError(
                f"track {i}: {len(track)} samples is too short, need >= {MIN_VIEW_SAMPLES}"
            )
        for role, sink in ((0, queries), (1, keys)):
            spec = sample_spec(derive_seed(seed, i, role, 0), include_test_only=False)
            degraded = apply(track, spec, derive_seed(seed, i, role, 1))
            if len(degraded) < SNIPPET_SAMPLES:
                raise InputError(f"track {i}: degraded view shorter than one snippet")
            sink.append(AudioBuffer(degraded.samples[:SNIPPET_SAMPLES], TARGET_RATE))
    return queries, keys


def snippets_to_batch(snippets: list[AudioBuffer]) -> np.ndarray:
    """Stack per-snippet log-Mel patches into an encoder batch."""
    return np.stack([mel_spectrogram(s).values[None] for s in snippets]).astype(np.float32)


@dataclass
class StepMetrics:
    step: int
    lr: float
    loss: float
    positive_similarity: float
    queue_fill: int

    def to_line(self) -> str:
        return (f"{self.step}\t{self.lr:.8f}\t{self.loss:.6f}\t"
                f"{self.positive_similarity:.6f}\t{self.queue_fill}")


@dataclass
class TrainState:
    encoder: Encoder
    query_params: ParamSet
    key_params: ParamSet
    velocity: ParamSet
    queue: DictionaryQueue
    hyper: TrainHyper
    seed: int
    step: int = 0


def init_train_state(config: EncoderConfig, hyper: TrainHyper, seed: int) -> TrainState:
    """Fresh state: key parameters start as a copy of the query parameters."""
    encoder = Encoder(config)
    query_params = encoder.init_params(derive_seed(seed, _SALT_INIT))
    key_params = {name: p.copy() for name, p in query_params.items()}
    velocity = {name: np.zeros_like(p) for name, p in query_params.items()}
    queue = DictionaryQueue(hyper.queue_size, config.embed_dim)
    return TrainState(encoder, query_params, key_params, velocity, queue, hyper, seed)


def warmup_queue(state: TrainState, corpus: list[AudioBuffer]) -> None:
    """Pre-fill the queue with key embeddings of randomly degraded snippets."""
    rng = rng_from(state.seed, _SALT_WARMUP)
    chunk = 0
    while len(state.queue) < state.queue.capacity:
        n = min(state.hyper.batch_size, state.queue.capacity - len(state.queue))
        picks = rng.integers(0, len(corpus), size=n)
        tracks = [_random_window(corpus[t], rng) for t in picks]
        _, keys = make_views(tracks, derive_seed(state.seed, _SALT_WARMUP, chunk))
        emb = state.encoder.forward(state.key_params, snippets_to_batch(keys))
        state.queue.enqueue(emb)
        chunk += 1


def _random_window(track: AudioBuffer, rng: np.random.Generator) -> AudioBuffer:
    """Training window cut from a random position of a track."""
    if len(track) < TRAIN_WINDOW_SAMPLES:
        raise InputError(
            f"track of {len(track)} samples is shorter than the "
            f"{TRAIN_WINDOW_SAMPLES}-sample training window"
        )
    start = int(rng.integers(0, len(track) - TRAIN_WINDOW_SAMPLES + 1))
    return AudioBuffer(track.samples[start:start + TRAIN_WINDOW_SAMPLES], TARGET_RATE)


def train_step(state: TrainState, tracks: list[AudioBuffer]) -> StepMetrics:
    """One optimization step on one batch of tracks. Mutates state.

    Order: embed views, compute the loss against the queue, update the
    query encoder by SGD, momentum-update the key encoder, then enqueue
    the new keys.
    """
    view_seed = derive_seed(state.seed, _SALT_VIEWS, state.step)
    query_snips, key_snips = make_views(tracks, view_seed)
    q = state.encoder.forward(state.query_params, snippets_to_batch(query_snips), record=True)
    k = state.encoder.forward(state.key_params, snippets_to_batch(key_snips))

    loss, dq, pos_sim = info_nce_batch(q, k, state.queue.matrix(), state.hyper.temperature)
    grads = state.encoder.backward(dq.astype(np.float32))
    lr = cosine_lr(state.step, state.hyper.total_steps, state.hyper.lr0)
    state.query_params, state.velocity = sgd_step(state.query_params, grads, lr,
                                                  velocity=state.velocity)
    state.key_params = momentum_update(state.key_params, state.query_params,
                                       state.hyper.key_momentum)
    state.queue.enqueue(k)
    metrics = StepMetrics(state.step, lr, loss, pos_sim, len(state.queue))
    state.step += 1
    return metrics


def train(corpus: list[AudioBuffer], hyper: TrainHyper = TrainHyper(), seed: int = 0,
          config: EncoderConfig = EncoderConfig(),
          checkpoint_path=None, metrics_path=None,
          log_every: int = 0) -> tuple[TrainState, list[StepMetrics]]:
    """Full training run over a fixed corpus.

    Batches are drawn by reshuffling the corpus each epoch (remainder
    dropped); each selected track contributes a window cut from a random
    position. Identical inputs and seed reproduce the checkpoint bit for
    bit. Writes the checkpoint and a tab-separated per-step metrics log
    when paths are given.
    """
    if len(corpus) < hyper.batch_size:
        raise ConfigError(f"corpus of {len(corpus)} tracks is smaller than one batch ({hyper.batch_size})")
    for i, track in enumerate(corpus):
        if track.sample_rate != TARGET_RATE:
            raise InputError(f"corpus track {i}: expected {TARGET_RATE} Hz, got {track.sample_rate}")
        if len(track) < TRAIN_WINDOW_SAMPLES:
            raise InputError(
                f"corpus track {i}: {len(track)} samples is shorter than the "
                f"{TRAIN_WINDOW_SAMPLES}-sample training window"
            )

    state = init_train_state(config, hyper, seed)
    warmup_queue(state, corpus)

    epoch_rng = rng_from(seed, _SALT_EPOCH)
    order: list[int] = []
    history: list[StepMetrics] = []
    lines: list[str] = []
    while state.step < hyper.total_steps:
        if len(order) < hyper.batch_size:
            order = list(epoch_rng.permutation(len(corpus)))
        picks, order = order[:hyper.batch_size], order[hyper.batch_size:]
        cut_rng = rng_from(seed, _SALT_PRECUT, state.step)
        tracks = [_random_window(corpus[t], cut_rng) for t in picks]
        metrics = train_step(state, tracks)
        history.append(metrics)
        lines.append(metrics.to_line())
        if log_every and metrics.step % log_every == 0:
            print(metrics.to_line(), flush=True)

    if metrics_path is not None:
        with open(metrics_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, config, state.query_params)
    return state, history


# Training config files are plain "key = value" lines with # comments.
_CONFIG_KEYS = ("tau", "m", "batch", "queue_k", "steps", "lr0", "seed", "corpus")


def parse_train_config(text: str) -> dict:
    """Parse a key=value training config; unknown keys are an error."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key == "corpus":
            out[key] = value
        elif key in ("batch", "queue_k", "steps", "seed"):
            out[key] = int(value)
        else:
            out[key] = float(value)
    return out


def hyper_from_config(cfg: dict) -> TrainHyper:
    hyper = TrainHyper()
    mapping = {"tau": "temperature", "m": "key_momentum", "batch": "batch_size",
               "queue_k": "queue_size", "steps": "total_steps", "lr0": "lr0"}
    updates = {attr: cfg[key] for key, attr in mapping.items() if key in cfg}
    return replace(hyper, **updates) if updates else hyper
