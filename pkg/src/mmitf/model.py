"""Inter-modality encoder/decoder transformer that scores pointing targets.

The encoder lets the 21 pose tokens attend to the object tokens and yields
a pose-object memory. The decoder runs self-attention over the relation
tokens (or the object tokens in the two-modality setup), cross-attends to
the memory, and a shared FFN with a sigmoid scores every token. The last
token is the non-object slot: a high score there means "not pointing".
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numerics as nx
from .datagen import Sample
from .encoding import EncodingParams, assemble_arrays
from .features import N_LANDMARKS

log = logging.getLogger(__name__)

MODES = ("two", "three")


@dataclass
class ModelConfig:
    d_T: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 4
    ffn_hidden: int = 128
    modality_mode: str = "three"

    def __post_init__(self):
        if self.d_T <= 0 or self.d_T % 2:
            raise ValueError(f"d_T must be a positive even integer, got {self.d_T}")
        if self.n_heads <= 0 or self.d_T % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} must divide d_T={self.d_T}")
        if self.n_enc_layers < 0 or self.n_dec_layers < 0 or self.ffn_hidden <= 0:
            raise ValueError("layer counts must be >= 0 and ffn_hidden > 0")
        if self.modality_mode not in MODES:
            raise ValueError(f"modality_mode must be one of {MODES}, got {self.modality_mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True, eq=False)
class ScoreVector:
    scores: np.ndarray  # (N_t + 1,), non-object score last

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def non_object(self) -> float:
        return float(self.scores[-1])


@dataclass(frozen=True, eq=False)
class Prediction:
    ranked: np.ndarray
    top: int

    def __eq__(self, other):
        return isinstance(other, Prediction) and self.top == other.top and np.array_equal(self.ranked, other.ranked)


def predict(s) -> Prediction:
    """Rank tokens by descending score; ties go to the lower index."""
    scores = np.asarray(s.scores if isinstance(s, ScoreVector) else s, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot rank an empty score vector")
    ranked = np.argsort(-scores, kind="stable")
    return Prediction(ranked, int(ranked[0]))


def loss_targets(sample: Sample) -> np.ndarray:
    """Multi-hot labels over the N_t + 1 tokens."""
    n = sample.n_objects
    y = np.zeros(n + 1)
    for t in sample.targets:
        if not 0 <= t <= n:
            raise ValueError(f"target index {t} out of range 0..{n}")
        y[t] = 1.0
    return y


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------


@dataclass
class Batch:
    landmarks: np.ndarray  # (B, 21, 2)
    centroids: np.ndarray  # (B, N, 2)
    angles: np.ndarray  # (B, N + 1)
    wh: np.ndarray  # (B, 1, 2)
    labels: np.ndarray  # (B, N + 1)

    def __len__(self) -> int:
        return len(self.landmarks)

    def take(self, idx) -> "Batch":
        return Batch(self.landmarks[idx], self.centroids[idx], self.angles[idx], self.wh[idx], self.labels[idx])


def make_batch(samples: Sequence[Sample]) -> Batch:
    ns = {s.n_objects for s in samples}
    if len(ns) != 1:
        raise ValueError(f"a batch needs a single object count, got {sorted(ns)}")
    return Batch(
        np.stack([s.hand.landmarks for s in samples]),
        np.stack([s.objects.centroids for s in samples]).reshape(len(samples), ns.pop(), 2),
        np.stack([s.relations.angles for s in samples]),
        np.array([[[s.dims.W, s.dims.H]] for s in samples], dtype=np.float64),
        np.stack([loss_targets(s) for s in samples]),
    )


def group_by_size(samples: Sequence[Sample]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(s.n_objects, []).append(i)
    return groups


class PackedDataset:
    """Samples stacked into one array batch per object count."""

    def __init__(self, samples: Sequence[Sample]):
        if not samples:
            raise ValueError("empty dataset")
        self.samples = list(samples)
        self.groups = {n: (np.array(idx), make_batch([samples[i] for i in idx])) for n, idx in sorted(group_by_size(samples).items())}

    def __len__(self) -> int:
        return len(self.samples)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield (sample indices, Batch); shuffled when ``rng`` is given."""
        chunks = []
        for n, (idx, full) in self.groups.items():
            order = rng.permutation(len(idx)) if rng is not None else np.arange(len(idx))
            for start in range(0, len(order), batch_size):
                sel = order[start : start + batch_size]
                chunks.append((idx[sel], full, sel))
        if rng is not None:
            chunks = [chunks[i] for i in rng.permutation(len(chunks))]
        for idx, full, sel in chunks:
            yield idx, full.take(sel)


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------


def _linear(x: nx.Tensor, p: dict, name: str) -> nx.Tensor:
    return nx.add(nx.matmul(x, p[name + ".w"]), p[name + ".b"])


class MMITF:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0, params: dict | None = None):
        self.config = config or ModelConfig()
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params: dict[str, nx.Tensor] = params
        c = self.config
        self.encoding = EncodingParams(
            c.d_T, params["embed.W_h_x"], params["embed.W_h_y"], params["embed.W_o_x"], params["embed.W_o_y"], params["embed.W_r"]
        )

    # -- parameters ---------------------------------------------------------

    def _init_params(self, rng: np.random.Generator) -> dict[str, nx.Tensor]:
        c = self.config
        d, f = c.d_T, c.ffn_hidden
        p: dict[str, nx.Tensor] = {}
        for k, v in EncodingParams.init(d, rng).named().items():
            p["embed." + k] = v

        def lin(name, n_in, n_out):
            bound = math.sqrt(1.0 / n_in)
            p[name + ".w"] = nx.Tensor(rng.uniform(-bound, bound, (n_in, n_out)), requires_grad=True)
            p[name + ".b"] = nx.Tensor(np.zeros(n_out), requires_grad=True)

        def norm(name):
            p[name + ".g"] = nx.Tensor(np.ones(d), requires_grad=True)
            p[name + ".b"] = nx.Tensor(np.zeros(d), requires_grad=True)

        def attn(name):
            for part in ("q", "k", "v", "o"):
                lin(f"{name}.{part}", d, d)

        for i in range(c.n_enc_layers):
            attn(f"enc.{i}.cross")
            norm(f"enc.{i}.norm1")
            lin(f"enc.{i}.ffn.0", d, f)
            lin(f"enc.{i}.ffn.1", f, d)
            norm(f"enc.{i}.norm2")
        for i in range(c.n_dec_layers):
            attn(f"dec.{i}.self")
            norm(f"dec.{i}.norm1")
            attn(f"dec.{i}.cross")
            norm(f"dec.{i}.norm2")
            lin(f"dec.{i}.ffn.0", d, f)
            lin(f"dec.{i}.ffn.1", f, d)
            norm(f"dec.{i}.norm3")
        lin("score.0", d, f)
        lin("score.1", f, 1)
        return p

    def parameters(self) -> list[nx.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"checkpoint does not match model: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in arrays.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"checkpoint shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    # -- blocks -------------------------------------------------------------

    def _mha(self, xq: nx.Tensor, xkv: nx.Tensor, name: str) -> nx.Tensor:
        p, h = self.params, self.config.n_heads
        B, Tq, d = xq.shape
        Tk = xkv.shape[1]
        dk = d // h

        def heads(x, T):
            return nx.transpose(nx.reshape(x, (B, T, h, dk)), (0, 2, 1, 3))

        q = heads(_linear(xq, p, name + ".q"), Tq)
        k = heads(_linear(xkv, p, name + ".k"), Tk)
        v = heads(_linear(xkv, p, name + ".v"), Tk)
        a = nx.scaled_attention(q, k, v)
        a = nx.reshape(nx.transpose(a, (0, 2, 1, 3)), (B, Tq, d))
        return _linear(a, p, name + ".o")

    def _norm(self, x: nx.Tensor, name: str) -> nx.Tensor:
        return nx.layer_norm(x, self.params[name + ".g"], self.params[name + ".b"])

    def _ffn(self, x: nx.Tensor, name: str) -> nx.Tensor:
        return _linear(nx.relu(_linear(x, self.params, name + ".0")), self.params, name + ".1")

    @staticmethod
    def _batched(x: nx.Tensor) -> tuple[nx.Tensor, bool]:
        if x.ndim == 2:
            return nx.reshape(x, (1,) + x.shape), True
        return x, False

    def encode(self, P: nx.Tensor, O: nx.Tensor) -> nx.Tensor:
        """Pose tokens query the object tokens; output has one row per pose token."""
        P, squeeze = self._batched(P)
        O, _ = self._batched(O)
        if P.shape[-1] != self.config.d_T or O.shape[-1] != self.config.d_T:
            raise ValueError(f"encoder width mismatch: P{P.shape} O{O.shape}, d_T={self.config.d_T}")
        x = P
        for i in range(self.config.n_enc_layers):
            x = self._norm(nx.add(x, self._mha(x, O, f"enc.{i}.cross")), f"enc.{i}.norm1")
            x = self._norm(nx.add(x, self._ffn(x, f"enc.{i}.ffn")), f"enc.{i}.norm2")
        return nx.reshape(x, x.shape[1:]) if squeeze else x

    def decode(self, D: nx.Tensor, memory: nx.Tensor) -> nx.Tensor:
        """Relation (or object) tokens: self-attention, then cross-attention to memory."""
        D, squeeze = self._batched(D)
        memory, _ = self._batched(memory)
        if D.shape[-1] != memory.shape[-1]:
            raise ValueError(f"decoder width mismatch: D{D.shape} memory{memory.shape}")
        x = D
        for i in range(self.config.n_dec_layers):
            x = self._norm(nx.add(x, self._mha(x, x, f"dec.{i}.self")), f"dec.{i}.norm1")
            x = self._norm(nx.add(x, self._mha(x, memory, f"dec.{i}.cross")), f"dec.{i}.norm2")
            x = self._norm(nx.add(x, self._ffn(x, f"dec.{i}.ffn")), f"dec.{i}.norm3")
        return nx.reshape(x, x.shape[1:]) if squeeze else x

    def logits(self, decoded: nx.Tensor) -> nx.Tensor:
        z = self._ffn(decoded, "score")
        return nx.reshape(z, z.shape[:-1])

    def score(self, decoded: nx.Tensor) -> nx.Tensor:
        """Per-token sigmoid scores, no threshold."""
        return nx.sigmoid(self.logits(decoded))

    def forward_batch(self, batch: Batch) -> nx.Tensor:
        P, O, R = assemble_arrays(batch.landmarks, batch.centroids, batch.angles, batch.wh, self.encoding)
        memory = self.encode(P, O)
        D = R if self.config.modality_mode == "three" else O
        return self.score(self.decode(D, memory))

    def forward(self, sample: Sample) -> ScoreVector:
        with nx.no_grad():
            s = self.forward_batch(make_batch([sample]))
        return ScoreVector(s.data[0].copy())

    def score_samples(self, samples: Sequence[Sample], batch_size: int = 256) -> list[np.ndarray]:
        """Scores for many samples, grouped by object count internally."""
        out: list[np.ndarray | None] = [None] * len(samples)
        packed = PackedDataset(samples)
        with nx.no_grad():
            for idx, b in packed.batches(batch_size):
                s = self.forward_batch(b).data
                for j, i in enumerate(idx):
                    out[i] = s[j].copy()
        return out  # type: ignore[return-value]

    def predict_samples(self, samples: Sequence[Sample]) -> list[Prediction]:
        return [predict(s) for s in self.score_samples(samples)]

    def batch_loss(self, batch: Batch) -> nx.Tensor:
        return nx.bce_loss(self.forward_batch(batch), batch.labels)


def forward(sample: Sample, config: ModelConfig, weights: dict[str, np.ndarray]) -> ScoreVector:
    model = MMITF(config)
    model.load_state_dict(weights)
    return model.forward(sample)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    val_top1: float | None = None
    val_top2: float | None = None
    seconds: float = 0.0


@dataclass
class TrainingLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs]}


def topk_accuracy(scores: Iterable[np.ndarray], samples: Sequence[Sample], k: int) -> float:
    hits = 0
    n = 0
    for s, sample in zip(scores, samples):
        ranked = predict(s).ranked[:k]
        hits += bool(set(int(i) for i in ranked) & set(sample.targets))
        n += 1
    return hits / n if n else float("nan")


def evaluate_loss(model: MMITF, packed: PackedDataset, batch_size: int = 256) -> float:
    total = 0.0
    with nx.no_grad():
        for idx, b in packed.batches(batch_size):
            total += model.batch_loss(b).item() * len(idx)
    return total / len(packed)


def train(
    dataset: Sequence[Sample],
    config: ModelConfig | None = None,
    hyper: TrainConfig | None = None,
    val: Sequence[Sample] | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    model: MMITF | None = None,
) -> tuple[MMITF, TrainingLog]:
    """Minimise mean BCE with Adam; batches group samples of equal object count."""
    if not dataset:
        raise ValueError("training needs a nonempty dataset")
    config = config or ModelConfig()
    hyper = hyper or TrainConfig()
    model = model or MMITF(config, seed=hyper.seed)
    params = model.parameters()
    opt = nx.Adam(params, lr=hyper.learning_rate, betas=(hyper.beta1, hyper.beta2), eps=hyper.epsilon)
    rng = np.random.default_rng(np.random.SeedSequence(hyper.seed).spawn(2)[1])
    packed = PackedDataset(dataset)
    val_packed = PackedDataset(val) if val else None
    tlog = TrainingLog()

    for epoch in range(hyper.epochs):
        t0 = time.perf_counter()
        total = 0.0
        for idx, b in packed.batches(hyper.batch_size, rng):
            opt.zero_grad()
            loss = model.batch_loss(b)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, step {opt.state.step_count}")
            loss.backward()
            opt.step()
            tlog.step_losses.append(value)
            total += value * len(idx)
        rec = EpochRecord(epoch, total / len(packed))
        if val_packed is not None:
            rec.val_loss = evaluate_loss(model, val_packed)
            scores = model.score_samples(val)
            rec.val_top1 = topk_accuracy(scores, val, 1)
            rec.val_top2 = topk_accuracy(scores, val, 2)
        rec.seconds = time.perf_counter() - t0
        tlog.epochs.append(rec)
        log.info("epoch %d train_loss=%.5f val_top1=%s", epoch, rec.train_loss, rec.val_top1)
        if on_epoch is not None:
            on_epoch(rec)
    return model, tlog


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def save_model(path, model: MMITF, extra: dict | None = None) -> None:
    header = {"kind": "mmitf", "model_config": asdict(model.config)}
    if extra:
        header["extra"] = extra
    nx.save_checkpoint(path, model.state_dict(), header)


def load_model(path) -> MMITF:
    arrays, header = nx.load_checkpoint(path)
    if header.get("kind") != "mmitf":
        raise ValueError(f"{path}: not an MM-ITF checkpoint (kind={header.get('kind')!r})")
    model = MMITF(ModelConfig.from_dict(header["model_config"]))
    model.load_state_dict(arrays)
    return model


__all__ = [
    "Batch",
    "MMITF",
    "ModelConfig",
    "N_LANDMARKS",
    "PackedDataset",
    "Prediction",
    "ScoreVector",
    "TrainConfig",
    "TrainingDiverged",
    "TrainingLog",
    "forward",
    "load_model",
    "loss_targets",
    "make_batch",
    "predict",
    "save_model",
    "train",
]
