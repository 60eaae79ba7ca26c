"""Geometric comparison method: an MLP pointing/resting gate followed by
nearest-centroid-to-line target selection along the wrist->fingertip line."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import kernels
from . import numerics as nx
from .datagen import Sample
from .features import N_LANDMARKS, GeometryError, HandPose, ImageDims
from .model import Prediction

HIDDEN = (64, 32)
THRESHOLD = 0.5


@dataclass(frozen=True)
class PointingLine:
    anchor: np.ndarray
    direction: np.ndarray


def pointing_line(hand: HandPose) -> PointingLine:
    v = hand.index_finger_tip - hand.wrist
    n = math.hypot(v[0], v[1])
    if n <= kernels.DEGENERATE_EPS:
        raise GeometryError("wrist and index fingertip coincide")
    return PointingLine(hand.wrist.copy(), v / n)


def point_line_distance(c, line: PointingLine, ray: bool = False) -> float:
    """Perpendicular distance to the infinite line; with ``ray`` set, points
    behind the anchor measure to the anchor instead."""
    c = np.asarray(c, dtype=np.float64)
    if ray:
        rel = c - line.anchor
        if rel @ line.direction < 0:
            return float(math.hypot(rel[0], rel[1]))
    d = kernels.line_distances(line.anchor.reshape(1, 2), line.direction.reshape(1, 2), c.reshape(1, 1, 2))
    return float(d[0, 0])


def line_distances(hand: HandPose, centroids: np.ndarray, ray: bool = False) -> np.ndarray:
    line = pointing_line(hand)
    centroids = np.asarray(centroids, dtype=np.float64).reshape(-1, 2)
    d = kernels.line_distances(line.anchor.reshape(1, 2), line.direction.reshape(1, 2), centroids[None])[0]
    if ray and len(centroids):
        rel = centroids - line.anchor
        behind = rel @ line.direction < 0
        d = np.where(behind, np.hypot(rel[:, 0], rel[:, 1]), d)
    return d


# --------------------------------------------------------------------------
# pointing / resting classifier
# --------------------------------------------------------------------------


def hand_features(hands: np.ndarray, wh: np.ndarray) -> np.ndarray:
    """Normalised landmarks flattened to 42 inputs; ``hands`` is (B, 21, 2)."""
    return (hands / wh).reshape(len(hands), 2 * N_LANDMARKS)


class PointingClassifier:
    """42 -> 64 -> 32 -> 1 MLP with ReLU hidden layers and a sigmoid output."""

    def __init__(self, seed: int = 0, params: dict | None = None):
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            sizes = (2 * N_LANDMARKS,) + HIDDEN + (1,)
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
                bound = math.sqrt(1.0 / a)
                params[f"mlp.{i}.w"] = nx.Tensor(rng.uniform(-bound, bound, (a, b)), requires_grad=True)
                params[f"mlp.{i}.b"] = nx.Tensor(np.zeros(b), requires_grad=True)
        self.params = params

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def parameters(self) -> list[nx.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def forward(self, x) -> nx.Tensor:
        h = nx.Tensor(x) if not isinstance(x, nx.Tensor) else x
        for i in range(self.n_layers):
            h = nx.add(nx.matmul(h, self.params[f"mlp.{i}.w"]), self.params[f"mlp.{i}.b"])
            if i < self.n_layers - 1:
                h = nx.relu(h)
        return nx.sigmoid(nx.reshape(h, (h.shape[0],)))

    def probabilities(self, hands: np.ndarray, wh: np.ndarray) -> np.ndarray:
        with nx.no_grad():
            return self.forward(hand_features(hands, wh)).data.copy()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ValueError("checkpoint does not match the baseline classifier layout")
        for k, v in arrays.items():
            self.params[k].data = np.array(v, dtype=np.float64)


@dataclass
class ClassifierTrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0


def _arrays(samples: Sequence[Sample]):
    hands = np.stack([s.hand.landmarks for s in samples])
    wh = np.array([[[s.dims.W, s.dims.H]] for s in samples]).reshape(len(samples), 1, 2)
    labels = np.array([0.0 if s.resting else 1.0 for s in samples])
    return hands, wh, labels


def train_classifier(samples: Sequence[Sample], cfg: ClassifierTrainConfig | None = None) -> PointingClassifier:
    if not samples:
        raise ValueError("training needs a nonempty dataset")
    cfg = cfg or ClassifierTrainConfig()
    clf = PointingClassifier(cfg.seed)
    hands, wh, y = _arrays(samples)
    x = hand_features(hands, wh)
    opt = nx.Adam(clf.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            opt.zero_grad()
            loss = nx.bce_loss(clf.forward(x[sel]), y[sel])
            loss.backward()
            opt.step()
    return clf


def mlp_classify(hand: HandPose, dims: ImageDims, classifier: PointingClassifier) -> float:
    """Probability that ``hand`` is pointing."""
    return float(classifier.probabilities(hand.landmarks[None], np.array([[[dims.W, dims.H]]]))[0])


def _rank(distances: np.ndarray, pointing: bool) -> Prediction:
    n = len(distances)
    order = np.argsort(distances, kind="stable")
    if pointing and n:
        ranked = np.append(order, n)
    else:
        ranked = np.insert(order, 0, n)
    return Prediction(ranked.astype(np.int64), int(ranked[0]))


def baseline_predict(sample: Sample, classifier: PointingClassifier, ray: bool = False) -> Prediction:
    p = mlp_classify(sample.hand, sample.dims, classifier)
    return _rank(line_distances(sample.hand, sample.objects.centroids, ray), p >= THRESHOLD)


def baseline_predict_many(samples: Sequence[Sample], classifier: PointingClassifier, ray: bool = False) -> list[Prediction]:
    if not samples:
        return []
    hands, wh, _ = _arrays(samples)
    probs = classifier.probabilities(hands, wh)
    return [
        _rank(line_distances(s.hand, s.objects.centroids, ray), p >= THRESHOLD) for s, p in zip(samples, probs)
    ]


def save_classifier(path, clf: PointingClassifier, cfg: ClassifierTrainConfig | None = None) -> None:
    header = {"kind": "baseline-mlp", "hidden": list(HIDDEN)}
    if cfg is not None:
        header["train_config"] = asdict(cfg)
    nx.save_checkpoint(path, clf.state_dict(), header)


def load_classifier(path) -> PointingClassifier:
    arrays, header = nx.load_checkpoint(path)
    if header.get("kind") != "baseline-mlp":
        raise ValueError(f"{path}: not a baseline classifier checkpoint (kind={header.get('kind')!r})")
    clf = PointingClassifier()
    clf.load_state_dict(arrays)
    return clf
