"""A small graph-convolution classifier with exact analytic gradients.

Per frame, layer l maps joint features H^l (N x C_l) to
relu(A_hat @ H^l @ W^l), where A_hat is the row-normalized
adjacency-plus-self-loops of the skeleton. Features are mean-pooled over
frames and joints and fed to a linear head. Everything is plain numpy with
hand-written reverse mode, so feature-map and input gradients are exact and
auditable; that is what the class-activation extraction relies on.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .motion import Motion, SkeletonTopology, dumps_decimal, get_topology
from .synth import Dataset


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class GraphConvClassifier:
    topology: str
    channels: tuple[int, ...]            # (D, C_1, ..., C_L)
    num_classes: int
    conv_weights: list[np.ndarray]       # W_l with shape (C_l, C_{l+1})
    head_weight: np.ndarray              # (num_classes, C_L)
    head_bias: np.ndarray                # (num_classes,)
    adjacency_norm: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.adjacency_norm is None:
            self.adjacency_norm = get_topology(self.topology).normalized_adjacency()
        row_sums = self.adjacency_norm.sum(axis=1)
        if not np.allclose(row_sums, 1.0, atol=1e-9):
            raise ValueError("normalized adjacency rows must sum to 1")

    @property
    def layer_count(self) -> int:
        return len(self.conv_weights)


@dataclass
class FeatureTape:
    """Per-layer feature maps cached during a forward pass.

    layers[0] is the input coordinates (T, N, D); layers[l] for l >= 1 is the
    post-relu output of conv layer l (T, N, C_l). pooled and logits complete
    the record.
    """

    layers: list[np.ndarray]
    pooled: np.ndarray
    logits: np.ndarray


def init_classifier(topo: SkeletonTopology, channels: tuple[int, ...], num_classes: int,
                    seed: int, input_dim: int = 3) -> GraphConvClassifier:
    """Fresh classifier with He-scaled weights; fully determined by the seed."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    dims = (input_dim, *channels)
    conv = [rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
            for i in range(len(dims) - 1)]
    head_w = rng.normal(0.0, np.sqrt(1.0 / dims[-1]), size=(num_classes, dims[-1]))
    head_b = np.zeros(num_classes)
    return GraphConvClassifier(topology=topo.name, channels=dims, num_classes=num_classes,
                               conv_weights=conv, head_weight=head_w, head_bias=head_b,
                               adjacency_norm=topo.normalized_adjacency())


# ---------------------------------------------------------------------------
# forward / backward (batched internally; B = 1 for the public single paths)
# ---------------------------------------------------------------------------

def _forward_batch(model: GraphConvClassifier, x: np.ndarray):
    """x: (B, T, N, D). Returns (feature list, pooled (B, C_L), logits (B, K))."""
    a_hat = model.adjacency_norm
    feats = [x]
    h = x
    for w in model.conv_weights:
        z = np.einsum("nm,btmc->btnc", a_hat, h, optimize=True)
        h = np.maximum(z @ w, 0.0)
        feats.append(h)
    pooled = h.mean(axis=(1, 2))
    logits = pooled @ model.head_weight.T + model.head_bias
    return feats, pooled, logits


def _backward_features_batch(model: GraphConvClassifier, feats: list[np.ndarray],
                             dlogits: np.ndarray) -> list[np.ndarray]:
    """Gradients of a scalar (with given logit gradient) w.r.t. every cached
    feature map, input included. dlogits: (B, K)."""
    b, t, n, _ = feats[0].shape
    dpooled = dlogits @ model.head_weight                       # (B, C_L)
    grads = [None] * len(feats)
    grads[-1] = np.broadcast_to(dpooled[:, None, None, :] / (t * n),
                                feats[-1].shape).copy()
    a_hat_t = model.adjacency_norm.T
    for l in range(model.layer_count - 1, -1, -1):
        gate = grads[l + 1] * (feats[l + 1] > 0.0)
        dz = gate @ model.conv_weights[l].T
        grads[l] = np.einsum("nm,btmc->btnc", a_hat_t, dz, optimize=True)
    return grads


def _check_motion(model: GraphConvClassifier, motion: Motion) -> np.ndarray:
    if motion.N != model.adjacency_norm.shape[0]:
        raise ValueError(f"motion has {motion.N} joints, model expects "
                         f"{model.adjacency_norm.shape[0]}")
    if motion.D != model.channels[0]:
        raise ValueError(f"motion has {motion.D} coordinate dims, model expects "
                         f"{model.channels[0]}")
    return motion.frames


def forward(model: GraphConvClassifier, motion: Motion) -> tuple[np.ndarray, FeatureTape]:
    x = _check_motion(model, motion)
    feats, pooled, logits = _forward_batch(model, x[None])
    tape = FeatureTape(layers=[f[0] for f in feats], pooled=pooled[0], logits=logits[0])
    return logits[0], tape


def predict(model: GraphConvClassifier, motion: Motion) -> int:
    logits, _ = forward(model, motion)
    return int(np.argmax(logits))


def predict_batch(model: GraphConvClassifier, motions) -> np.ndarray:
    x = np.stack([m.frames for m in motions])
    _, _, logits = _forward_batch(model, x)
    return np.argmax(logits, axis=1)


def feature_gradients(model: GraphConvClassifier, motion: Motion, class_id: int,
                      ) -> tuple[list[np.ndarray], FeatureTape]:
    """Exact gradients of the class logit w.r.t. every cached feature map."""
    if not 0 <= class_id < model.num_classes:
        raise ValueError(f"class index {class_id} out of range")
    x = _check_motion(model, motion)
    feats, pooled, logits = _forward_batch(model, x[None])
    dlogits = np.zeros((1, model.num_classes))
    dlogits[0, class_id] = 1.0
    grads = _backward_features_batch(model, feats, dlogits)
    tape = FeatureTape(layers=[f[0] for f in feats], pooled=pooled[0], logits=logits[0])
    return [g[0] for g in grads], tape


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _loss_logit_grad(logits: np.ndarray, loss_spec) -> np.ndarray:
    kind = loss_spec[0]
    if kind == "cross_entropy":
        y = int(loss_spec[1])
        g = _softmax(logits)
        g[..., y] -= 1.0
        return g
    if kind == "logit":
        g = np.zeros_like(logits)
        g[..., int(loss_spec[1])] = 1.0
        return g
    if kind == "logit_diff":
        a, b = loss_spec[1]
        g = np.zeros_like(logits)
        g[..., int(a)] = 1.0
        g[..., int(b)] -= 1.0
        return g
    raise ValueError(f"unknown loss spec {loss_spec!r}")


def input_gradient(model: GraphConvClassifier, motion: Motion, loss_spec) -> np.ndarray:
    """Exact T x N x D gradient of the specified loss w.r.t. the coordinates.

    loss_spec is one of ("cross_entropy", label), ("logit", class),
    ("logit_diff", (class_a, class_b)).
    """
    x = _check_motion(model, motion)
    feats, _, logits = _forward_batch(model, x[None])
    dlogits = _loss_logit_grad(logits, loss_spec)
    grads = _backward_features_batch(model, feats, dlogits)
    return grads[0][0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def accuracy(model: GraphConvClassifier, motions) -> float:
    if not motions:
        return float("nan")
    labels = np.array([m.label for m in motions])
    return float((predict_batch(model, motions) == labels).mean())


def train_classifier(model: GraphConvClassifier, dataset: Dataset, epochs: int = 40,
                     learning_rate: float = 0.2, seed: int = 0, batch_size: int = 16,
                     batch_transform=None) -> dict:
    """Mini-batch gradient descent on cross-entropy, in place.

    Deterministic for a given seed. batch_transform, if given, maps a list of
    motions (plus labels) to the actual training inputs; adversarial training
    plugs in here, and the identity transform reproduces plain training
    query-for-query.

    Returns a history dict with per-epoch loss and train/test accuracy.
    """
    train_motions = list(dataset.subset(dataset.train_indices))
    test_motions = list(dataset.subset(dataset.test_indices))
    if not train_motions:
        raise ValueError("dataset has no training samples")
    rng = np.random.default_rng(np.random.PCG64(seed))
    history = {"loss": [], "train_acc": [], "test_acc": []}
    for epoch in range(epochs):
        order = rng.permutation(len(train_motions))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            batch = [train_motions[i] for i in order[start:start + batch_size]]
            labels = np.array([m.label for m in batch])
            if batch_transform is not None:
                batch = batch_transform(batch, labels)
            x = np.stack([m.frames for m in batch])
            loss = _sgd_step(model, x, labels, learning_rate)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
            epoch_loss += loss * len(batch)
        history["loss"].append(epoch_loss / len(train_motions))
        history["train_acc"].append(accuracy(model, train_motions))
        history["test_acc"].append(accuracy(model, test_motions))
    return history


def _sgd_step(model: GraphConvClassifier, x: np.ndarray, labels: np.ndarray,
              lr: float) -> float:
    b = x.shape[0]
    feats, pooled, logits = _forward_batch(model, x)
    probs = _softmax(logits)
    loss = float(-np.log(np.maximum(probs[np.arange(b), labels], 1e-300)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    # head
    d_head_w = dlogits.T @ pooled
    d_head_b = dlogits.sum(axis=0)
    # conv stack
    t, n = x.shape[1], x.shape[2]
    dh = np.broadcast_to((dlogits @ model.head_weight)[:, None, None, :] / (t * n),
                         feats[-1].shape)
    a_hat, a_hat_t = model.adjacency_norm, model.adjacency_norm.T
    d_conv = [None] * model.layer_count
    for l in range(model.layer_count - 1, -1, -1):
        gate = dh * (feats[l + 1] > 0.0)
        z = np.einsum("nm,btmc->btnc", a_hat, feats[l], optimize=True)
        d_conv[l] = np.einsum("btnc,btnk->ck", z, gate, optimize=True)
        dh = np.einsum("nm,btmc->btnc", a_hat_t, gate @ model.conv_weights[l].T,
                       optimize=True)
    model.head_weight -= lr * d_head_w
    model.head_bias -= lr * d_head_b
    for l in range(model.layer_count):
        model.conv_weights[l] -= lr * d_conv[l]
    return loss


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: GraphConvClassifier, path: str | Path) -> None:
    doc = {
        "format_version": 1,
        "arch": {
            "topology": model.topology,
            "channels": list(model.channels),
            "num_classes": model.num_classes,
        },
        "weights": {
            "conv": [w for w in model.conv_weights],
            "head_weight": model.head_weight,
            "head_bias": model.head_bias,
        },
    }
    Path(path).write_text(dumps_decimal(doc), encoding="utf-8")


def load_checkpoint(path: str | Path) -> GraphConvClassifier:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    arch = doc["arch"]
    weights = doc["weights"]
    return GraphConvClassifier(
        topology=arch["topology"],
        channels=tuple(arch["channels"]),
        num_classes=int(arch["num_classes"]),
        conv_weights=[np.asarray(w, float) for w in weights["conv"]],
        head_weight=np.asarray(weights["head_weight"], float),
        head_bias=np.asarray(weights["head_bias"], float),
    )
