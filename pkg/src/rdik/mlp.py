"""Two-stage classifier for the redundancy parameters, trained from scratch.

Stage 1 maps the 19-dim feature vector to an 8-way branch-class
distribution (two 32-unit ReLU layers + softmax); stage 2 takes the
feature vector concatenated with the stage-1 output and predicts the
arm-angle bin (same hidden shape, n_b-way softmax).  Both heads train
jointly by Adam on the summed cross-entropies plus an L2 penalty on the
weight matrices.  During training the stage-2 input uses the stage-1
softmax (differentiable); at inference it uses the one-hot argmax.

Everything is plain numpy: forward, backprop, and the optimizer live
here, and the gradients are finite-difference checked in the tests.
"""

import base64
import hashlib
import json
import time
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

logger = logging.getLogger(__name__)

INPUT_DIM = 19
N_CLASSES = 8
HIDDEN = 32

# serialization order of the parameter tensors (row-major float64 LE)
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "V1", "c1", "V2", "c2", "V3", "c3")
WEIGHT_NAMES = frozenset({"W1", "W2", "W3", "V1", "V2", "V3"})


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    l2: float = 1e-6
    batch_size: int = 2000
    epochs: int = 500
    seed: int = 0
    reshuffle_each_epoch: bool = True

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs) <= 0 or self.l2 < 0:
            raise ValueError("hyperparameters must be positive")


class Model:
    """Parameter container; n_b is the bin-head output arity."""

    def __init__(self, n_b: int, params: dict):
        self.n_b = n_b
        self.params = params
        self.meta = {}

    @classmethod
    def initialized(cls, n_b: int, seed: int) -> "Model":
        """He-uniform fan-in init for the weights, zero biases."""
        rng = np.random.default_rng([seed, 0xA11])
        shapes = _layer_shapes(n_b)
        params = {}
        for name in PARAM_NAMES:
            shape = shapes[name]
            if name in WEIGHT_NAMES:
                limit = np.sqrt(6.0 / shape[0])
                params[name] = rng.uniform(-limit, limit, size=shape)
            else:
                params[name] = np.zeros(shape)
        return cls(n_b=n_b, params=params)


def _layer_shapes(n_b: int) -> dict:
    return {
        "W1": (INPUT_DIM, HIDDEN), "b1": (HIDDEN,),
        "W2": (HIDDEN, HIDDEN), "b2": (HIDDEN,),
        "W3": (HIDDEN, N_CLASSES), "b3": (N_CLASSES,),
        "V1": (INPUT_DIM + N_CLASSES, HIDDEN), "c1": (HIDDEN,),
        "V2": (HIDDEN, HIDDEN), "c2": (HIDDEN,),
        "V3": (HIDDEN, n_b), "c3": (n_b,),
    }


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(model: Model, zeta, hard_concat: bool = True):
    """Class and bin probability vectors for zeta (19,) or (B, 19).

    hard_concat selects the inference behavior (one-hot argmax feeds the
    bin head); training uses the soft stage-1 output.
    """
    p = model.params
    z = np.atleast_2d(np.asarray(zeta, dtype=float))
    h1 = np.maximum(z @ p["W1"] + p["b1"], 0.0)
    h2 = np.maximum(h1 @ p["W2"] + p["b2"], 0.0)
    pc = _softmax(h2 @ p["W3"] + p["b3"])
    if hard_concat:
        stage2_in = np.zeros_like(pc)
        stage2_in[np.arange(len(pc)), pc.argmax(axis=1)] = 1.0
    else:
        stage2_in = pc
    x2 = np.concatenate([z, stage2_in], axis=1)
    g1 = np.maximum(x2 @ p["V1"] + p["c1"], 0.0)
    g2 = np.maximum(g1 @ p["V2"] + p["c2"], 0.0)
    pb = _softmax(g2 @ p["V3"] + p["c3"])
    if np.ndim(zeta) == 1:
        return pc[0], pb[0]
    return pc, pb


def predict(model: Model, zeta):
    """(branch class, bin index, (class confidence, bin confidence))."""
    pc, pb = forward(model, zeta, hard_concat=True)
    if pc.ndim == 1:
        return int(pc.argmax()), int(pb.argmax()), (float(pc.max()), float(pb.max()))
    return pc.argmax(axis=1), pb.argmax(axis=1), (pc.max(axis=1), pb.max(axis=1))


def loss_and_grads(model: Model, z, y_class, y_bin, l2: float):
    """Joint loss (mean CE of both heads + L2 on weights) and gradients."""
    p = model.params
    B = z.shape[0]
    h1 = np.maximum(z @ p["W1"] + p["b1"], 0.0)
    h2 = np.maximum(h1 @ p["W2"] + p["b2"], 0.0)
    lc = h2 @ p["W3"] + p["b3"]
    pc = _softmax(lc)
    x2 = np.concatenate([z, pc], axis=1)
    g1 = np.maximum(x2 @ p["V1"] + p["c1"], 0.0)
    g2 = np.maximum(g1 @ p["V2"] + p["c2"], 0.0)
    lb = g2 @ p["V3"] + p["c3"]

    idx = np.arange(B)
    loss_c = -_log_softmax(lc)[idx, y_class].mean()
    loss_b = -_log_softmax(lb)[idx, y_bin].mean()
    l2_term = l2 * sum(float(np.sum(p[n] * p[n])) for n in WEIGHT_NAMES)
    loss = loss_c + loss_b + l2_term

    g = {}
    dlb = _softmax(lb)
    dlb[idx, y_bin] -= 1.0
    dlb /= B
    g["V3"] = g2.T @ dlb + 2.0 * l2 * p["V3"]
    g["c3"] = dlb.sum(axis=0)
    dg2 = (dlb @ p["V3"].T) * (g2 > 0)
    g["V2"] = g1.T @ dg2 + 2.0 * l2 * p["V2"]
    g["c2"] = dg2.sum(axis=0)
    dg1 = (dg2 @ p["V2"].T) * (g1 > 0)
    g["V1"] = x2.T @ dg1 + 2.0 * l2 * p["V1"]
    g["c1"] = dg1.sum(axis=0)
    dx2 = dg1 @ p["V1"].T

    dlc = pc.copy()
    dlc[idx, y_class] -= 1.0
    dlc /= B
    dpc = dx2[:, INPUT_DIM:]
    dlc += pc * (dpc - (dpc * pc).sum(axis=1, keepdims=True))   # softmax jacobian
    g["W3"] = h2.T @ dlc + 2.0 * l2 * p["W3"]
    g["b3"] = dlc.sum(axis=0)
    dh2 = (dlc @ p["W3"].T) * (h2 > 0)
    g["W2"] = h1.T @ dh2 + 2.0 * l2 * p["W2"]
    g["b2"] = dh2.sum(axis=0)
    dh1 = (dh2 @ p["W2"].T) * (h1 > 0)
    g["W1"] = z.T @ dh1 + 2.0 * l2 * p["W1"]
    g["b1"] = dh1.sum(axis=0)
    return loss, g


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(v) for n, v in params.items()}
        self.v = {n: np.zeros_like(v) for n, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for n in PARAM_NAMES:
            gn = grads[n]
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * gn
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * gn * gn
            params[n] -= self.lr * (self.m[n] / b1c) / (np.sqrt(self.v[n] / b2c) + self.eps)


def evaluate(model: Model, z, y_class, y_bin, batch: int = 20000):
    """Accuracy and mean CE loss of both heads (inference-mode concat)."""
    n = len(z)
    hits_c = hits_b = 0
    loss_c = loss_b = 0.0
    for s in range(0, n, batch):
        zb = z[s:s + batch]
        pc, pb = forward(model, zb, hard_concat=True)
        idx = np.arange(len(zb))
        hits_c += int((pc.argmax(axis=1) == y_class[s:s + batch]).sum())
        hits_b += int((pb.argmax(axis=1) == y_bin[s:s + batch]).sum())
        loss_c += float(-np.log(np.maximum(pc[idx, y_class[s:s + batch]], 1e-300)).sum())
        loss_b += float(-np.log(np.maximum(pb[idx, y_bin[s:s + batch]], 1e-300)).sum())
    return {
        "acc_class": hits_c / n, "acc_bin": hits_b / n,
        "loss_class": loss_c / n, "loss_bin": loss_b / n,
    }


def train(z_train, yc_train, yb_train, z_val, yc_val, yb_val, n_b: int,
          config: TrainConfig, log_every: int = 10) -> Model:
    """Train both heads jointly; returns the model with history attached.

    Per-epoch training metrics are the running batch averages (the
    quantities actually optimized); validation is a full inference-mode
    pass.  Aborts on a non-finite loss.
    """
    model = Model.initialized(n_b, config.seed)
    opt = Adam(model.params, config.learning_rate)
    rng = np.random.default_rng([config.seed, 0x5401])
    n = len(z_train)
    history = []
    t0 = time.monotonic()
    order = np.arange(n)
    for epoch in range(config.epochs):
        if config.reshuffle_each_epoch:
            order = rng.permutation(n)
        ep_loss = 0.0
        hits_c = hits_b = seen = 0
        for s in range(0, n, config.batch_size):
            sel = order[s:s + config.batch_size]
            zb, ycb, ybb = z_train[sel], yc_train[sel], yb_train[sel]
            loss, grads = loss_and_grads(model, zb, ycb, ybb, config.l2)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch}, sample offset {s}")
            opt.step(model.params, grads)
            ep_loss += loss * len(sel)
            pc, pb = forward(model, zb, hard_concat=True)
            hits_c += int((pc.argmax(axis=1) == ycb).sum())
            hits_b += int((pb.argmax(axis=1) == ybb).sum())
            seen += len(sel)
        val = evaluate(model, z_val, yc_val, yb_val) if len(z_val) else {
            "acc_class": float("nan"), "acc_bin": float("nan"),
            "loss_class": float("nan"), "loss_bin": float("nan")}
        row = {
            "epoch": epoch,
            "train_loss": ep_loss / seen,
            "train_acc_class": hits_c / seen,
            "train_acc_bin": hits_b / seen,
            "val_acc_class": val["acc_class"],
            "val_acc_bin": val["acc_bin"],
            "val_loss_class": val["loss_class"],
            "val_loss_bin": val["loss_bin"],
        }
        history.append(row)
        if epoch % log_every == 0 or epoch == config.epochs - 1:
            logger.info(
                "epoch %d: loss %.4f acc_c %.4f acc_b %.4f val_c %.4f val_b %.4f (%.0f s)",
                epoch, row["train_loss"], row["train_acc_class"], row["train_acc_bin"],
                row["val_acc_class"], row["val_acc_bin"], time.monotonic() - t0)
    model.meta = {
        "train_config": asdict(config),
        "history": history,
        "val_metrics": history[-1] if history else {},
    }
    return model


# ---------------------------------------------------------------------------
# Model file: JSON envelope + embedded base64 weight blob
# ---------------------------------------------------------------------------

def save_model(model: Model, path, dataset_header_hash: str = ""):
    blob = b"".join(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes()
                    for n in PARAM_NAMES)
    doc = {
        "format": "rdik-model",
        "version": 1,
        "n_b": model.n_b,
        "hidden": HIDDEN,
        "param_order": list(PARAM_NAMES),
        "param_shapes": {n: list(model.params[n].shape) for n in PARAM_NAMES},
        "dataset_header_hash": dataset_header_hash,
        "weights_sha256": hashlib.sha256(blob).hexdigest(),
        "weights_b64": base64.b64encode(blob).decode(),
        **model.meta,
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_model(path) -> Model:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "rdik-model" or doc.get("version") != 1:
        raise ValueError(f"{path}: not a model file")
    blob = base64.b64decode(doc["weights_b64"])
    if hashlib.sha256(blob).hexdigest() != doc["weights_sha256"]:
        raise ValueError(f"{path}: weight blob checksum mismatch")
    params = {}
    offset = 0
    for name in doc["param_order"]:
        shape = tuple(doc["param_shapes"][name])
        size = int(np.prod(shape)) * 8
        params[name] = np.frombuffer(blob[offset:offset + size], dtype="<f8").reshape(shape).copy()
        offset += size
    model = Model(n_b=doc["n_b"], params=params)
    model.meta = {k: doc[k] for k in ("train_config", "history", "val_metrics",
                                      "dataset_header_hash") if k in doc}
    return model


def history_csv(model: Model, path):
    """Per-epoch metric history as CSV."""
    history = model.meta.get("history", [])
    cols = ["epoch", "train_loss", "train_acc_class", "train_acc_bin",
            "val_acc_class", "val_acc_bin", "val_loss_class", "val_loss_bin"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in history:
            f.write(",".join(str(row[c]) for c in cols) + "\n")
