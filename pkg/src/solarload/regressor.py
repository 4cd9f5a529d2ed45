"""Tiny numpy CNN that regresses the mean facial solar-loading bias.

Architecture (fixed):

    crop 1x50x50, minus its mean
    conv 3x3 (1->8)  -> relu -> maxpool 2      => 8x24x24
    conv 3x3 (8->16) -> relu -> maxpool 2      => 16x11x11
    flatten -> dense 64 -> relu -> dense 16 -> relu -> dense 1

Parameters are stored in ``PARAM_ORDER``; the model file is an 8-byte magic,
a little-endian uint32 header length, a UTF-8 JSON header and then every
parameter as little-endian float32 in that order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INPUT_SIZE = 50
CONV1, CONV2, HIDDEN1, HIDDEN2 = 8, 16, 64, 16
FLAT = CONV2 * 11 * 11
PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b",
               "fc2_w", "fc2_b", "fc3_w", "fc3_b")
PARAM_SHAPES = {
    "conv1_w": (CONV1, 1, 3, 3), "conv1_b": (CONV1,),
    "conv2_w": (CONV2, CONV1, 3, 3), "conv2_b": (CONV2,),
    "fc1_w": (HIDDEN1, FLAT), "fc1_b": (HIDDEN1,),
    "fc2_w": (HIDDEN2, HIDDEN1), "fc2_b": (HIDDEN2,),
    "fc3_w": (1, HIDDEN2), "fc3_b": (1,),
}
MAGIC = b"SLCNN001"


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class RegressorModel:
    params: dict
    metadata: dict = field(default_factory=dict)
    input_size: int = INPUT_SIZE

    def __post_init__(self):
        for name in PARAM_ORDER:
            p = np.asarray(self.params[name], dtype=float)
            if p.shape != PARAM_SHAPES[name]:
                raise ShapeError(f"{name} has shape {p.shape}, expected {PARAM_SHAPES[name]}")
            if not np.all(np.isfinite(p)):
                raise ValueError(f"{name} has non-finite entries")
            self.params[name] = p

    @classmethod
    def zeros(cls):
        return cls({k: np.zeros(s) for k, s in PARAM_SHAPES.items()})

    @classmethod
    def initialise(cls, seed=0):
        """He-normal weights, zero biases; the output layer starts at zero so an
        untrained model predicts no loading."""
        rng = np.random.default_rng(seed)
        params = {}
        for name in PARAM_ORDER:
            shape = PARAM_SHAPES[name]
            if name.endswith("_b") or name == "fc3_w":
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        return cls(params, {"init_seed": int(seed)})

    def copy(self):
        return RegressorModel({k: v.copy() for k, v in self.params.items()}, dict(self.metadata),
                              self.input_size)

    def flat(self):
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for s in PARAM_SHAPES.values())


def _conv_forward(x, w, b):
    # x (n, c, h, w); w (f, c, 3, 3) -> (n, f, h-2, w-2), valid correlation
    win = sliding_window_view(x, (3, 3), axis=(2, 3))          # n, c, h', w', 3, 3
    out = np.einsum("ncijkl,fckl->nfij", win, w, optimize=True)
    return out + b[None, :, None, None], win


def _conv_backward(dout, win, w, need_dx=True):
    dw = np.einsum("nfij,ncijkl->fckl", dout, win, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        padded = np.pad(dout, ((0, 0), (0, 0), (2, 2), (2, 2)))
        pwin = sliding_window_view(padded, (3, 3), axis=(2, 3))  # n, f, h, w, 3, 3
        dx = np.einsum("nfijkl,fckl->ncij", pwin, w[:, :, ::-1, ::-1], optimize=True)
    return dx, dw, db


def _pool_forward(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], arg


def _pool_backward(dout, arg, shape):
    n, c, h, w = shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def _prepare(crops, size):
    x = np.asarray(crops, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.shape[-2:] != (size, size):
        raise ShapeError(f"crop must be {size}x{size}, got {x.shape[-2:]}")
    x = x - x.mean(axis=(-2, -1), keepdims=True)
    return x[:, None]


def _forward(model, x, keep=False):
    p = model.params
    z1, w1 = _conv_forward(x, p["conv1_w"], p["conv1_b"])
    a1 = np.maximum(z1, 0)
    p1, arg1 = _pool_forward(a1)
    z2, w2 = _conv_forward(p1, p["conv2_w"], p["conv2_b"])
    a2 = np.maximum(z2, 0)
    p2, arg2 = _pool_forward(a2)
    f = p2.reshape(len(x), -1)
    h1 = np.maximum(f @ p["fc1_w"].T + p["fc1_b"], 0)
    h2 = np.maximum(h1 @ p["fc2_w"].T + p["fc2_b"], 0)
    y = (h2 @ p["fc3_w"].T + p["fc3_b"])[:, 0]
    if not keep:
        return y
    return y, dict(w1=w1, z1=z1, arg1=arg1, a1shape=a1.shape, p1=p1, w2=w2, z2=z2, arg2=arg2,
                   a2shape=a2.shape, f=f, h1=h1, h2=h2)


def predict(model: RegressorModel, crops):
    """Batch forward pass; ``crops`` is (n, 50, 50) in degC."""
    return _forward(model, _prepare(crops, model.input_size))


def regressor_forward(model: RegressorModel, crop) -> float:
    crop = np.asarray(crop, dtype=float)
    if crop.shape != (model.input_size, model.input_size):
        raise ShapeError(f"crop must be {model.input_size}x{model.input_size}, got {crop.shape}")
    return float(predict(model, crop[None])[0])


def loss_and_grads(model: RegressorModel, crops, targets):
    """Mean squared error over the batch and its gradient for every parameter."""
    x = _prepare(crops, model.input_size)
    t = np.asarray(targets, dtype=float).reshape(-1)
    y, c = _forward(model, x, keep=True)
    n = len(t)
    err = y - t
    loss = float(np.mean(err**2))
    p = model.params
    g = {}
    dy = (2.0 / n) * err[:, None]
    g["fc3_w"] = dy.T @ c["h2"]
    g["fc3_b"] = dy.sum(axis=0)
    dh2 = (dy @ p["fc3_w"]) * (c["h2"] > 0)
    g["fc2_w"] = dh2.T @ c["h1"]
    g["fc2_b"] = dh2.sum(axis=0)
    dh1 = (dh2 @ p["fc2_w"]) * (c["h1"] > 0)
    g["fc1_w"] = dh1.T @ c["f"]
    g["fc1_b"] = dh1.sum(axis=0)
    df = dh1 @ p["fc1_w"]
    dp2 = df.reshape(n, CONV2, 11, 11)
    da2 = _pool_backward(dp2, c["arg2"], c["a2shape"])
    dz2 = da2 * (c["z2"] > 0)
    dp1, g["conv2_w"], g["conv2_b"] = _conv_backward(dz2, c["w2"], p["conv2_w"])
    da1 = _pool_backward(dp1, c["arg1"], c["a1shape"])
    dz1 = da1 * (c["z1"] > 0)
    _, g["conv1_w"], g["conv1_b"] = _conv_backward(dz1, c["w1"], p["conv1_w"], need_dx=False)
    return loss, g


def regressor_backward(model: RegressorModel, crop, target):
    """Gradients of the squared error ``(f(crop) - target)^2`` for one crop."""
    return loss_and_grads(model, np.asarray(crop, dtype=float)[None], [target])[1]


def flip_model(model: RegressorModel) -> RegressorModel:
    """Mirror the network so that ``f'(fliplr(x)) == f(x)`` exactly."""
    m = model.copy()
    m.params["conv1_w"] = m.params["conv1_w"][..., ::-1].copy()
    m.params["conv2_w"] = m.params["conv2_w"][..., ::-1].copy()
    w = m.params["fc1_w"].reshape(HIDDEN1, CONV2, 11, 11)
    m.params["fc1_w"] = w[..., ::-1].reshape(HIDDEN1, FLAT).copy()
    return m


def flip_grads(grads):
    """Map gradients of a model to the gradients of its mirror (see flip_model)."""
    g = {k: v.copy() for k, v in grads.items()}
    g["conv1_w"] = g["conv1_w"][..., ::-1].copy()
    g["conv2_w"] = g["conv2_w"][..., ::-1].copy()
    g["fc1_w"] = g["fc1_w"].reshape(HIDDEN1, CONV2, 11, 11)[..., ::-1].reshape(HIDDEN1, FLAT).copy()
    return g


# ---------------------------------------------------------------- model file

def save_model(model: RegressorModel, path):
    header = {
        "format": "solarload.regressor/1",
        "architecture": {"input": [1, INPUT_SIZE, INPUT_SIZE], "conv": [[1, CONV1, 3], [CONV1, CONV2, 3]],
                         "pool": 2, "dense": [FLAT, HIDDEN1, HIDDEN2, 1], "activation": "relu",
                         "input_shift": "crop_mean"},
        "param_order": list(PARAM_ORDER),
        "param_shapes": {k: list(PARAM_SHAPES[k]) for k in PARAM_ORDER},
        "dtype": "<f4",
        "metadata": model.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = model.flat().astype("<f4").tobytes()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + body)


def load_model(path) -> RegressorModel:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a solarload regressor file")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + n])
    if header["param_order"] != list(PARAM_ORDER):
        raise ShapeError(f"{path}: unexpected parameter layout")
    flat = np.frombuffer(data[12 + n:], dtype="<f4").astype(float)
    params, i = {}, 0
    for name in PARAM_ORDER:
        size = int(np.prod(PARAM_SHAPES[name]))
        if i + size > len(flat):
            raise ShapeError(f"{path}: parameter block truncated")
        params[name] = flat[i:i + size].reshape(PARAM_SHAPES[name])
        i += size
    if i != len(flat):
        raise ShapeError(f"{path}: trailing bytes after parameter block")
    return RegressorModel(params, header.get("metadata", {}))


# ---------------------------------------------------------------- training

@dataclass
class CropDataset:
    """50x50 crops with scalar bias labels, grouped by simulated identity."""

    crops: np.ndarray        # (n, 50, 50) degC
    labels: np.ndarray       # (n,) degC
    identity: np.ndarray     # (n,) int
    masks: np.ndarray        # (n, 50, 50) bool, True on skin
    phases: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.crops) == len(self.identity) == len(self.masks) == n):
            raise ValueError("dataset arrays differ in length")
        if self.crops.shape[1:] != (INPUT_SIZE, INPUT_SIZE):
            raise ShapeError("dataset crops must be 50x50")

    def __len__(self):
        return len(self.labels)

    def subset(self, keep):
        keep = np.asarray(keep)
        return CropDataset(self.crops[keep], self.labels[keep], self.identity[keep], self.masks[keep],
                           None if self.phases is None else self.phases[keep])

    def where_identity(self, ids):
        return self.subset(np.isin(self.identity, list(ids)))

    @property
    def identities(self):
        return np.unique(self.identity)


def identity_config(index, seed=0):
    """Randomised subject: skin tone, core temperature, sun strength, pose, texture."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    light = np.array([rng.uniform(-0.5, 0.5), rng.uniform(0.2, 0.7), 0.8])
    return {
        "face": dict(preset="ellipsoid", melanin_mu=float(np.exp(rng.uniform(np.log(500), np.log(8000)))),
                     core_temp=float(rng.uniform(36.5, 38.0)), seed=int(rng.integers(1 << 31)),
                     light_dir=[float(x) for x in light / np.linalg.norm(light)],
                     face_scale=float(rng.uniform(0.75, 0.85))),
        "irradiance": float(rng.uniform(300.0, 1000.0)),
        "noise_seed": int(rng.integers(1 << 31)),
    }


def build_crop_dataset(n_identities=16, frames_per_identity=30, seed=0, *, fps=0.1, noise=True,
                       steady_s=0.0) -> CropDataset:
    """Render one loading/cooling session per identity and crop its face centre."""
    from .scene import Schedule, SensorNoise, SunConfig, centred_crop_origin, crop, make_face, render_sequence

    crops, labels, ids, masks, phases = [], [], [], [], []
    for i in range(n_identities):
        cfg = identity_config(i, seed)
        face = make_face(**cfg["face"])
        sensor = SensorNoise(seed=cfg["noise_seed"]) if noise else SensorNoise.off()
        schedule = Schedule(steady_s=steady_s, fps=fps)
        seq, truth = render_sequence(face, SunConfig(cfg["irradiance"]), sensor, schedule)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i, 1)))
        k = np.sort(rng.choice(len(seq), size=min(frames_per_identity, len(seq)), replace=False))
        top, left = centred_crop_origin(face, INPUT_SIZE)
        crops.append(crop(seq.temps[k], top, left, INPUT_SIZE))
        masks.append(np.broadcast_to(crop(face.foreground, top, left, INPUT_SIZE), (len(k), INPUT_SIZE, INPUT_SIZE)))
        labels.append(truth.beta_f[k])
        ids.append(np.full(len(k), i))
        phases.append(seq.phases[k])
    return CropDataset(np.concatenate(crops), np.concatenate(labels), np.concatenate(ids),
                       np.concatenate(masks).copy(), np.concatenate(phases))


def augment(crops, masks, rng, fever_offset=1.6, p_flip=0.5, p_fever=0.5):
    """Random horizontal flips and foreground fever offsets; labels are unchanged by both."""
    out = np.array(crops, dtype=float, copy=True)
    flip = rng.random(len(out)) < p_flip
    fever = rng.random(len(out)) < p_fever
    out[fever] += fever_offset * masks[fever]
    out[flip] = out[flip][..., ::-1]
    return out


def mean_abs_error(model, dataset: CropDataset, fever_offset=0.0, flip=False):
    x = dataset.crops + fever_offset * dataset.masks
    if flip:
        x = x[..., ::-1]
    return float(np.mean(np.abs(predict(model, x) - dataset.labels)))


@dataclass
class TrainingReport:
    epochs: int
    train_loss: list
    val_mae: list
    best_epoch: int


def train_regressor(train: CropDataset, validation: CropDataset, epochs=20, seed=0, *, lr=1e-3,
                    batch_size=32, betas=(0.9, 0.999), eps=1e-8, fever_offset=1.6, log=None):
    """Adam on mean squared error with flip and fever augmentation.

    Deterministic for a given seed.  Returns ``(model, report)`` where the
    model is the one with the lowest validation MAE seen after any epoch.
    """
    if len(train) == 0 or len(validation) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(seed)
    model = RegressorModel.initialise(int(rng.integers(1 << 31)))
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(x) for k, x in model.params.items()}
    step = 0
    best, best_mae, best_epoch = model.copy(), mean_abs_error(model, validation), 0
    losses, maes = [], []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            x = augment(train.crops[idx], train.masks[idx], rng, fever_offset)
            loss, grads = loss_and_grads(model, x, train.labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}, batch starting at {start}")
            step += 1
            for k, g in grads.items():
                m[k] = betas[0] * m[k] + (1 - betas[0]) * g
                v[k] = betas[1] * v[k] + (1 - betas[1]) * g * g
                mhat = m[k] / (1 - betas[0] ** step)
                vhat = v[k] / (1 - betas[1] ** step)
                model.params[k] -= lr * mhat / (np.sqrt(vhat) + eps)
            total += loss * len(idx)
        mae = mean_abs_error(model, validation)
        if not np.isfinite(mae):
            raise TrainingError(f"validation error diverged at epoch {epoch}")
        losses.append(total / len(train))
        maes.append(mae)
        if log is not None:
            log(f"epoch {epoch:2d}  train mse {losses[-1]:.4f}  val mae {mae:.4f}")
        if mae < best_mae:
            best, best_mae, best_epoch = model.copy(), mae, epoch
    best.metadata = {"seed": int(seed), "epochs": int(epochs), "lr": lr, "batch_size": int(batch_size),
                     "optimizer": "adam", "augment": {"hflip": 0.5, "fever_offset_c": fever_offset},
                     "best_epoch": best_epoch, "val_mae_c": best_mae,
                     "train_identities": [int(i) for i in train.identities],
                     "val_identities": [int(i) for i in validation.identities]}
    return best, TrainingReport(epochs, losses, maes, best_epoch)


@dataclass
class FoldResult:
    test_identity: int
    mae: float
    uncorrected_mae: float
    fever_mae: float


def leave_one_out(dataset: CropDataset, n_validation=4, epochs=20, seed=0, folds=None, log=None):
    """Each identity in turn is the test subject; ``n_validation`` others pick the best epoch."""
    ids = [int(i) for i in dataset.identities]
    if len(ids) < n_validation + 2:
        raise ValueError("not enough identities for leave-one-out")
    results = []
    for fold, test_id in enumerate(ids if folds is None else folds):
        rest = [i for i in ids if i != test_id]
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(fold,)))
        val_ids = set(rng.choice(rest, size=n_validation, replace=False).tolist())
        train_ids = [i for i in rest if i not in val_ids]
        model, _ = train_regressor(dataset.where_identity(train_ids), dataset.where_identity(val_ids),
                                   epochs=epochs, seed=seed + fold)
        test = dataset.where_identity([test_id])
        res = FoldResult(test_id, mean_abs_error(model, test), float(np.mean(np.abs(test.labels))),
                         mean_abs_error(model, test, fever_offset=1.6))
        if log is not None:
            log(f"fold {fold:2d} id {test_id:2d}  mae {res.mae:.3f}  uncorrected {res.uncorrected_mae:.3f}")
        results.append(res)
    return results
