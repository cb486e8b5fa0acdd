"""Slot-level SINR estimation from received payload I/Q statistics.

Two branches look at the payload REs of a slot. A histogram branch bins the
RMS-normalized samples on a fixed grid and runs a small conv stack. A point
branch encodes every RE (all antennas, plus a modulation one-hot) and
max-pools over REs into a fixed-size fluctuation vector. A dense head fuses
both into a dB estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, InputShapeError, TrainingDivergenceError
from .gridsim import MODULATIONS, Dataset, SlotObservation
from .neural import Adam, Conv2d, Dense, Flatten, MaxPool, NetworkModel, TrainConfig

OUTPUT_RANGE_DB = (-10.0, 40.0)
OUTPUT_SCALE_DB = 10.0  # head output unit, so a zero head reads 0 dB
MIN_TARGET_VAR = 1.0  # dB^2 floor for the loss normalizer
AUGMENT_SEED_OFFSET = 7919


@dataclass
class IqHistogram:
    bins: np.ndarray  # (B, B), first axis = in-phase
    half_width: float


def _bin_index(v, bins, half_width):
    i = np.floor((v + half_width) / (2 * half_width) * bins).astype(int)
    return np.clip(i, 0, bins - 1)


def histogram_2d(samples, bins: int = 32, half_width: float = 3.0) -> IqHistogram:
    """Normalized 2-D I/Q histogram of RMS-scaled samples, out-of-range mass clamped to edges."""
    z = np.asarray(samples, dtype=complex).ravel()
    if z.size == 0:
        raise DegenerateInputError("histogram needs at least one sample")
    return IqHistogram(histogram_batch(z[None], bins, half_width)[0], half_width)


def histogram_batch(z: np.ndarray, bins: int = 32, half_width: float = 3.0) -> np.ndarray:
    """Histograms for ``z`` of shape ``(n, samples)``, returned as ``(n, bins, bins)``."""
    n, S = z.shape
    rms = np.sqrt(np.mean(np.abs(z) ** 2, axis=1, keepdims=True))
    u = z / np.where(rms > 0, rms, 1.0)
    flat = _bin_index(u.real, bins, half_width) * bins + _bin_index(u.imag, bins, half_width)
    flat = flat + (np.arange(n) * bins * bins)[:, None]
    counts = np.bincount(flat.ravel(), minlength=n * bins * bins).astype(float)
    return counts.reshape(n, bins, bins) / S


@dataclass
class SinrModel:
    point_mlp: NetworkModel  # per-RE encoder ending in a max-pool over REs
    post_pool_mlp: NetworkModel
    conv_stack: NetworkModel
    head_mlp: NetworkModel
    bins: int = 32
    half_width: float = 3.0
    use_modulation: bool = True

    def models(self):
        return [self.point_mlp, self.post_pool_mlp, self.conv_stack, self.head_mlp]


def build_sinr_model(M: int, rng=None, d: int = 64, bins: int = 32, half_width: float = 3.0,
                     mlp_depth: int = 2, use_modulation: bool = True) -> SinrModel:
    rng = rng if rng is not None else np.random.default_rng(0)
    feat = 2 * M + len(MODULATIONS)
    point = [Dense(feat if i == 0 else d, d, "relu", rng) for i in range(mlp_depth)]
    point_mlp = NetworkModel(point + [MaxPool(1)], "sinr")
    post = NetworkModel([Dense(d, d, "relu", rng) for _ in range(mlp_depth)], "sinr")
    if bins % 4:
        raise InputShapeError("histogram bin count must be divisible by 4")
    conv = NetworkModel([Conv2d(1, 8, 3, 2, 1, "relu", rng), Conv2d(8, 16, 3, 2, 1, "relu", rng), Flatten(1)],
                        "sinr")
    conv_out = 16 * (bins // 4) ** 2
    head = NetworkModel([Dense(conv_out + d, d, "relu", rng), Dense(d, 1, "linear", rng)], "sinr")
    return SinrModel(point_mlp, post, conv, head, bins, half_width, use_modulation)


def _point_inputs(y_d: np.ndarray, mod_id: np.ndarray, use_modulation: bool) -> np.ndarray:
    """``(n, N_d, 2M + n_mod)`` RMS-normalized per-RE features."""
    n = y_d.shape[0]
    rms = np.sqrt(np.mean(np.abs(y_d) ** 2, axis=(1, 2)))
    u = y_d / np.where(rms > 0, rms, 1.0)[:, None, None]
    re = np.empty(u.shape[:-1] + (2 * u.shape[-1],))
    re[..., 0::2] = u.real
    re[..., 1::2] = u.imag
    onehot = np.zeros((n, y_d.shape[1], len(MODULATIONS)))
    if use_modulation:
        onehot[np.arange(n), :, np.asarray(mod_id, int)] = 1.0
    return np.concatenate([re, onehot], axis=-1)


@dataclass
class _Inputs:
    points: np.ndarray
    hist: np.ndarray  # (n, 1, B, B)


def _inputs(y_d, mod_id, model: SinrModel) -> _Inputs:
    y_d = np.asarray(y_d, dtype=complex)
    hist = histogram_batch(y_d.reshape(y_d.shape[0], -1), model.bins, model.half_width)
    return _Inputs(_point_inputs(y_d, mod_id, model.use_modulation), hist[:, None])


def _forward(inp: _Inputs, model: SinrModel):
    fluct, c1 = model.point_mlp.forward(inp.points)
    post, c2 = model.post_pool_mlp.forward(fluct)
    conv, c3 = model.conv_stack.forward(inp.hist)
    raw, c4 = model.head_mlp.forward(np.concatenate([conv, post], axis=-1))
    return raw[:, 0] * OUTPUT_SCALE_DB, (c1, c2, c3, c4, conv.shape[-1])


def _backward(state, g_out, model: SinrModel):
    c1, c2, c3, c4, n_conv = state
    g_cat, g_head = model.head_mlp.backward(c4, (g_out * OUTPUT_SCALE_DB)[:, None])
    _, g_conv = model.conv_stack.backward(c3, g_cat[:, :n_conv])
    g_fl, g_post = model.post_pool_mlp.backward(c2, g_cat[:, n_conv:])
    _, g_point = model.point_mlp.backward(c1, g_fl)
    return g_point + g_post + g_conv + g_head


def point_features(slot: SlotObservation, model: SinrModel) -> np.ndarray:
    """Fluctuation vector: column-wise max over per-RE encodings, length d."""
    y = np.asarray(slot.y_d)
    if y.ndim != 2:
        raise InputShapeError(f"payload samples must be (N_RE, M), got {y.shape}")
    return model.point_mlp(_point_inputs(y[None], np.array([slot.mod_id]), model.use_modulation))[0]


def estimate_sinr_arrays(y_d, mod_id, model: SinrModel, chunk: int = 256) -> np.ndarray:
    out = []
    for s in range(0, len(y_d), chunk):
        est, _ = _forward(_inputs(y_d[s:s + chunk], mod_id[s:s + chunk], model), model)
        out.append(est)
    return np.clip(np.concatenate(out), *OUTPUT_RANGE_DB)


def estimate_sinr(slot: SlotObservation, model: SinrModel) -> float:
    return float(estimate_sinr_arrays(np.asarray(slot.y_d)[None], np.array([slot.mod_id]), model)[0])


def estimate_sinr_batch(batch, model: SinrModel) -> np.ndarray:
    """Estimates for a :class:`npisup.npinet.SlotBatch`."""
    return estimate_sinr_arrays(batch.y_d, batch.mod_id, model)


def estimate_dataset(ds: Dataset, model: SinrModel) -> np.ndarray:
    return estimate_sinr_arrays(ds.y_d, ds.mod_id, model)


def augment_payload(y_d: np.ndarray, rng) -> np.ndarray:
    """Random global phase and antenna order per slot; both leave the slot SINR unchanged."""
    n, _, M = y_d.shape
    rot = np.exp(2j * np.pi * rng.random(n))[:, None, None]
    perm = np.argsort(rng.random((n, M)), axis=1)
    return np.take_along_axis(y_d, perm[:, None, :], axis=2) * rot


def train_sinr(ds: Dataset, model: SinrModel, cfg: TrainConfig | None = None, log=None,
               augment: bool = True) -> list[float]:
    """Minimize squared dB error over the training-set target variance; returns per-epoch loss."""
    cfg = cfg or TrainConfig(epochs=30, seed=5)
    target = ds.sinr_db.astype(float)
    if not np.all(np.isfinite(target)):
        raise InputShapeError("SINR labels must be finite")
    var = max(float(np.var(target)), MIN_TARGET_VAR)
    opt = Adam(model.models(), cfg)
    rng = np.random.default_rng(cfg.seed)
    aug = np.random.default_rng(cfg.seed + AUGMENT_SEED_OFFSET)
    n = len(ds)
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(perm[start:start + cfg.batch_size])
            y = ds.y_d[idx].astype(complex)
            if augment:
                y = augment_payload(y, aug)
            est, state = _forward(_inputs(y, ds.mod_id[idx], model), model)
            err = est - target[idx]
            loss = float(np.mean(err**2) / var)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite SINR loss at epoch {epoch}")
            opt.step(_backward(state, 2.0 * err / (var * len(idx)), model))
            total += loss * len(idx)
        history.append(total / n)
        if log:
            log(epoch, history[-1])
    return history


# -- persistence ----------------------------------------------------------------

_PARTS = ("point_mlp", "post_pool_mlp", "conv_stack", "head_mlp")


def save_model(model: SinrModel, directory) -> dict:
    """Write the four networks; returns manifest entries describing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entry = {"bins": str(model.bins), "half_width": repr(model.half_width),
             "use_modulation": str(model.use_modulation).lower()}
    for part in _PARTS:
        name = f"sinr_{part}.npim"
        getattr(model, part).save(directory / name)
        entry[part] = name
    return entry


def load_model(entry, directory) -> SinrModel:
    directory = Path(directory)
    nets = {part: NetworkModel.load(directory / entry[part]) for part in _PARTS}
    return SinrModel(**nets, bins=int(entry["bins"]), half_width=float(entry["half_width"]),
                     use_modulation=entry["use_modulation"] == "true")
