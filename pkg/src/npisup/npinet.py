"""Learned NPI suppression pipeline and the attention-based completion baseline.

Data flow per slot::

    (x_p, y_p) -> LS -> refine -> projection split (w_ch, w_orth)
               -> NPI sub-nets + SINR-conditioned fusion -> w_tilde
               -> LS on (y_p - w_tilde) -> completion -> full-grid CSI

Complex tensors enter networks as interleaved (re, im) features and are
normalized per slot by their RMS; the scale is applied again at the output.
Every stage is batched over a leading slot axis.

Gradients of real losses with respect to complex tensors use the convention
``G = dL/dRe(z) + 1j * dL/dIm(z)``, under which a complex-linear map
``z2 = A z1`` back-propagates as ``G1 = A^H G2``.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import linest
from .errors import DependencyError, FormatError, InferenceError, InputShapeError, TrainingDivergenceError
from .gridsim import Dataset, PilotPattern, SimConfig, SlotObservation, build_pilot_pattern
from .linest import PilotEstimate
from .neural import Adam, Attention, ConcatBranch, Dense, NetworkModel, Residual, TrainConfig, mlp

RMS_FLOOR = 1e-12
SINR_SCALE_DB = 20.0
AUGMENT_SEED_OFFSET = 7919
PHASES = ("refine", "npi1", "npi2", "sinr", "baseline")
PREDECESSORS = {"refine": (), "npi1": ("refine",), "npi2": ("npi1",), "sinr": (), "baseline": ()}


# -- complex <-> real features ---------------------------------------------------


def c2r(z: np.ndarray) -> np.ndarray:
    """Interleave (re, im) along the last axis: ``(..., n)`` complex -> ``(..., 2n)`` real."""
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def r2c(r: np.ndarray) -> np.ndarray:
    return r[..., 0::2] + 1j * r[..., 1::2]


def slot_rms(z: np.ndarray) -> np.ndarray:
    """RMS over all but the leading axis."""
    axes = tuple(range(1, z.ndim))
    return np.sqrt(np.mean(np.abs(z) ** 2, axis=axes)) + RMS_FLOOR


def _bshape(s, ndim):
    return s.reshape((-1,) + (1,) * (ndim - 1))


# -- data containers ------------------------------------------------------------


@dataclass
class NpiSplit:
    w_ch: np.ndarray  # (..., K_p, M)
    w_orth: np.ndarray
    degenerate: np.ndarray  # (..., K_p) flags from the projection step


@dataclass
class PipelineSizes:
    """Desk-scale network widths."""

    refine_hidden: tuple[int, ...] = (256, 256)
    npi_hidden: int = 128
    fusion_hidden: tuple[int, ...] = (128, 128)
    completion_hidden: int = 256
    attn_d_model: int = 64
    attn_ff: int = 128
    pos_dim: int = 16


@dataclass
class PipelineBundle:
    cfg: SimConfig
    refine_net: NetworkModel
    npi_net_ch: NetworkModel
    npi_net_orth: NetworkModel
    fusion_net: NetworkModel
    completion_net: NetworkModel
    transformer_net: NetworkModel
    transformer_head: NetworkModel
    perfect_net: NetworkModel
    epsilon: float | None = None
    sizes: PipelineSizes = field(default_factory=PipelineSizes)
    phases_done: list[str] = field(default_factory=list)
    history: dict[str, list[float]] = field(default_factory=dict)
    lmmse_rho: tuple[float, float] | None = None
    sinr_model: object = None  # sinrest.SinrModel, attached by the sinr phase

    @property
    def pattern(self) -> PilotPattern:
        return build_pilot_pattern(self.cfg)

    def npi_model(self) -> NetworkModel:
        """Sub-nets and fusion as one graph over ``[w_ch | w_orth | sinr]`` features."""
        M2 = 2 * self.cfg.M
        branch = ConcatBranch([(0, M2, self.npi_net_ch.layers), (M2, 2 * M2, self.npi_net_orth.layers),
                               (2 * M2, 2 * M2 + 1, [])])
        return NetworkModel([branch] + self.fusion_net.layers, "npi")

    def require(self, phase: str) -> None:
        for need in PREDECESSORS[phase]:
            if need not in self.phases_done:
                raise DependencyError(need, f"phase {phase!r} requires phase {need!r} to run first")

    def mark(self, phase: str, losses: list[float]) -> None:
        self.history[phase] = list(losses)
        if phase not in self.phases_done:
            self.phases_done.append(phase)


def build_bundle(cfg: SimConfig, seed: int = 0, sizes: PipelineSizes | None = None,
                 epsilon: float | None = None) -> PipelineBundle:
    sizes = sizes or PipelineSizes()
    rng = np.random.default_rng(seed)
    Kp, M, L, K = cfg.K_p, cfg.M, cfg.L, cfg.K
    pilot_feat = 2 * Kp * M
    refine = mlp((pilot_feat,) + sizes.refine_hidden + (pilot_feat,), rng, zero_last=True, role="refine")
    ch = mlp((2 * M, sizes.npi_hidden, 2 * M), rng, role="npi_ch")
    orth = mlp((2 * M, sizes.npi_hidden, 2 * M), rng, role="npi_orth")
    fusion = mlp((4 * M + 1,) + sizes.fusion_hidden + (2 * M,), rng, zero_last=True, role="fusion")
    completion = mlp((2 * Kp, sizes.completion_hidden, 2 * L * K), rng, role="completion")
    perfect = mlp((2 * Kp, sizes.completion_hidden, 2 * L * K), rng, role="perfect")
    transformer = build_transformer(cfg, sizes, rng)
    head = mlp((2 * Kp, sizes.completion_hidden, 2 * L * K), rng, role="transformer_head")
    return PipelineBundle(cfg, refine, ch, orth, fusion, completion, transformer, head, perfect, epsilon, sizes)


# -- pipeline stages ------------------------------------------------------------


def _as_batch(a, ndim):
    a = np.asarray(a)
    return (a[None], True) if a.ndim == ndim - 1 else (a, False)


def refine_csi(h_ini: PilotEstimate, net: NetworkModel) -> PilotEstimate:
    """Residual refinement ``H_ini + scale * net(H_ini / scale)`` over all pilot REs jointly."""
    h, single = _as_batch(h_ini.h_hat, 3)
    s = slot_rms(h)
    feat = c2r((h / _bshape(s, 3)).reshape(h.shape[0], -1))
    if feat.shape[-1] != net.layers[0].n_in:
        raise InputShapeError(f"refine net expects {net.layers[0].n_in} features, got {feat.shape[-1]}")
    delta = r2c(net(feat)).reshape(h.shape)
    out = h + _bshape(s, 3) * delta
    return PilotEstimate(out[0] if single else out, h_ini.pattern)


def split_npi(slot_x_p, slot_y_p, h_hat: PilotEstimate, epsilon=None) -> NpiSplit:
    """Per pilot RE projection of ``y_p`` onto the estimated channel and its complement."""
    proj = linest.projection_matrices(h_hat.h_hat, epsilon)
    w_ch, w_orth = linest.extract_npi(proj, h_hat.h_hat, np.asarray(slot_x_p), np.asarray(slot_y_p))
    return NpiSplit(w_ch, w_orth, proj.degenerate)


def npi_features(split: NpiSplit, y_p, sinr_db):
    """Network input ``(B, K_p, 4M + 1)`` and the per-slot scale."""
    y, _ = _as_batch(y_p, 3)
    w_ch, _ = _as_batch(split.w_ch, 3)
    w_orth, _ = _as_batch(split.w_orth, 3)
    t = slot_rms(y)
    tb = _bshape(t, 3)
    snr = np.broadcast_to(np.atleast_1d(np.asarray(sinr_db, float)).reshape(-1, 1, 1) / SINR_SCALE_DB,
                          w_ch.shape[:-1] + (1,))
    return np.concatenate([c2r(w_ch / tb), c2r(w_orth / tb), snr], axis=-1), t


def estimate_npi(split: NpiSplit, y_p, sinr_db, bundle: PipelineBundle) -> np.ndarray:
    """Fused NPI estimate ``w_tilde`` on every pilot RE, same shape as ``y_p``."""
    if not np.all(np.isfinite(sinr_db)):
        raise InferenceError("SINR input must be finite")
    single = np.asarray(y_p).ndim == 2
    feat, t = npi_features(split, y_p, sinr_db)
    out = bundle.npi_model()(feat)
    if not np.all(np.isfinite(out)):
        raise InferenceError("non-finite NPI estimate")
    w = _bshape(t, 3) * r2c(out)
    return w[0] if single else w


def subtract_and_reestimate(x_p, y_p, w_tilde, pattern: PilotPattern) -> PilotEstimate:
    return linest.ls_estimate(x_p, np.asarray(y_p) - w_tilde, pattern)


def _completion_forward(h, net, L, K):
    """``h`` (B, K_p, M) -> (B, L, K, M) plus the pieces needed for backprop."""
    B, Kp, M = h.shape
    s = slot_rms(h)
    u = h / _bshape(s, 3)
    feat = c2r(u.transpose(0, 2, 1))  # (B, M, 2K_p), one row per antenna
    if feat.shape[-1] != net.layers[0].n_in:
        raise InputShapeError(f"completion net expects {net.layers[0].n_in} features, got {feat.shape[-1]}")
    o, cache = net.forward(feat)
    O = r2c(o).reshape(B, M, L, K).transpose(0, 2, 3, 1)
    return _bshape(s, 4) * O, (h, s, u, O, cache)


def _completion_backward(G, state, net, L, K):
    """Gradients of the completion stage: returns (G_h, parameter grads)."""
    h, s, u, O, cache = state
    B, Kp, M = h.shape
    sb = _bshape(s, 4)
    ds = np.sum((np.conj(G) * O).real, axis=(1, 2, 3))
    G_O = sb * G
    g_o = c2r(G_O.transpose(0, 3, 1, 2).reshape(B, M, L * K))
    g_feat, grads = net.backward(cache, g_o)
    G_u = r2c(g_feat).transpose(0, 2, 1)
    s3 = _bshape(s, 3)
    ds -= np.sum((np.conj(G_u) * u).real, axis=(1, 2)) / s
    G_h = G_u / s3 + _bshape(ds, 3) * h / (Kp * M * s3)
    return G_h, grads


def complete_csi(pilot_est: PilotEstimate, net: NetworkModel, L: int, K: int) -> np.ndarray:
    """Per-antenna completion from pilot REs to the full ``(L, K)`` grid (shared weights)."""
    h, single = _as_batch(pilot_est.h_hat, 3)
    out, _ = _completion_forward(np.asarray(h, complex), net, L, K)
    return out[0] if single else out


# -- transformer baseline -------------------------------------------------------


def positional_encoding(positions, dim: int) -> np.ndarray:
    """Sinusoidal 2-D encoding: half the features for the symbol index, half for the subcarrier."""
    pos = np.asarray(positions, float).reshape(-1, 2)
    q = dim // 4
    freqs = 1.0 / (100.0 ** (np.arange(q) / max(q, 1)))
    parts = []
    for axis in (0, 1):
        ang = pos[:, axis:axis + 1] * freqs
        parts += [np.sin(ang), np.cos(ang)]
    return np.concatenate(parts, axis=-1)


def build_transformer(cfg: SimConfig, sizes: PipelineSizes, rng) -> NetworkModel:
    """Token encoder: embed -> residual attention -> residual feed-forward -> 2M values per token."""
    d, M = sizes.attn_d_model, cfg.M
    tok = 2 * M + 4 * (sizes.pos_dim // 4)
    return NetworkModel([
        Dense(tok, d, "linear", rng),
        Residual([Attention(d, rng=rng)]),
        Residual([Dense(d, sizes.attn_ff, "relu", rng), Dense(sizes.attn_ff, d, "linear", rng)]),
        Dense(d, 2 * M, "linear", rng),
    ], "transformer")


def transformer_tokens(pilot_est: PilotEstimate, pos_dim: int):
    """Tokens in canonical (symbol, subcarrier) order, plus per-slot scale."""
    h, _ = _as_batch(pilot_est.h_hat, 3)
    pos = np.asarray(pilot_est.pattern.positions, int).reshape(-1, 2)
    order = np.lexsort((pos[:, 1], pos[:, 0]))
    h = h[:, order]
    s = slot_rms(h)
    pe = positional_encoding(pos[order], pos_dim)
    tok = np.concatenate([c2r(h / _bshape(s, 3)), np.broadcast_to(pe, h.shape[:2] + pe.shape[-1:])], axis=-1)
    return tok, s


def _transformer_forward(tok, s, encoder, head, L, K):
    B, Kp, _ = tok.shape
    enc, ecache = encoder.forward(tok)
    per_ant = enc.reshape(B, Kp, -1, 2).transpose(0, 2, 1, 3).reshape(B, -1, 2 * Kp)
    o, hcache = head.forward(per_ant)
    out = r2c(o).reshape(B, -1, L, K).transpose(0, 2, 3, 1) * _bshape(s, 4)
    return out, (ecache, hcache, enc.shape)


def _transformer_backward(G, s, state, encoder, head, L, K):
    ecache, hcache, enc_shape = state
    B, Kp, M2 = enc_shape
    G_o = c2r((_bshape(s, 4) * G).transpose(0, 3, 1, 2).reshape(B, M2 // 2, L * K))
    g_ant, hgrads = head.backward(hcache, G_o)
    g_enc = g_ant.reshape(B, M2 // 2, Kp, 2).transpose(0, 2, 1, 3).reshape(enc_shape)
    _, egrads = encoder.backward(ecache, g_enc)
    return egrads + hgrads


def transformer_baseline(pilot_est: PilotEstimate, encoder: NetworkModel, head: NetworkModel,
                         L: int, K: int, pos_dim: int = 16) -> np.ndarray:
    """Attention-based completion from pilot estimates, ``(..., L, K, M)``."""
    single = np.asarray(pilot_est.h_hat).ndim == 2
    tok, s = transformer_tokens(pilot_est, pos_dim)
    out, _ = _transformer_forward(tok, s, encoder, head, L, K)
    return out[0] if single else out


# -- end-to-end -----------------------------------------------------------------


@dataclass
class PipelineTrace:
    h_ini: np.ndarray
    h_hat: np.ndarray
    split: NpiSplit
    w_tilde: np.ndarray
    h_clean: np.ndarray
    h_full: np.ndarray


def _sinr_input(bundle, batch, sinr_source, sinr_db):
    if sinr_db is not None:
        return np.broadcast_to(np.asarray(sinr_db, float), (batch.n,)).copy()
    if sinr_source == "label":
        return batch.sinr_db
    if sinr_source == "estimator":
        if bundle.sinr_model is None:
            raise DependencyError("sinr", "SINR estimator has not been trained")
        from . import sinrest

        return sinrest.estimate_sinr_batch(batch, bundle.sinr_model)
    raise ValueError(f"unknown sinr source {sinr_source!r}")


@dataclass
class SlotBatch:
    """The arrays a pipeline pass needs, in complex128."""

    x_p: np.ndarray
    y_p: np.ndarray
    sinr_db: np.ndarray | None = None
    y_d: np.ndarray | None = None
    mod_id: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.x_p.shape[0]

    @classmethod
    def from_dataset(cls, ds: Dataset, idx=None) -> "SlotBatch":
        idx = np.arange(len(ds)) if idx is None else idx
        return cls(ds.x_p[idx].astype(complex), ds.y_p[idx].astype(complex), ds.sinr_db[idx],
                   ds.y_d[idx].astype(complex), ds.mod_id[idx])

    @classmethod
    def from_slot(cls, slot: SlotObservation) -> "SlotBatch":
        return cls(slot.x_p[None].astype(complex), slot.y_p[None].astype(complex),
                   None if slot.sinr_db is None else np.array([slot.sinr_db]),
                   slot.y_d[None].astype(complex), np.array([slot.mod_id]))


def run_pipeline_batch(batch: SlotBatch, bundle: PipelineBundle, sinr_source: str = "estimator",
                       sinr_db=None, w_override=None, trace: bool = False):
    """Full suppression pipeline for a batch; ``w_override`` replaces the learned NPI estimate."""
    cfg, pattern = bundle.cfg, bundle.pattern
    h_ini = linest.ls_estimate(batch.x_p, batch.y_p, pattern)
    h_hat = refine_csi(h_ini, bundle.refine_net)
    split = split_npi(batch.x_p, batch.y_p, h_hat, bundle.epsilon)
    if w_override is None:
        sinr = _sinr_input(bundle, batch, sinr_source, sinr_db)
        w_tilde = estimate_npi(split, batch.y_p, sinr, bundle)
    else:
        w_tilde = np.broadcast_to(w_override, batch.y_p.shape)
    clean = subtract_and_reestimate(batch.x_p, batch.y_p, w_tilde, pattern)
    full = complete_csi(clean, bundle.completion_net, cfg.L, cfg.K)
    if trace:
        return PipelineTrace(h_ini.h_hat, h_hat.h_hat, split, w_tilde, clean.h_hat, full)
    return full


def run_pipeline(slot: SlotObservation, bundle: PipelineBundle, sinr_source: str = "estimator") -> np.ndarray:
    """Single-slot pipeline, ``(L, K, M)``."""
    return run_pipeline_batch(SlotBatch.from_slot(slot), bundle, sinr_source)[0]


# -- training -------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseDefaults:
    refine: TrainConfig = TrainConfig(learning_rate=1e-3, batch_size=32, epochs=40, seed=1)
    npi1: TrainConfig = TrainConfig(learning_rate=1e-3, batch_size=32, epochs=15, seed=2)
    npi2: TrainConfig = TrainConfig(learning_rate=5e-4, batch_size=32, epochs=30, seed=3)
    baseline: TrainConfig = TrainConfig(learning_rate=1e-3, batch_size=32, epochs=40, seed=4)
    sinr: TrainConfig = TrainConfig(learning_rate=1e-3, batch_size=32, epochs=30, seed=5)


def nmse_loss(est, truth):
    """Mean per-slot NMSE and its complex-convention gradient."""
    axes = tuple(range(1, truth.ndim))
    e = est - truth
    den = np.sum(np.abs(truth) ** 2, axis=axes)
    per = np.sum(np.abs(e) ** 2, axis=axes) / den
    B = truth.shape[0]
    return float(per.mean()), 2.0 * e / _bshape(den, truth.ndim) / B


def phase_rotations(rng, n: int) -> np.ndarray:
    """Random global phases; the channel and NPI distributions are invariant to them."""
    return np.exp(2j * np.pi * rng.random(n))


def fit(models, loss_and_grads, n: int, cfg: TrainConfig, log=None) -> list[float]:
    """Minibatch Adam over ``n`` samples; returns the per-epoch mean loss."""
    opt = Adam(models, cfg)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(perm[start:start + cfg.batch_size])
            loss, grads = loss_and_grads(idx)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
            opt.step(grads)
            total += loss * len(idx)
        history.append(total / n)
        if log:
            log(epoch, history[-1])
    return history


def train_refine(ds: Dataset, bundle: PipelineBundle, cfg: TrainConfig | None = None, log=None) -> list[float]:
    cfg = cfg or PhaseDefaults().refine
    pattern = bundle.pattern
    h_ini = linest.ls_estimate(ds.x_p.astype(complex), ds.y_p.astype(complex), pattern).h_hat
    truth = ds.pilot_channels().astype(complex)
    net = bundle.refine_net
    aug = np.random.default_rng(cfg.seed + AUGMENT_SEED_OFFSET)

    def step(idx):
        rot = _bshape(phase_rotations(aug, len(idx)), 3)
        h = h_ini[idx] * rot
        s = slot_rms(h)
        feat = c2r((h / _bshape(s, 3)).reshape(len(idx), -1))
        o, cache = net.forward(feat)
        est = h + _bshape(s, 3) * r2c(o).reshape(h.shape)
        loss, G = nmse_loss(est, truth[idx] * rot)
        _, grads = net.backward(cache, c2r((_bshape(s, 3) * G).reshape(len(idx), -1)))
        return loss, grads

    hist = fit([net], step, len(ds), cfg, log)
    bundle.mark("refine", hist)
    return hist


@dataclass
class _NpiInputs:
    x_p: np.ndarray
    y_p: np.ndarray
    feat: np.ndarray  # network input without the SINR column
    t: np.ndarray
    w: np.ndarray
    h: np.ndarray
    sinr_in: np.ndarray


def _split_features(bundle: PipelineBundle, x_p, y_p):
    """NPI-net input without the SINR column, and the per-slot scale."""
    h_ini = linest.ls_estimate(x_p, y_p, bundle.pattern)
    h_hat = refine_csi(h_ini, bundle.refine_net)
    split = split_npi(x_p, y_p, h_hat, bundle.epsilon)
    feat, t = npi_features(split, y_p, np.zeros(len(y_p)))
    return feat[..., :-1], t


def _npi_inputs(ds: Dataset, bundle: PipelineBundle, jitter_seed: int | None) -> _NpiInputs:
    batch = SlotBatch.from_dataset(ds)
    feat, t = _split_features(bundle, batch.x_p, batch.y_p)
    sinr = ds.sinr_db.copy()
    if jitter_seed is not None:
        # one fixed draw per slot keeps lr=0 loss histories constant
        sinr = sinr + np.random.default_rng(jitter_seed).uniform(-1.0, 1.0, len(sinr))
    return _NpiInputs(batch.x_p, batch.y_p, feat, t, ds.pilot_npi().astype(complex),
                      ds.h[:, :, : ds.config.K, :].astype(complex), sinr)


def _with_sinr(feat, sinr):
    col = np.broadcast_to((sinr / SINR_SCALE_DB)[:, None, None], feat.shape[:-1] + (1,))
    return np.concatenate([feat, col], axis=-1)


def train_step1_npi(ds: Dataset, bundle: PipelineBundle, cfg: TrainConfig | None = None, log=None) -> list[float]:
    """Supervised NPI estimation against the labeled NPI on pilot REs."""
    bundle.require("npi1")
    cfg = cfg or PhaseDefaults().npi1
    d = _npi_inputs(ds, bundle, cfg.seed + 1000)
    model = bundle.npi_model()

    def step(idx):
        tb = _bshape(d.t[idx], 3)
        out, cache = model.forward(_with_sinr(d.feat[idx], d.sinr_in[idx]))
        loss, G = nmse_loss(tb * r2c(out), d.w[idx])
        _, grads = model.backward(cache, c2r(tb * G))
        return loss, grads

    hist = fit([model], step, len(ds), cfg, log)
    bundle.mark("npi1", hist)
    return hist


def joint_loss_and_grads(bundle: PipelineBundle, model: NetworkModel, x_p, y_p, feat, t, sinr, h_true):
    """Reconstruction NMSE of the full pipeline downstream of the (frozen) refinement.

    Gradients cover the NPI graph and the completion net; projections are
    constants given the refined estimate.
    """
    cfg = bundle.cfg
    tb = _bshape(t, 3)
    out, ncache = model.forward(_with_sinr(feat, sinr))
    w_tilde = tb * r2c(out)
    c = np.conj(x_p) / np.abs(x_p) ** 2
    h_clean = (y_p - w_tilde) * c[..., None]
    full, state = _completion_forward(h_clean, bundle.completion_net, cfg.L, cfg.K)
    loss, G = nmse_loss(full, h_true)
    G_h, cgrads = _completion_backward(G, state, bundle.completion_net, cfg.L, cfg.K)
    G_w = -(x_p / np.abs(x_p) ** 2)[..., None] * G_h
    _, ngrads = model.backward(ncache, c2r(tb * G_w))
    return loss, ngrads + cgrads


def train_step2_joint(ds: Dataset, bundle: PipelineBundle, cfg: TrainConfig | None = None, log=None) -> list[float]:
    bundle.require("npi2")
    cfg = cfg or PhaseDefaults().npi2
    d = _npi_inputs(ds, bundle, cfg.seed + 1000)
    model = bundle.npi_model()
    aug = np.random.default_rng(cfg.seed + AUGMENT_SEED_OFFSET)

    def step(idx):
        rot = phase_rotations(aug, len(idx))
        y_p = d.y_p[idx] * _bshape(rot, 3)
        feat, t = _split_features(bundle, d.x_p[idx], y_p)
        return joint_loss_and_grads(bundle, model, d.x_p[idx], y_p, feat, t, d.sinr_in[idx],
                                    d.h[idx] * _bshape(rot, 4))

    hist = fit([model, bundle.completion_net], step, len(ds), cfg, log) if cfg.epochs else []
    bundle.mark("npi2", hist)
    return hist


def _train_completion(net, h_in, truth, cfg, L, K, log=None):
    aug = np.random.default_rng(cfg.seed + AUGMENT_SEED_OFFSET)

    def step(idx):
        rot = phase_rotations(aug, len(idx))
        full, state = _completion_forward(h_in[idx] * _bshape(rot, 3), net, L, K)
        loss, G = nmse_loss(full, truth[idx] * _bshape(rot, 4))
        _, grads = _completion_backward(G, state, net, L, K)
        return loss, grads

    return fit([net], step, len(h_in), cfg, log)


def train_transformer(ds: Dataset, bundle: PipelineBundle, cfg: TrainConfig | None = None, log=None) -> list[float]:
    cfg = cfg or PhaseDefaults().baseline
    c = bundle.cfg
    est = linest.ls_estimate(ds.x_p.astype(complex), ds.y_p.astype(complex), bundle.pattern)
    h_ls = est.h_hat
    truth = ds.h[:, :, : c.K, :].astype(complex)
    enc, head = bundle.transformer_net, bundle.transformer_head
    aug = np.random.default_rng(cfg.seed + AUGMENT_SEED_OFFSET)

    def step(idx):
        rot = phase_rotations(aug, len(idx))
        tok, s = transformer_tokens(PilotEstimate(h_ls[idx] * _bshape(rot, 3), est.pattern), bundle.sizes.pos_dim)
        out, state = _transformer_forward(tok, s, enc, head, c.L, c.K)
        loss, G = nmse_loss(out, truth[idx] * _bshape(rot, 4))
        return loss, _transformer_backward(G, s, state, enc, head, c.L, c.K)

    return fit([enc, head], step, len(ds), cfg, log)


def train_baselines(ds: Dataset, bundle: PipelineBundle, cfg: TrainConfig | None = None, log=None) -> list[float]:
    """Transformer completion from LS pilots, and the perfect-pilot completion net."""
    cfg = cfg or PhaseDefaults().baseline
    c = bundle.cfg
    hist = train_transformer(ds, bundle, cfg, log)
    truth = ds.h[:, :, : c.K, :].astype(complex)
    perfect_hist = _train_completion(bundle.perfect_net, ds.pilot_channels().astype(complex), truth,
                                     replace(cfg, seed=cfg.seed + 1), c.L, c.K, log)
    bundle.lmmse_rho = linest.fit_exponential_correlation(c)
    bundle.mark("baseline", hist)
    bundle.history["perfect"] = perfect_hist
    return hist


# -- persistence ----------------------------------------------------------------

_ROLES = ("refine_net", "npi_net_ch", "npi_net_orth", "fusion_net", "completion_net", "transformer_net", "transformer_head",
          "perfect_net")


def save_bundle(bundle: PipelineBundle, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cp = configparser.ConfigParser()
    cp["bundle"] = {
        "config_hash": bundle.cfg.digest(),
        "config": bundle.cfg.to_json(),
        "epsilon": "default" if bundle.epsilon is None else repr(bundle.epsilon),
        "phases": ",".join(bundle.phases_done),
        "sizes": json.dumps(asdict(bundle.sizes)),
    }
    if bundle.lmmse_rho is not None:
        cp["bundle"]["lmmse_rho"] = ",".join(repr(r) for r in bundle.lmmse_rho)
    cp["roles"] = {role: f"{role}.npim" for role in _ROLES}
    for role in _ROLES:
        getattr(bundle, role).save(path / f"{role}.npim")
    if bundle.sinr_model is not None:
        from . import sinrest

        cp["sinr"] = sinrest.save_model(bundle.sinr_model, path)
    with open(path / "manifest.ini", "w", encoding="utf-8") as f:
        cp.write(f)
    for phase, losses in bundle.history.items():
        write_loss_csv(path / f"loss_{phase}.csv", losses)


def write_loss_csv(path, losses) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("epoch,loss\n")
        for i, v in enumerate(losses):
            f.write(f"{i},{v:.17g}\n")


def load_bundle(path, cfg: SimConfig | None = None) -> PipelineBundle:
    """Load a bundle; raises :class:`FormatError` if ``cfg`` does not match its training config."""
    path = Path(path)
    cp = configparser.ConfigParser()
    if not cp.read(path / "manifest.ini", encoding="utf-8"):
        raise FormatError(f"no bundle manifest in {path}")
    b = cp["bundle"]
    saved = SimConfig.from_json(b["config"])
    if saved.digest() != b["config_hash"]:
        raise FormatError("bundle manifest config hash is inconsistent")
    if cfg is not None and cfg.digest() != b["config_hash"]:
        raise FormatError(f"bundle trained for config {b['config_hash']}, got {cfg.digest()}")
    sizes = PipelineSizes(**{k: tuple(v) if isinstance(v, list) else v for k, v in json.loads(b["sizes"]).items()})
    models = {role: NetworkModel.load(path / cp["roles"][role]) for role in _ROLES}
    eps = None if b["epsilon"] == "default" else float(b["epsilon"])
    bundle = PipelineBundle(saved, **models, epsilon=eps, sizes=sizes,
                            phases_done=[p for p in b["phases"].split(",") if p])
    if "lmmse_rho" in b:
        bundle.lmmse_rho = tuple(float(r) for r in b["lmmse_rho"].split(","))
    if cp.has_section("sinr"):
        from . import sinrest

        bundle.sinr_model = sinrest.load_model(cp["sinr"], path)
    for p in sorted(path.glob("loss_*.csv")):
        bundle.history[p.stem[5:]] = [float(line.split(",")[1]) for line in p.read_text().splitlines()[1:]]
    return bundle
