"""Behaviour of the trained desk-scale bundle (shared session fixture)."""

import numpy as np
import pytest

from npisup import bench, linest, npinet
from npisup.gridsim import generate_dataset, resimulate
from npisup.linest import PilotEstimate
from npisup.neural import TrainConfig

N_HELD_OUT = 500


@pytest.fixture(scope="module")
def held_out(trained):
    test = resimulate(trained.ds.split("test").subset(np.arange(N_HELD_OUT)), 8.0)
    return test, npinet.SlotBatch.from_dataset(test)


def _pilot_nmse(est, ds):
    return linest.batch_nmse(est, ds.pilot_channels().astype(complex))


def test_refine_beats_ls_at_8db(trained, held_out):
    test, batch = held_out
    tr = npinet.run_pipeline_batch(batch, trained.bundle, "label", trace=True)
    assert _pilot_nmse(tr.h_hat, test) < _pilot_nmse(tr.h_ini, test)


@pytest.mark.xfail(strict=True, reason=(
    "noiseless LS is exact to float32 rounding; Adam rescales the resulting tiny gradients to full-size "
    "steps, so the net drifts to NMSE ~1e-6"))
def test_refine_noiseless_no_worse_than_ls(trained):
    cfg = trained.ds.config
    train = generate_dataset(cfg, 600, seed=41, sinr_sampling="fixed", fixed_sinr_db=np.inf)
    held = generate_dataset(cfg, 200, seed=42, sinr_sampling="fixed", fixed_sinr_db=np.inf)
    b = npinet.build_bundle(cfg, seed=0)
    npinet.train_refine(train, b, TrainConfig(epochs=5, seed=1))
    h_ini = linest.ls_estimate(held.x_p.astype(complex), held.y_p.astype(complex), held.pattern)
    h_hat = npinet.refine_csi(h_ini, b.refine_net)
    assert _pilot_nmse(h_hat.h_hat, held) <= _pilot_nmse(h_ini.h_hat, held) + 1e-12


def test_step1_estimate_beats_raw_split(trained, held_out):
    test, batch = held_out
    tr = npinet.run_pipeline_batch(batch, trained.step1, "label", trace=True)
    w = test.pilot_npi().astype(complex)
    assert linest.nmse(tr.w_tilde, w) < linest.nmse(tr.split.w_ch + tr.split.w_orth, w)


def test_fusion_conditions_on_sinr(trained, held_out):
    _, batch = held_out
    lo = npinet.run_pipeline_batch(batch, trained.bundle, sinr_db=0.0, trace=True).w_tilde
    hi = npinet.run_pipeline_batch(batch, trained.bundle, sinr_db=16.0, trace=True).w_tilde
    assert np.max(np.abs(lo - hi)) > 1e-9


def test_subtraction_improves_pilot_estimate(trained, held_out):
    test, batch = held_out
    learned = npinet.run_pipeline_batch(batch, trained.bundle, "label", trace=True).h_clean
    skipped = npinet.run_pipeline_batch(batch, trained.bundle, w_override=0.0, trace=True).h_clean
    assert _pilot_nmse(learned, test) < _pilot_nmse(skipped, test)


def test_completion_beats_interpolation_on_same_inputs(trained, held_out):
    test, batch = held_out
    clean = npinet.run_pipeline_batch(batch, trained.bundle, "label", trace=True).h_clean
    est = PilotEstimate(clean, test.pattern)
    cfg = test.config
    truth = bench.in_band_truth(test)
    completed = npinet.complete_csi(est, trained.bundle.completion_net, cfg.L, cfg.K)
    assert linest.batch_nmse(completed, truth) < linest.batch_nmse(linest.linear_interpolate(est, cfg.L, cfg.K), truth)


def test_noiseless_pipeline_vs_interpolation(trained):
    clean = resimulate(trained.ds.split("test").subset(np.arange(200)), np.inf)
    truth = bench.in_band_truth(clean)
    proposed = linest.batch_nmse(bench.recover("proposed", clean, trained.bundle), truth)
    ls_li = linest.batch_nmse(bench.recover("ls-li", clean, None), truth)
    assert proposed <= ls_li, (proposed, ls_li)


def test_joint_step_beats_step1_only(trained, held_out):
    test, batch = held_out
    truth = bench.in_band_truth(test)
    # the snapshot predates the sinr phase; give both the same estimator
    trained.step1.sinr_model = trained.bundle.sinr_model
    joint = linest.batch_nmse(npinet.run_pipeline_batch(batch, trained.bundle), truth)
    step1 = linest.batch_nmse(npinet.run_pipeline_batch(batch, trained.step1), truth)
    assert joint < step1


@pytest.mark.xfail(strict=True, reason="measured: transformer baseline beats the proposed pipeline at 8 dB")
def test_method_ordering_at_8db(trained, held_out):
    test, _ = held_out
    truth = bench.in_band_truth(test)
    v = {m: linest.batch_nmse(bench.recover(m, test, trained.bundle, 8.0), truth)
         for m in ("ls-li", "lmmse", "transformer", "proposed")}
    assert v["proposed"] < v["transformer"] < min(v["ls-li"], v["lmmse"]), v


def test_pipeline_is_pure(trained, held_out):
    _, batch = held_out
    sub = npinet.SlotBatch(batch.x_p[:5], batch.y_p[:5], batch.sinr_db[:5], batch.y_d[:5], batch.mod_id[:5])
    a = npinet.run_pipeline_batch(sub, trained.bundle)
    b = npinet.run_pipeline_batch(sub, trained.bundle)
    assert a.tobytes() == b.tobytes()


def test_training_curves_drop(trained):
    hist = trained.bundle.history
    for phase in ("refine", "npi2", "baseline", "sinr"):
        assert hist[phase][-1] < 0.5 * hist[phase][0], phase


@pytest.mark.xfail(strict=True, reason=(
    "measured ratio 0.53: the channel-direction NPI part is not identifiable per RE, which floors the "
    "supervised loss near 0.39 while the first-epoch mean is already 0.74"))
def test_step1_curve_halves_on_2000_slots(trained):
    ds = trained.ds.split("pretrain").subset(np.arange(2000))
    b = npinet.build_bundle(ds.config, seed=0)
    b.refine_net.set_flat(trained.bundle.refine_net.get_flat())
    b.mark("refine", trained.bundle.history["refine"])
    cfg = npinet.PhaseDefaults().npi1
    hist = npinet.train_step1_npi(ds, b, TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                                                     epochs=30, seed=cfg.seed))
    assert hist[-1] < 0.5 * hist[0], (hist[0], hist[-1])
