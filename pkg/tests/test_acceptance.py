"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest

from eegtok.codebook import Codebook, quantize
from eegtok.nn import Block, EncoderConfig, TemporalConv, TokenizerModel, load_model, save_model
from eegtok.nn import Batch
from eegtok.nn.gradcheck import relative_error
from eegtok.phase_loss import (
    amplitude_loss,
    chord_identity,
    circular_phase_loss,
    direct_phase_loss,
    unit_circle_angle_gradient,
)
from eegtok.preprocess import car, zscore_patch
from eegtok.recording import CorpusIndex, Recording, draw_sample, load_canonical, save_canonical
from eegtok.spectral import dft_features, wrap_angle, wrapped_angle_error
from eegtok.synthetic import sinusoid_recording
from eegtok.trainer import TrainConfig, evaluate_reconstruction, train

PI = math.pi


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail
    return emit


def test_criterion_01_boundary_values(report):
    eps = 0.01
    dv, dg = direct_phase_loss([PI - eps], [-PI + eps])
    ls, lc, _, _ = circular_phase_loss([math.sin(PI - eps)], [math.cos(PI - eps)], [-PI + eps])
    checks = [
        abs(dv - (2 * PI - 2 * eps) ** 2) <= 1e-9 * (2 * PI - 2 * eps) ** 2,
        abs(abs(dg[0]) - (4 * PI - 4 * eps)) <= 1e-9 * (4 * PI - 4 * eps),
        abs((ls + lc) - (2 - 2 * math.cos(2 * eps))) <= 1e-9 * (2 - 2 * math.cos(2 * eps)),
        round(dv, 4) == 39.2275 and round(abs(dg[0]), 4) == 12.5264,
    ]
    report(1, all(checks), f"direct {dv:.6f}, |grad| {abs(dg[0]):.6f}, circular {ls + lc:.6e}")


def test_criterion_02_chord_identity(report):
    a, b = np.random.default_rng(2).uniform(-PI, PI, (2, 100_000))
    lhs, cos_form, sin_form = chord_identity(a, b)
    e1, e2 = np.max(np.abs(lhs - cos_form)), np.max(np.abs(lhs - sin_form))
    report(2, e1 < 1e-12 and e2 < 1e-12, f"max deviations {e1:.2e} (cos form), {e2:.2e} (sin form)")


def test_criterion_03_gradient_boundedness(report):
    # 100 x 100 grid; targets offset by 5e-4 so the grid straddles the wrap
    pred = np.linspace(-PI, PI, 101)[1:]
    target = wrap_angle(pred + 5e-4)
    P, T = np.meshgrid(pred, target, indexing="ij")
    circ = np.abs(unit_circle_angle_gradient(P, T))
    _, direct = direct_phase_loss(P, T)
    cmax, dmax = float(circ.max()), float(np.abs(direct).max())
    report(3, P.size == 10_000 and abs(cmax - 2) <= 1e-6 and dmax >= 12.5,
           f"{P.size} pairs: max circular grad {cmax:.9f}, max direct grad {dmax:.4f}")


def _coordinate_fd(fn, inputs, grads, rng, n, step, floor):
    names = list(inputs)
    worst = 0.0
    for _ in range(n):
        name = names[rng.integers(len(names))]
        flat = inputs[name].reshape(-1)
        i = rng.integers(flat.size)
        old = flat[i]
        flat[i] = old + step
        plus = fn(inputs)[0]
        flat[i] = old - step
        minus = fn(inputs)[0]
        flat[i] = old
        worst = max(worst, float(relative_error(grads[name].reshape(-1)[i], (plus - minus) / (2 * step), floor)))
    return worst


def test_criterion_04_finite_differences(report):
    rng = np.random.default_rng(4)
    worst = {}
    start = time.time()

    def run(label, make, n_instances=100, n_coords=8, step=1e-5, floor=1e-8):
        w = 0.0
        for _ in range(n_instances):
            fn, inputs = make()
            _, grads = fn(inputs)
            w = max(w, _coordinate_fd(fn, inputs, grads, rng, n_coords, step, floor))
        worst[label] = w

    # the losses are sums of independent per-bin terms, so one instance is one bin;
    # wider sums only add rounding noise from the other terms to each difference
    def amp():
        t = rng.standard_normal(1)
        def fn(x):
            v, g = amplitude_loss(x["a"], t)
            return v, {"a": g}
        return fn, {"a": rng.standard_normal(1)}

    def circ():
        t = rng.uniform(-PI, PI, 1)
        def fn(x):
            ls, lc, gs, gc = circular_phase_loss(x["s"], x["c"], t)
            return ls + lc, {"s": gs, "c": gc}
        return fn, {"s": rng.standard_normal(1), "c": rng.standard_normal(1)}

    def direct():
        t = rng.uniform(-PI, PI, 1)
        def fn(x):
            v, g = direct_phase_loss(x["a"], t)
            return v, {"a": g}
        return fn, {"a": rng.uniform(-PI, PI, 1)}

    def layer_case(layer, shape):
        def make():
            params = {}
            layer.init(rng, params)
            params = {k: v + 0.2 * rng.standard_normal(v.shape) for k, v in params.items()}
            x = rng.standard_normal(shape)
            r = rng.standard_normal(layer.forward(params, x)[0].shape)
            def fn(inp):
                p = {k: v for k, v in inp.items() if k != "x"}
                y, cache = layer.forward(p, inp["x"])
                g = {k: np.zeros_like(v) for k, v in p.items()}
                g["x"] = layer.backward(p, cache, r, g)
                return float(np.sum(r * y)), g
            return fn, {**params, "x": x}
        return make

    toy = EncoderConfig(hidden_dim=40, attention_heads=4, mlp_hidden=24, encoder_depth=2,
                        decoder_depth=1, patch_len=40, n_patches=4)

    def tokenizer():
        mode = ["circular", "baseline"][rng.integers(2)]
        model = TokenizerModel(toy, 5, codebook_size=16, code_dim=8,
                               phase_output="vector" if mode == "circular" else "angle",
                               dtype=np.float64, seed=int(rng.integers(1 << 30)))
        for k in model.params:
            if "gamma" in k:
                model.params[k][:] = 0.3
        batch = Batch(rng.standard_normal((2, 4, 40)), rng.integers(1, 6, (2, 4)), np.full(2, 2))
        target = dft_features(rng.standard_normal((2, 4, 40)))
        def fn(p):
            rep, g, _ = model.loss_and_grads(batch, target, mode, params=p, quantize=False)
            return rep.total, g
        return fn, {k: v.copy() for k, v in model.params.items()}

    run("amplitude loss", amp, n_instances=1000, n_coords=1)
    run("circular loss", circ, n_instances=1000, n_coords=2)
    run("direct loss", direct, n_instances=1000, n_coords=1)
    # floors absorb ~1e-10 difference noise on exactly-zero gradients (key-norm biases)
    run("conv embedder", layer_case(TemporalConv(patch_len=40), (2, 40)), floor=1e-5)
    run("LN-attention block", layer_case(Block("b", 12, 3, 16, layer_scale_init=0.5), (2, 5, 12)), floor=1e-5)
    run("toy tokenizer", tokenizer, n_coords=6, floor=1e-5)
    limits = {"amplitude loss": 1e-6, "circular loss": 1e-6, "direct loss": 1e-6,
              "conv embedder": 1e-4, "LN-attention block": 1e-4, "toy tokenizer": 1e-4}
    ok = all(worst[k] < limits[k] for k in limits)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(4, ok, f">= 100 instances each, worst rel. error: {detail} ({time.time() - start:.0f} s)")


def test_criterion_05_quantizer_oracle(report):
    rng = np.random.default_rng(5)
    mismatches = ties = 0
    for inst in range(1000):
        v = rng.standard_normal((32, 8))
        if inst % 4 == 0:
            j, k = sorted(rng.choice(32, 2, replace=False))
            v[k] = v[j] * rng.uniform(0.5, 2)  # duplicated direction
            p = v[j] * rng.uniform(0.5, 2) if inst % 8 == 0 else rng.standard_normal(8)
            ties += inst % 8 == 0
        else:
            p = rng.standard_normal(8)
        book = Codebook(v, np.zeros(32), np.zeros((32, 8)), np.zeros(32, dtype=np.int64))
        idx, _, _ = quantize(p, book)
        pn = p / np.linalg.norm(p)
        vn = v / np.linalg.norm(v, axis=1, keepdims=True)
        dists = [float(np.linalg.norm(pn - vn[c])) for c in range(32)]
        cosines = [float(pn @ vn[c]) for c in range(32)]
        # duplicated directions agree only to rounding, so ties are taken at 1e-12
        best_d = min(c for c in range(32) if dists[c] <= min(dists) + 1e-12)
        best_c = min(c for c in range(32) if cosines[c] >= max(cosines) - 1e-12)
        mismatches += not (idx == best_d == best_c)
    report(5, mismatches == 0, f"1000 instances ({ties} exact ties), {mismatches} mismatches")


def test_criterion_06_shape_contract(report):
    conv = TemporalConv(patch_len=200)
    params = {}
    conv.init(np.random.default_rng(6), params)
    y, _ = conv.forward(params, np.random.default_rng(0).standard_normal((4, 200)))
    ok = conv.lengths() == [25, 25, 25] and conv.channels == 8 and conv.out_dim == 200 and y.shape == (4, 200)
    ok = ok and EncoderConfig().hidden_dim == conv.out_dim
    report(6, ok, f"trace 200 -> {' -> '.join(map(str, conv.lengths()))}; {conv.channels} x 25 = {conv.out_dim}")


def test_criterion_07_preprocessing_invariants(report):
    rng = np.random.default_rng(7)
    worst = dict(car_sum=0.0, car_idem=0.0, z_mean=0.0, z_std=0.0, affine=0.0, parseval=0.0, shift=0.0)
    for _ in range(100):
        x = rng.standard_normal((int(rng.integers(2, 20)), 200)) * rng.uniform(0.1, 100)
        c = car(x)
        worst["car_sum"] = max(worst["car_sum"], float(np.max(np.abs(c.sum(axis=0)))))
        worst["car_idem"] = max(worst["car_idem"], float(np.max(np.abs(car(c) - c))))
        patch = x[0] + rng.uniform(-50, 50)
        z = zscore_patch(patch)
        worst["z_mean"] = max(worst["z_mean"], abs(float(z.mean())))
        worst["z_std"] = max(worst["z_std"], abs(float(z.std()) - 1))
        a, b = rng.uniform(0.01, 100), rng.uniform(-100, 100)
        worst["affine"] = max(worst["affine"], float(np.max(np.abs(zscore_patch(a * patch + b) - z))))
        t = dft_features(patch)
        X = np.fft.rfft(patch)
        energy = np.sum(t.amplitude**2) * 200 / 2 + (abs(X[0]) ** 2 + abs(X[-1]) ** 2) / 200
        worst["parseval"] = max(worst["parseval"], abs(energy - np.sum(patch**2)) / np.sum(patch**2))
        s = int(rng.integers(1, 200))
        ts = dft_features(np.roll(patch, s))
        k = np.arange(1, 100)
        pe = wrapped_angle_error(ts.phase, t.phase - 2 * PI * k * s / 200)
        strong = t.amplitude > 1e-6 * t.amplitude.max()
        worst["shift"] = max(worst["shift"], float(np.max(pe[strong])))
    limits = dict(car_sum=1e-6, car_idem=1e-6, z_mean=1e-7, z_std=1e-6, affine=1e-6, parseval=1e-6, shift=1e-6)
    ok = all(worst[k] < limits[k] for k in limits)
    report(7, ok, "100 instances: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_08_sampler_geometry(report):
    rng = np.random.default_rng(8)
    recs = [sinusoid_recording(rng, n_channels=c, seconds=40, n_components=1) for c in (19, 4, 12)]
    index = CorpusIndex.from_recordings(recs)
    bad = 0
    for _ in range(10_000):
        s = draw_sample(index, rng, 256, 200)
        ids = set(s.electrode_ids.tolist())
        bad += not (s.n_channels * s.n_windows == 256 and s.patches.shape == (256, 200)
                    and ids <= set(range(1, index.n_electrodes + 1)))
    big = Recording([f"E{i}" for i in range(32)], 200.0, [(0, 200 * 8)], np.zeros((32, 1600)))
    big_index = CorpusIndex.from_recordings([big])
    s32 = draw_sample(big_index, rng, 256, 200)
    windows_ok = s32.n_channels == 32 and s32.n_windows == 8
    two = CorpusIndex.from_recordings([sinusoid_recording(rng, n_channels=8, seconds=40) for _ in range(2)])
    picks = np.array([draw_sample(two, rng, 256, 200).file_index for _ in range(10_000)])
    freq = float(np.mean(picks == 0))
    report(8, bad == 0 and windows_ok and 0.45 <= freq <= 0.55,
           f"10000 draws, {bad} invalid; 32-ch case -> {s32.n_windows} x 1 s windows; file-0 frequency {freq:.3f}")


def _wrap_heavy_corpus(seed):
    rng = np.random.default_rng(seed)
    return [sinusoid_recording(rng, n_channels=8, seconds=32, phase_center=PI, phase_spread=0.3)
            for _ in range(4)]


@pytest.mark.slow
def test_criterion_09_directional_training(report):
    corpus = CorpusIndex.from_recordings(_wrap_heavy_corpus(0))
    held = CorpusIndex.with_electrodes(_wrap_heavy_corpus(99)[:1], corpus.global_electrodes)
    eval_samples = [draw_sample(held, np.random.default_rng(5), 8, 200, 200) for _ in range(32)]
    target_phase = dft_features(np.stack([s.patches for s in eval_samples]).astype(np.float64))
    weight = target_phase.amplitude
    near_wrap = float(np.sum(weight * (np.abs(target_phase.phase) > PI / 2)) / np.sum(weight))
    wins, lines, start = 0, [], time.time()
    for seed in range(5):
        errs = {}
        for mode in ("circular", "baseline"):
            model, _ = train(TrainConfig.toy(mode=mode, seed=seed), corpus)
            errs[mode] = evaluate_reconstruction(model, eval_samples).phase_error
        win = errs["circular"] <= 0.9 * errs["baseline"]
        wins += win
        lines.append(f"seed {seed}: {errs['circular']:.3f} vs {errs['baseline']:.3f}")
    report(9, wins >= 4 and near_wrap > 0.9,
           f"{wins}/5 seed pairs with circular >= 10% lower (weight near +-pi {near_wrap:.2f}); "
           + "; ".join(lines) + f" ({time.time() - start:.0f} s)")


def test_criterion_10_determinism_and_round_trips(report, tmp_path):
    corpus = CorpusIndex.from_recordings(_wrap_heavy_corpus(1)[:2])
    cfg = TrainConfig.toy(batch_size=4, epochs=3, warmup_epochs=1, steps_per_epoch=10)
    model, _ = train(cfg, corpus, tmp_path / "a")
    train(cfg, corpus, tmp_path / "b")
    logs_equal = (tmp_path / "a/train_log.csv").read_bytes() == (tmp_path / "b/train_log.csv").read_bytes()
    rec = corpus.recordings[0]
    rec_equal = load_canonical(save_canonical(rec, tmp_path / "rec")) == rec
    save_model(model, tmp_path / "m")
    loaded = load_model(tmp_path / "m")
    params_equal = set(loaded.params) == set(model.params) and all(
        np.array_equal(loaded.params[k], model.params[k]) for k in model.params)
    ckpt_equal = params_equal and loaded.codebook == model.codebook
    samples = [draw_sample(corpus, np.random.default_rng(0), 8, 200, 200) for _ in range(4)]
    report_equal = evaluate_reconstruction(loaded, samples) == evaluate_reconstruction(model, samples)
    report(10, logs_equal and rec_equal and ckpt_equal and report_equal,
           f"logs identical {logs_equal}, recording round-trip {rec_equal}, "
           f"checkpoint round-trip {ckpt_equal}, report identical {report_equal}")
