"""Acceptance suite: one PASS/FAIL line per criterion, each at its stated tolerance.

The two toy training runs (AC8, AC9) take several minutes each; they share a
session fixture so the suite trains exactly twice.
"""

import csv
import json
import math
import time

import numpy as np
import pytest

from awfgan import tensor as T
from awfgan.cli import main as cli_main
from awfgan.discriminators import FrequencyCritic, SpatialCritic, d_spa_score
from awfgan.generator import Generator
from awfgan.gradcheck import check_gradients
from awfgan.images import load_image, save_image
from awfgan.losses import content_loss, gradient_penalty, mse, ssim_paper
from awfgan.mask import apply_mask, connected_components, extract_target_mask, threshold_map
from awfgan.metrics import (entropy, evaluate_pair, mutual_information, scd, spatial_frequency,
                            standard_deviation, viff)
from awfgan.synthetic import toy_dataset
from awfgan.tensor import Tensor
from awfgan.trainer import (TrainConfig, fuse, initial_checkpoint, load_config, load_generator, parse_config,
                            read_loss_log, train)
from awfgan.wavelet import haar_dwt2, haar_idwt2, haar_stack

import oracles

TOY = TrainConfig(epochs=50, n_critic=2, batch_size=2, image_size=64, seed=0)   # 8 pairs -> 200 steps


def verdict(capsys, tag, ok, detail):
    with capsys.disabled():
        print(f"\n{tag}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


# --- shared training runs -------------------------------------------------------------

@pytest.fixture(scope="session")
def toy_data():
    return toy_dataset(n=8, size=64, seed=0)


def _timed_run(data, run_dir):
    t0 = time.perf_counter()
    ckpt = train(data, TOY, run_dir=run_dir)
    return ckpt, time.perf_counter() - t0


@pytest.fixture(scope="session")
def toy_runs(toy_data, tmp_path_factory):
    a_dir, b_dir = tmp_path_factory.mktemp("run_a"), tmp_path_factory.mktemp("run_b")
    a, ta = _timed_run(toy_data, a_dir)
    b, tb = _timed_run(toy_data, b_dir)
    return {"a": (a, ta, a_dir), "b": (b, tb, b_dir)}


# --- AC1 ------------------------------------------------------------------------------

def test_ac1_wavelet_correctness(capsys):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_rec = worst_energy = 0.0
    for _ in range(100):
        h, w = 2 * rng.integers(4, 33, size=2)
        x = rng.standard_normal((h, w))
        s = haar_dwt2(x)
        worst_rec = max(worst_rec, np.abs(haar_idwt2(s) - x).max())
        e = np.sum(x * x)
        worst_energy = max(worst_energy, abs(s.energy() - e) / e)
    dt = time.perf_counter() - t0
    ok = worst_rec < 1e-10 and worst_energy < 1e-9 and dt < 5
    verdict(capsys, "AC1 wavelet correctness", ok,
            f"max recon err {worst_rec:.1e}, max rel energy err {worst_energy:.1e}, {dt:.2f}s")


# --- AC2 ------------------------------------------------------------------------------

def _op_cases(rng):
    def leaf(*shape, low=-1.0, high=1.0):
        return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)

    x4 = leaf(2, 3, 6, 6)
    y4 = leaf(2, 2, 6, 6)
    w3, b3 = leaf(4, 3, 3, 3), leaf(4)
    wg, bg = leaf(4, 1, 3, 3), leaf(4)
    xg = leaf(1, 4, 6, 6)
    a, b = leaf(3, 8), leaf(1, 8)
    pos = leaf(3, 8, low=0.5, high=2.0)
    fw, fb = leaf(5, 8), leaf(5)
    img = leaf(2, 1, 8, 6)
    return {
        "conv2d": (lambda: T.conv2d(x4, w3, b3, padding=1), [x4, w3, b3]),
        "conv2d stride 2": (lambda: T.conv2d(x4, w3, b3, stride=2, padding=1), [x4, w3, b3]),
        "conv2d groups": (lambda: T.conv2d(xg, wg, bg, padding=1, groups=4), [xg, wg, bg]),
        "maxpool2d": (lambda: T.maxpool2d(x4, 2), [x4]),
        "fully_connected": (lambda: T.fully_connected(a, fw, fb), [a, fw, fb]),
        "add": (lambda: T.add(a, b), [a, b]),
        "sub": (lambda: T.sub(a, b), [a, b]),
        "mul": (lambda: T.mul(a, b), [a, b]),
        "div": (lambda: T.div(a, pos), [a, pos]),
        "neg": (lambda: T.neg(a), [a]),
        "scalar_mul": (lambda: T.scalar_mul(a, -2.5), [a]),
        "add_scalar": (lambda: T.add_scalar(a, 0.3), [a]),
        "square": (lambda: T.square(a), [a]),
        "leaky_relu": (lambda: T.leaky_relu(x4), [x4]),
        "sigmoid": (lambda: T.sigmoid(x4), [x4]),
        "tanh": (lambda: T.tanh(x4), [x4]),
        "reshape": (lambda: T.reshape(x4, (2, -1)), [x4]),
        "concat": (lambda: T.concat([x4, y4, x4], axis=1), [x4, y4]),
        "tensor_sum": (lambda: T.tensor_sum(T.square(a)), [a]),
        "tensor_mean": (lambda: T.tensor_mean(T.square(a)), [a]),
        "channel_mean": (lambda: T.channel_mean(x4), [x4]),
        "channel_max": (lambda: T.channel_max(x4), [x4]),
        "global_avg_pool": (lambda: T.global_avg_pool(T.square(x4)), [x4]),
        "upsample_copy": (lambda: T.upsample_copy(x4), [x4]),
        "haar_stack": (lambda: haar_stack(img), [img]),
    }


def test_ac2_autodiff_correctness(capsys):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = {}
    for name, (fn, inputs) in _op_cases(rng).items():
        probe = fn().data
        c = Tensor(rng.standard_normal(probe.shape))
        res = check_gradients(lambda: T.tensor_sum(T.mul(fn(), c)), inputs, rng, n_coords=20)
        worst[name] = max(r.max_rel_error for r in res)

    gen = Generator.init(np.random.default_rng(3))
    ir = Tensor(rng.uniform(size=(1, 1, 8, 8)), requires_grad=True)
    vi = Tensor(rng.uniform(size=(1, 1, 8, 8)), requires_grad=True)
    cg = Tensor(rng.standard_normal((1, 1, 8, 8)))

    def g_fn():
        fused, ai, av = gen(ir, vi)
        return T.add(T.tensor_sum(T.mul(fused, cg)), T.tensor_mean(T.mul(ai, av)))

    res = check_gradients(g_fn, [ir, vi], rng, n_coords=20, freeze_branches=True)
    res += check_gradients(g_fn, gen.parameters(), rng, n_coords=40, pooled=True, freeze_branches=True)
    worst["generator"] = max(r.max_rel_error for r in res)

    for name, critic, shape in (("D_spa", SpatialCritic.init(rng, 16), (2, 1, 16, 16)),
                                ("D_fre", FrequencyCritic.init(rng, 16), (2, 4, 8, 8))):
        x = Tensor(rng.uniform(size=shape), requires_grad=True)
        fn = (lambda critic=critic, x=x: T.tensor_sum(critic(x)))
        res = check_gradients(fn, [x], rng, n_coords=20, freeze_branches=True)
        res += check_gradients(fn, critic.parameters(), rng, n_coords=40, pooled=True, freeze_branches=True)
        worst[name] = max(r.max_rel_error for r in res)
    dt = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    ok = not bad and dt < 60
    verdict(capsys, "AC2 autodiff correctness", ok,
            f"{len(worst)} ops/networks, max rel err {max(worst.values()):.1e}, {dt:.1f}s"
            + (f", failing: {bad}" if bad else ""))


# --- AC3 ------------------------------------------------------------------------------

def _attention_maps(rng, n):
    from scipy import ndimage

    for i in range(n):
        h, w = rng.integers(8, 48, size=2)
        kind = i % 4
        if kind == 0:
            m = rng.uniform(size=(h, w))
        elif kind == 1:
            m = ndimage.gaussian_filter(rng.uniform(size=(h, w)), rng.uniform(0.5, 3))
        elif kind == 2:
            m = np.zeros((h, w))
            for _ in range(rng.integers(1, 8)):
                r, c = rng.integers(0, h), rng.integers(0, w)
                m[max(r - 2, 0):r + rng.integers(1, 5), max(c - 2, 0):c + rng.integers(1, 5)] = rng.uniform(0.5, 1)
        else:
            m = 1 / (1 + np.exp(-rng.standard_normal((h, w)) * 3))   # sigmoid-like attention
        yield m


def test_ac3_mask_contract(capsys):
    rng = np.random.default_rng(303)
    failures = []
    for i, m in enumerate(_attention_maps(rng, 200)):
        mask = extract_target_mask(m)
        kept = connected_components(mask)
        everything = connected_components(threshold_map(m))
        dropped = [c.area for c in everything[len(kept):]]
        checks = {
            "binary": set(np.unique(mask)) <= {0, 1},
            "<=3 components": len(kept) <= 3,
            "min kept >= max dropped": not kept or not dropped or min(c.area for c in kept) >= max(dropped),
            "scale invariant": all(np.array_equal(mask, extract_target_mask(m * s))
                                   for s in (1e-3, 0.37, 2.0, 913.0)),
        }
        failures += [(i, k) for k, v in checks.items() if not v]
    verdict(capsys, "AC3 mask contract", not failures, f"200 maps, {len(failures)} violations")


# --- AC4 ------------------------------------------------------------------------------

def test_ac4_masked_discrimination_invariance(capsys, toy_data):
    rng = np.random.default_rng(404)
    critic = SpatialCritic.init(rng, 64)
    trials = differing = 0
    for ir, _ in toy_data:
        att = ir + 0.05 * rng.uniform(size=ir.shape)
        mask = extract_target_mask(att)
        base = d_spa_score(Tensor(apply_mask(ir[None, None], mask)), critic).data
        for _ in range(3):
            noisy = np.where(mask == 0, rng.uniform(size=ir.shape), ir)
            out = d_spa_score(Tensor(apply_mask(noisy[None, None], mask)), critic).data
            trials += 1
            differing += out.tobytes() != base.tobytes()
    verdict(capsys, "AC4 masked-discrimination invariance", differing == 0,
            f"{trials} background perturbations, {differing} score changes")


# --- AC5 ------------------------------------------------------------------------------

def test_ac5_metric_oracles(capsys):
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(50):
        a, b, f = (rng.uniform(size=(8, 8)) for _ in range(3))
        pairs = [(mutual_information(a, b, f), oracles.mutual_information(a, b, f)),
                 (entropy(f), oracles.entropy(f)),
                 (standard_deviation(f), oracles.std(f)),
                 (spatial_frequency(f), oracles.spatial_frequency(f)),
                 (scd(a, b, f), oracles.scd(a, b, f))]
        worst = max(worst, max(abs(x - y) for x, y in pairs))
    # VIFF needs at least 32x32 inputs
    viff_err = 0.0
    for _ in range(3):
        a = rng.uniform(size=(32, 32))
        b = np.clip(0.7 * a[:, ::-1] + 0.3 * rng.uniform(size=(32, 32)), 0, 1)
        f = np.clip(0.5 * (a + b) + 0.05 * rng.standard_normal((32, 32)), 0, 1)
        viff_err = max(viff_err, abs(viff(a, b, f) - oracles.viff(a, b, f)))
    c = np.full((8, 8), 0.37)
    x = rng.uniform(size=(16, 16))
    identities = (entropy(c) == 0.0 and standard_deviation(c) == 0.0 and spatial_frequency(c) == 0.0
                  and ssim_paper(x, x).item() == 1.0 and mse(x, x).item() == 0.0)
    ok = worst < 1e-10 and viff_err < 1e-6 and identities
    verdict(capsys, "AC5 metric oracle equivalence", ok,
            f"max oracle diff {worst:.1e}, viff diff {viff_err:.1e}, exact identities {identities}")


# --- AC6 ------------------------------------------------------------------------------

class _Linear:
    def __init__(self, w):
        self.w = Tensor(w[None], requires_grad=True)
        self.b = Tensor([0.0], requires_grad=True)

    def __call__(self, x):
        return T.fully_connected(T.reshape(x, (x.shape[0], -1)), self.w, self.b)


def test_ac6_gradient_penalty(capsys):
    rng = np.random.default_rng(606)
    worst = 0.0
    for norm in (0.5, 1.0, 3.0):
        for _ in range(30):
            v = rng.standard_normal(64)
            critic = _Linear(norm * v / np.linalg.norm(v))
            real, fake = rng.uniform(size=(4, 1, 8, 8)), rng.uniform(size=(4, 1, 8, 8))
            gp = gradient_penalty(critic, real, fake, rng)
            worst = max(worst, abs(gp.value - (norm - 1) ** 2))
    verdict(capsys, "AC6 gradient penalty", worst < 1e-6, f"90 samples, max |gp - (|w|-1)^2| {worst:.1e}")


# --- AC7 ------------------------------------------------------------------------------

def test_ac7_loss_weight_config(capsys, tmp_path):
    defaults = parse_config("").weights.as_dict()
    cfg_file = tmp_path / "defaults.cfg"
    cfg_file.write_text("lambda = 1\ngamma = 1\nalpha = 10\nbeta = 10\nimage_size = 32\nepochs = 1\n")
    cfg = load_config(cfg_file)
    train(toy_dataset(n=2, size=32, seed=7), cfg, run_dir=tmp_path / "run")
    header = (tmp_path / "run" / "loss_log.csv").read_text().splitlines()[0]
    weights, _ = read_loss_log(tmp_path / "run" / "loss_log.csv")
    expected = {"lambda": 1.0, "gamma": 1.0, "alpha": 10.0, "beta": 10.0}
    ok = defaults == expected and cfg.weights.as_dict() == expected and weights == expected
    verdict(capsys, "AC7 loss-weight configuration", ok, f"log header {header!r}")


# --- AC8 ------------------------------------------------------------------------------

def _dataset_content_loss(gen, data):
    ir = np.stack([p[0] for p in data])[:, None]
    vi = np.stack([p[1] for p in data])[:, None]
    with T.no_grad():
        fused, _, _ = gen(Tensor(ir), Tensor(vi))
        return content_loss(ir, vi, fused.data).item()


@pytest.mark.slow
def test_ac8_toy_adversarial_training(capsys, toy_data, toy_runs):
    final, seconds, run_dir = toy_runs["a"]
    _, rows = read_loss_log(run_dir / "loss_log.csv")
    finite = all(math.isfinite(v) for r in rows for v in r.values())
    l0 = _dataset_content_loss(load_generator(initial_checkpoint(TOY)), toy_data)
    l1 = _dataset_content_loss(load_generator(final), toy_data)
    dead = np.full((64, 64), 0.5)
    sd_dead, sf_dead = standard_deviation(dead), spatial_frequency(dead)
    reports = []
    for ir, vi in toy_data:
        f = fuse(ir, vi, final)
        reports.append(evaluate_pair(ir, vi, f))
    sd_ok = all(r.sd > sd_dead for r in reports)
    sf_ok = all(r.sf > sf_dead for r in reports)
    metrics_ok = all(math.isfinite(v) for r in reports for v in r.values())
    ok = (final.step == 200 and len(rows) == 200 and finite and l1 < l0 and sd_ok and sf_ok and metrics_ok
          and seconds < 15 * 60)
    mean = {k: np.mean([getattr(r, k) for r in reports]) for k in ("sd", "sf", "viff")}
    verdict(capsys, "AC8 toy adversarial training", ok,
            f"{final.step} steps in {seconds:.0f}s, all losses finite {finite}, L_con {l0:.4f} -> {l1:.4f}, "
            f"mean SD {mean['sd']:.3f} SF {mean['sf']:.3f} VIFF {mean['viff']:.3f} (dead output: 0, 0)")


# --- AC9 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_ac9_determinism(capsys, toy_runs):
    (a, _, a_dir), (b, _, b_dir) = toy_runs["a"], toy_runs["b"]
    same_ckpt = a.to_bytes() == b.to_bytes()
    same_file = (a_dir / "checkpoint.ckpt").read_bytes() == (b_dir / "checkpoint.ckpt").read_bytes()
    same_log = (a_dir / "loss_log.csv").read_bytes() == (b_dir / "loss_log.csv").read_bytes()
    verdict(capsys, "AC9 determinism", same_ckpt and same_file and same_log,
            f"checkpoints identical {same_ckpt and same_file}, loss logs identical {same_log}")


# --- AC10 -----------------------------------------------------------------------------

def test_ac10_cli_chain(capsys, tmp_path):
    data = tmp_path / "data"
    for sub in ("ir", "vi"):
        (data / sub).mkdir(parents=True)
    for i, (ir, vi) in enumerate(toy_dataset(n=4, size=64, seed=11)):
        save_image(ir, data / "ir" / f"pair{i}.pgm")
        save_image(vi, data / "vi" / f"pair{i}.pgm")
    cfg = tmp_path / "toy.cfg"
    cfg.write_text("epochs = 1\nimage_size = 64\nbatch_size = 2\nn_critic = 2\nseed = 0\n")
    codes = {}
    codes["train"] = cli_main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "run")])
    fused_dir = tmp_path / "fused"
    fused_dir.mkdir()
    for i in range(4):
        argv = ["fuse", "--ckpt", str(tmp_path / "run" / "checkpoint.ckpt"), "--ir", str(data / "ir" / f"pair{i}.pgm"),
                "--vi", str(data / "vi" / f"pair{i}.pgm"), "--out", str(fused_dir / f"pair{i}.pgm")]
        if i == 0:
            argv += ["--dump-attention", str(tmp_path / "att")]
        codes[f"fuse{i}"] = cli_main(argv)
    report = tmp_path / "report.csv"
    codes["eval"] = cli_main(["eval", "--ir-dir", str(data / "ir"), "--vi-dir", str(data / "vi"),
                              "--fused-dir", str(fused_dir), "--out", str(report)])
    codes["wavelet"] = cli_main(["wavelet", "--in", str(fused_dir / "pair0.pgm"), "--out", str(tmp_path / "wav")])
    codes["mask"] = cli_main(["mask", "--attention", str(tmp_path / "att" / "attention_ir.pgm"),
                              "--out", str(tmp_path / "mask.pgm")])
    capsys.readouterr()

    well_formed = []
    if all(c == 0 for c in codes.values()):
        lines = report.read_text().splitlines()
        rows = list(csv.DictReader(lines))
        summary = json.loads(report.with_suffix(".json").read_text())
        well_formed += [
            lines[0] == "pair,mi,en,sd,sf,viff,scd",
            [r["pair"] for r in rows] == [f"pair{i}" for i in range(4)],
            all(math.isfinite(float(r[k])) for r in rows for k in ("mi", "en", "sd", "sf", "viff", "scd")),
            summary["pairs"] == 4 and all(set(summary[k]) == {"mean", "median"}
                                          for k in ("mi", "en", "sd", "sf", "viff", "scd")),
            all(load_image(fused_dir / f"pair{i}.pgm").shape == (64, 64) for i in range(4)),
            all(load_image(tmp_path / "wav" / f"{b}.pgm").shape == (32, 32) for b in ("LL", "HL", "LH", "HH")),
            set(np.unique(load_image(tmp_path / "mask.pgm"))) <= {0.0, 1.0},
        ]
    ok = all(c == 0 for c in codes.values()) and well_formed and all(well_formed)
    verdict(capsys, "AC10 end-to-end CLI", ok, f"exit codes {sorted(set(codes.values()))}, "
                                              f"{sum(well_formed)}/{len(well_formed)} output checks")
