"""Acceptance criteria, one recorded PASS/FAIL line each (see the summary at the end of the run)."""
import json
import math
import time

import numpy as np
import pytest

import reference_runs as ref
from amemnet import cli, gradcheck
from amemnet import memory as mem
from amemnet.data import (SynthConfig, generate_synthetic, load_dataset, load_model, save_dataset,
                          save_model)
from amemnet.encoder import QueryEncoder
from amemnet.evalfuse import ScoreTable, evaluate_by_ratio, fuse_streams, read_report
from amemnet.model import AMemNet, Architecture
from amemnet.numerics import gradient_errors
from amemnet.training import LossWeights, TrainConfig, adv_loss, cls_loss, generator_objective, rec_loss, train
from conftest import ACCEPTANCE_LINES

REFERENCE = json.loads(ref.FIXTURE.read_text(encoding="utf-8"))


def record(criterion, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def test_published_tables_statement():
    # the video benchmarks and pretrained backbone are out of scope; nothing numeric to compare
    ACCEPTANCE_LINES.append("N/A   published video-benchmark tables: not reproducible without the video datasets "
                            "and pretrained backbone; covered by the synthetic regression below")


# gradient suite ------------------------------------------------------------------

def test_gradient_suite(capsys):
    start = time.perf_counter()
    status = cli.run(["gradcheck"])
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    results = gradcheck.run_suite(0)
    rel = max(r.error for r in results if r.kind == "rel")
    ab = max(r.error for r in results if r.kind == "abs")
    record("gradient suite", status == 0 and elapsed < 60 and all(r.ok for r in results),
           f"exit {status}, {elapsed:.1f}s; max rel err {rel:.1e} over {sum(r.kind == 'rel' for r in results)} "
           f"groups; W1/b1 at B=2 (true gradient <= 1e-8) held to abs err {ab:.1e} < 1e-8")


def test_gradient_suite_literal_formula_on_flat_groups():
    """The two-row flat groups under the plain relative formula, reported for transparency."""
    rng = np.random.default_rng(0)
    model = AMemNet(gradcheck.MINI, 0)
    for t in model.named_parameters().values():
        t.data += 0.1 * rng.standard_normal(t.shape)
    X, V = rng.standard_normal((2, 6)), rng.standard_normal((2, 6))
    y = rng.integers(0, 3, size=2)
    gen = model.generator_parameters()
    errs = gradient_errors(lambda: generator_objective(model, X, V, y, LossWeights())[0],
                           {k: gen[k] for k in gradcheck.TWO_ROW_DEGENERATE},
                           gradcheck.EPS, gradcheck.POINTS)
    ok = all(e < 1e-4 for e in errs.values())
    record("gradient suite, plain relative formula on W1/b1 at B=2 (seed 0)", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


# memory mechanics ------------------------------------------------------------------

def test_memory_mechanics():
    rng = np.random.default_rng(0)
    worst_sum, min_alpha = 0.0, 1.0
    for i in range(10_000):
        n, h = rng.integers(1, 64), rng.integers(1, 32)
        a = mem.address(rng.normal(size=h) * 3, rng.normal(size=(n, h)) * 3,
                        mem.SIMILARITIES[i % 2]).data
        worst_sum = max(worst_sum, abs(a.sum() - 1))
        min_alpha = min(min_alpha, a.min())
    record("memory: attention simplex (1e4 addressings)", worst_sum <= 1e-9 and min_alpha >= 0,
           f"max |sum-1| {worst_sum:.1e}, min alpha {min_alpha:.1e}")

    e_lo, e_hi, a_abs = 1.0, 0.0, 0.0
    for _ in range(200):
        d = rng.integers(1, 32)
        e, a = mem.gates(rng.normal(size=(8, d)), rng.normal(size=(d, d)) / np.sqrt(d),
                         rng.normal(size=(d, d)) / np.sqrt(d))
        e_lo, e_hi = min(e_lo, e.data.min()), max(e_hi, e.data.max())
        a_abs = max(a_abs, np.abs(a.data).max())
    record("memory: erase in (0,1), add in (-1,1)", 0 < e_lo and e_hi < 1 and a_abs < 1,
           f"e in [{e_lo:.2e}, {e_hi:.6f}], max |a| {a_abs:.6f}")

    loc, shrink_ok = 0.0, True
    for _ in range(500):
        n, d, b = rng.integers(2, 10), rng.integers(1, 8), rng.integers(1, 6)
        M, V = rng.normal(size=(n, d)) * 5, rng.normal(size=(b, d))
        A = rng.dirichlet(np.ones(n), size=b)
        cold = rng.random(n) < 0.4
        A[:, cold] = 0.0
        new, erased = mem.write(M, A, V, rng.normal(size=(d, d)), rng.normal(size=(d, d)), True)
        if cold.any():
            loc = max(loc, np.abs(new.data[cold] - M[cold]).max())
        shrink_ok &= bool(np.all(np.abs(erased.data) <= np.abs(M)))
    record("memory: write locality", loc < 1e-12, f"max change of unattended rows {loc:.1e}")
    record("memory: erase shrinkage", shrink_ok, "pre-add magnitudes non-increasing in 500 writes")

    x = rng.normal(size=(4, 6))
    v_hat = mem.read(x, rng.dirichlet(np.ones(5), size=4), np.zeros((5, 6))).data
    record("memory: zero-memory read identity", v_hat.tobytes() == x.tobytes(), "v_hat == x bitwise")

    enc = QueryEncoder(6, 4, 3, rng)
    memory = mem.KeyValueMemory(5, 3, 6, rng)
    before = memory.params["values"].data.copy()
    a1, _ = mem.generate(x, enc, memory)
    a2, _ = mem.generate(x, enc, memory)
    pure = a1.data.tobytes() == a2.data.tobytes() and memory.params["values"].data.tobytes() == before.tobytes()
    record("memory: eval-mode purity", pure, "two eval forwards bit-identical, state untouched")


# loss sanity ------------------------------------------------------------------------

def test_loss_sanity():
    err = abs(adv_loss(np.zeros(8), np.zeros(8)).item() - 2 * math.log(0.5))
    record("loss: L_adv = 2 log 0.5 at indifference", err <= 1e-12, f"|error| {err:.1e}")
    V = np.random.default_rng(1).normal(size=(5, 4))
    W = V.copy()
    W[0, 0] = np.nextafter(W[0, 0], np.inf)
    record("loss: L_rec = 0 iff v_hat = v", rec_loss(V, V).item() == 0.0 and rec_loss(W, V).item() > 0,
           "exactly 0 on equality, positive one ulp away")
    err = max(abs(cls_loss(np.zeros((3, k)), [0, 1, 2]).item() - math.log(k)) for k in (3, 8, 101))
    record("loss: cross-entropy = log K at uniform logits", err <= 1e-12, f"|error| {err:.1e}")


# synthetic end-to-end regression ------------------------------------------------------

@pytest.fixture(scope="module")
def regression(tmp_path_factory):
    rgb, _ = generate_synthetic(SynthConfig())
    cfg = TrainConfig(epochs=ref.REGRESSION_EPOCHS, seed=0)
    runs = []
    for i in range(2):
        start = time.perf_counter()
        model, report = train(rgb, cfg, ref.REGRESSION_ARCH)
        acc, _ = evaluate_by_ratio(rgb, model)
        path = tmp_path_factory.mktemp(f"run{i}") / "train_report.csv"
        report.to_csv(path)
        runs.append({"acc": acc, "report": report, "csv": path.read_bytes(),
                     "seconds": time.perf_counter() - start, "model": model})
    partial, full = ref.regression_baselines()
    return runs, partial, full


def test_regression_a_monotone(regression):
    acc = regression[0][0]["acc"]
    worst = float(np.max(acc[:-1] - acc[1:]))
    record("regression (a) accuracy non-decreasing in p (2-point tolerance)", worst <= 0.02,
           f"accuracy by ratio {np.round(acc, 4).tolist()}, largest drop {max(worst, 0):.4f}")


def test_regression_b_full_ratio(regression):
    runs, _, full = regression
    frozen = REFERENCE["regression"]["full_baseline_at_1"]
    ours = runs[0]["acc"][-1]
    record("regression (b) ratio 1.0 within 5 points of a head on full features",
           full == frozen and abs(ours - full) <= 0.05,
           f"AMemNet {ours:.4f} vs full-feature head {full:.4f}")


def test_regression_c_beats_partial_baseline(regression):
    runs, partial, _ = regression
    frozen = REFERENCE["regression"]
    assert partial.tolist() == frozen["partial_baseline_by_ratio"]  # reference run reproduces
    ours = float(runs[0]["acc"][ref.MID_RATIOS].mean())
    base = frozen["partial_baseline_mid_mean"]
    margin = frozen["required_margin"]
    record("regression (c) mean over ratios 0.3-0.7 exceeds the partial-feature baseline",
           ours > base + margin,
           f"AMemNet {ours:.4f} vs baseline {base:.4f} (required margin {margin})")


def test_regression_d_finite(regression):
    runs = regression[0]
    ok = all(r["report"].all_finite() for r in runs)
    record("regression (d) all losses finite", ok,
           f"{len(runs[0]['report'])} steps logged, runtime {runs[0]['seconds']:.0f}s per run "
           f"(target < 600s)")
    assert runs[0]["seconds"] < 600


def test_regression_e_reproducible(regression):
    a, b = regression[0]
    same_params = all(a["model"].state_dict()[k].tobytes() == v.tobytes()
                      for k, v in b["model"].state_dict().items())
    record("regression (e) same seed reproduces the report byte-for-byte",
           a["csv"] == b["csv"] and same_params, f"{len(a['csv'])} bytes identical, parameters identical")


# serialization ------------------------------------------------------------------------

def test_serialization(tmp_path):
    from test_data import independent_reader, write_fixture_by_hand

    rgb, _ = generate_synthetic(SynthConfig(classes=3, train_per_class=5, test_per_class=2))
    save_dataset(rgb, tmp_path / "ds")
    ds_ok = load_dataset(tmp_path / "ds").equals(rgb)

    arch = Architecture(d=64, hidden=48, h=32, slots=64, classes=3)
    model = AMemNet(arch, 7)
    save_model(model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    X = np.random.default_rng(0).normal(size=(100, 64))
    model_ok = (all(back.state_dict()[k].tobytes() == v.tobytes() for k, v in model.state_dict().items())
                and back.predict_proba(X).tobytes() == model.predict_proba(X).tobytes())

    records = write_fixture_by_hand(tmp_path / "hand")
    hand = load_dataset(tmp_path / "hand")
    save_dataset(hand, tmp_path / "again")
    hand_ok = (independent_reader(tmp_path / "again" / "features.bin", 3)
               == [(s, p, y, tuple(np.float32(x))) for s, p, y, x in records])
    record("serialization", ds_ok and model_ok and hand_ok,
           f"dataset round trip {ds_ok}, model round trip {model_ok}, hand byte reader {hand_ok}")


# fusion ---------------------------------------------------------------------------------

def test_fusion():
    fused, _ = fuse_streams(ScoreTable([0], [1], [1], [[0.6, 0.4]]),
                            ScoreTable([0], [1], [1], [[0.2, 0.8]]), 1.5)
    example = np.allclose(fused.scores, [[0.9, 1.6]], rtol=0, atol=1e-15) and fused.predictions()[0] == 1
    rng = np.random.default_rng(0)
    same, brute = True, True
    for _ in range(50):
        n, k = 30, 5
        sid, p = np.repeat(np.arange(10), 3), np.tile([1, 2, 3], 10)
        labels = rng.integers(0, k, n)
        a = ScoreTable(sid, p, labels, rng.dirichlet(np.ones(k), n))
        b = ScoreTable(sid, p, labels, rng.dirichlet(np.ones(k), n))
        same &= bool(np.array_equal(fuse_streams(a, a, 1.5)[0].predictions(), a.predictions()))
        _, acc = fuse_streams(a, b, 1.5)
        hits = [0, 0, 0]
        for i in range(n):
            row = [a.scores[i][c] + 1.5 * b.scores[i][c] for c in range(k)]
            hits[p[i] - 1] += row.index(max(row)) == labels[i]
        brute &= bool(np.allclose(acc, np.array(hits) / 10))
    record("fusion", example and same and brute,
           f"(0.6,0.4)+1.5*(0.2,0.8) -> {np.round(fused.scores[0], 12).tolist()}; identical streams keep "
           f"argmax {same}; brute-force accuracy {brute}")


# appendix-style sweeps --------------------------------------------------------------------

SWEEP_EPOCHS = 3


@pytest.fixture(scope="module")
def sweep_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    assert cli.run(["synth", "--out", str(root / "d"), "--set", "d=64"]) == 0
    (root / "c.txt").write_text(f"d = 64\nhidden = 48\nh = 32\nslots = 64\nepochs = {SWEEP_EPOCHS}\n")
    return root


@pytest.mark.parametrize("key,values", [("slots", [16, 32, 64, 128]),
                                        ("lambda_rec", [0, 0.01, 0.1, 1, 10])])
def test_sweeps(sweep_data, key, values, capsys):
    root = sweep_data
    summary, ok = [], True
    for v in values:
        out = root / f"{key}_{v}"
        status = cli.run(["train", "--data", str(root / "d" / "rgb"), "--config", str(root / "c.txt"),
                          "--set", f"{key}={v}", "--out", str(out)])
        status |= cli.run(["eval", "--data", str(root / "d" / "rgb"), "--model", str(out),
                           "--report", str(out / "report.csv")])
        ok &= status == 0 and (out / "train_report.csv").exists() and (out / "report.csv").exists()
        if status == 0:
            _, acc = read_report(out / "report.csv")
            summary.append(f"{v}:{acc[ref.MID_RATIOS].mean():.3f}")
    capsys.readouterr()
    record(f"sweep {key} ({SWEEP_EPOCHS} epochs, one report each)", ok,
           "mean accuracy over ratios 0.3-0.7 " + " ".join(summary))
