"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
report. The desk-scale study (slowest criterion) runs once per session via a
module fixture; deselect slow tests with `-m "not slow"` during development.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import fd_gradient, grad_close

from ganbalance import gan, ops
from ganbalance.checkpoint import load_checkpoint, save_checkpoint
from ganbalance.classifier import ClassifierConfig, classify_forward, init_classifier
from ganbalance.curation import CurationStore, GeneratedSample
from ganbalance.data import (DESK_COUNTS, HOSPITAL_COUNTS, ClassLabel,
                             ClassManifest, ImageRecord, SplitSpec,
                             generate_synthetic_desk_dataset, make_splits,
                             plan_balance)
from ganbalance.experiment import StudyConfig, run_full_study, run_study
from ganbalance.optim import Adam
from ganbalance.tensor import Tensor, no_grad


def announce(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f": {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# gradient suite
# ---------------------------------------------------------------------------

def _fd_all(build_loss, params, h=1e-3):
    build_loss().backward()
    for p in params:
        fd = fd_gradient(build_loss, p, h=h)
        if not grad_close(p.grad, fd):
            return False
        p.zero_grad()
    return True


def _t(rng, shape, scale=1.0, grad=True):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=grad,
                  dtype=np.float64)


def test_gradient_suite():
    """Every layer passes finite-difference checks over >=50 seeded cases."""
    t_start = time.time()
    cases = 0
    for trial in range(8):
        rng = np.random.default_rng(9000 + trial)
        s, p = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x = _t(rng, (1, 2, 6, 6))
        w = _t(rng, (2, 2, 3, 3), 0.5)
        b = _t(rng, 2, 0.1)
        assert _fd_all(lambda: (lambda y: (y * y).mean())(
            ops.conv2d(x, w, b, s, p)), [x, w, b])
        cases += 1
    for trial in range(8):
        rng = np.random.default_rng(9100 + trial)
        s = int(rng.integers(1, 3))
        x = _t(rng, (1, 2, 4, 4))
        w = _t(rng, (2, 2, 4, 4), 0.4)
        b = _t(rng, 2, 0.1)
        assert _fd_all(lambda: (lambda y: (y * y).mean())(
            ops.conv2d_transpose(x, w, b, s, 1)), [x, w, b])
        cases += 1
    for trial in range(8):
        rng = np.random.default_rng(9200 + trial)
        x = Tensor(rng.permutation(64).reshape(1, 4, 4, 4) * 0.1,
                   requires_grad=True, dtype=np.float64)
        assert _fd_all(lambda: (lambda y: (y * y).mean())(
            ops.maxpool2x2(x)), [x])
        cases += 1
    for trial in range(8):
        rng = np.random.default_rng(9300 + trial)
        x, w, b = _t(rng, (3, 4)), _t(rng, (4, 5), 0.5), _t(rng, 5, 0.1)
        assert _fd_all(lambda: (lambda y: (y * y).mean())(
            ops.dense(x, w, b)), [x, w, b])
        cases += 1
    for trial in range(6):
        rng = np.random.default_rng(9400 + trial)
        x = _t(rng, (3, 2, 4, 4))
        g = Tensor(1 + rng.standard_normal(2) * 0.2, requires_grad=True,
                   dtype=np.float64)
        be = _t(rng, 2, 0.2)
        assert _fd_all(lambda: (lambda y: (y * y).mean())(
            ops.batchnorm2d(x, g, be, ops.BatchNormState(2), True)), [x, g, be])
        cases += 1
    for kind in ("relu", "tanh", "sigmoid"):
        for trial in range(4):
            rng = np.random.default_rng(9500 + trial)
            vals = rng.standard_normal((3, 5))
            vals[np.abs(vals) < 0.05] += 0.1
            x = Tensor(vals, requires_grad=True, dtype=np.float64)
            assert _fd_all(lambda: (lambda y: (y * y).mean())(
                ops.apply_activation(x, kind)), [x])
            cases += 1
    for trial in range(6):
        rng = np.random.default_rng(9600 + trial)
        x = _t(rng, (4, 5))
        labels = rng.integers(0, 5, 4)
        assert _fd_all(lambda: ops.cross_entropy(ops.softmax(x), labels), [x])
        cases += 1
    elapsed = time.time() - t_start
    announce("gradient suite",
             cases >= 50 and elapsed < 60,
             f"{cases} cases, {elapsed:.1f}s (tolerance rel<1e-2 or abs<1e-4)")


# ---------------------------------------------------------------------------
# oracle suite
# ---------------------------------------------------------------------------

def test_oracle_suite():
    """conv vs naive loops (1e-5), adjoint identity (1e-4), maxpool exact."""
    worst_conv = 0.0
    for trial in range(20):
        rng = np.random.default_rng(700 + trial)
        n, ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 4)), \
            int(rng.integers(1, 4))
        k, s, p = int(rng.integers(1, 6)), int(rng.integers(1, 3)), \
            int(rng.integers(0, 3))
        h, w_ = int(rng.integers(k, 9)), int(rng.integers(k, 9))
        x = rng.standard_normal((n, ci, h, w_))
        w = rng.standard_normal((co, ci, k, k))
        b = rng.standard_normal(co)
        y = ops.conv2d(Tensor(x.astype(np.float32)), Tensor(w.astype(np.float32)),
                       Tensor(b.astype(np.float32)), s, p)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        ho = (h + 2 * p - k) // s + 1
        wo = (w_ + 2 * p - k) // s + 1
        expect = np.zeros((n, co, ho, wo))
        for ni in range(n):
            for o in range(co):
                for i in range(ho):
                    for j in range(wo):
                        expect[ni, o, i, j] = (xp[ni, :, i * s:i * s + k,
                                               j * s:j * s + k] * w[o]).sum() + b[o]
        worst_conv = max(worst_conv, float(np.abs(y.data - expect).max()))
    assert worst_conv < 1e-5

    worst_adj = 0.0
    done = 0
    trial = 0
    while done < 20:
        rng = np.random.default_rng(800 + trial)
        trial += 1
        ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k, s = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        p = int(rng.integers(0, k))
        ho = int(rng.integers(1, 6))
        h = (ho - 1) * s + k - 2 * p
        if h < 1:
            continue
        x = Tensor(rng.standard_normal((2, ci, h, h)).astype(np.float32))
        w = Tensor(rng.standard_normal((co, ci, k, k)).astype(np.float32))
        y = ops.conv2d(x, w, Tensor(np.zeros(co, np.float32)), s, p)
        g = Tensor(rng.standard_normal(y.shape).astype(np.float32))
        xt = ops.conv2d_transpose(g, w, Tensor(np.zeros(ci, np.float32)), s, p)
        lhs = float((y.data.astype(np.float64) * g.data).sum())
        rhs = float((x.data.astype(np.float64) * xt.data).sum())
        scale = float(np.linalg.norm(y.data) * np.linalg.norm(g.data)) + 1e-12
        worst_adj = max(worst_adj, abs(lhs - rhs) / scale)
        done += 1
    assert worst_adj < 1e-4

    for trial in range(20):
        rng = np.random.default_rng(900 + trial)
        x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
        y = ops.maxpool2x2(Tensor(x))
        for i in range(2):
            for j in range(2):
                assert y.data[0, 0, i, j] == x[0, 0, 2 * i:2 * i + 2,
                                               2 * j:2 * j + 2].max()
    announce("oracle suite", True,
             f"conv worst {worst_conv:.1e} (<1e-5), "
             f"adjoint worst {worst_adj:.1e} (<1e-4), maxpool exact")


# ---------------------------------------------------------------------------
# balance arithmetic
# ---------------------------------------------------------------------------

def test_balance_arithmetic():
    """Hospital counts with 1,000+1,000 reserves give target 30,196."""
    t0 = time.time()
    manifests = []
    for lbl in ClassLabel:
        recs = [ImageRecord(f"/x/{lbl.name}/{i}.png", lbl)
                for i in range(HOSPITAL_COUNTS[lbl])]
        manifests.append(ClassManifest(lbl, recs))
    splits = make_splits(manifests, SplitSpec(1000, 1000, seed=0))
    plan = plan_balance(splits.train, multiplier=2.0)
    expected_quotas = {
        ClassLabel.Cardiomegaly: 15098,
        ClassLabel.Normal: 16415,
        ClassLabel.PleuralEffusion: 17686,
        ClassLabel.PulmonaryEdema: 27178,
        ClassLabel.Pneumothorax: 28183,
    }
    ok = plan.target == 30196 and all(
        plan.quotas[lbl] == q for lbl, q in expected_quotas.items())
    announce("balance arithmetic", ok and time.time() - t0 < 10,
             f"target {plan.target}, quotas "
             + ", ".join(f"{l.name}={plan.quotas[l]}" for l in ClassLabel))


# ---------------------------------------------------------------------------
# classifier geometry
# ---------------------------------------------------------------------------

def test_classifier_geometry():
    cfg = ClassifierConfig.paper()
    assert cfg.feature_len == 4096
    rng = np.random.default_rng(0)
    params = init_classifier(cfg, rng)
    params["out.w"].data = np.zeros_like(params["out.w"].data)
    params["out.b"].data = np.zeros_like(params["out.b"].data)
    x = Tensor(rng.random((4, 1, 256, 256), dtype=np.float32))
    with no_grad():
        probs = classify_forward(x, params, cfg)
    labels = rng.integers(0, 5, 4)
    loss = ops.cross_entropy(Tensor(probs.data), labels)
    uniform_ok = bool(np.allclose(probs.data, 0.2, atol=1e-6))
    loss_ok = abs(loss.item() - math.log(5)) < 1e-3
    announce("classifier geometry", uniform_ok and loss_ok,
             f"feature_len 4096, probs uniform, first-batch loss "
             f"{loss.item():.5f} ~ ln5={math.log(5):.5f}")


# ---------------------------------------------------------------------------
# toy GAN equilibrium
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_toy_gan_equilibrium():
    """1-D GAN on N(3, 0.5): generated mean near 3, D near chance."""
    t0 = time.time()
    rng = np.random.default_rng(42)
    hidden, batch, lr = 16, 64, 1e-3

    def dense_params(k, m):
        w = Tensor((rng.standard_normal((k, m)) * 0.1).astype(np.float32),
                   requires_grad=True)
        b = Tensor(np.zeros(m, np.float32), requires_grad=True)
        return w, b

    gw1, gb1 = dense_params(2, hidden)
    gw2, gb2 = dense_params(hidden, 1)
    dw1, db1 = dense_params(1, hidden)
    dw2, db2 = dense_params(hidden, 1)
    d_params = [dw1, db1, dw2, db2]
    g_opt = Adam([gw1, gb1, gw2, gb2], beta1=0.5)
    d_opt = Adam(d_params, beta1=0.5)

    def G(z):
        return ops.dense(ops.relu(ops.dense(z, gw1, gb1)), gw2, gb2)

    def D(v):
        return ops.sigmoid(ops.dense(
            ops.leaky_relu(ops.dense(v, dw1, db1), 0.2), dw2, db2))

    for _ in range(2000):
        real = Tensor((3.0 + 0.5 * rng.standard_normal((batch, 1)))
                      .astype(np.float32))
        fake = G(Tensor(rng.uniform(-1, 1, (batch, 2)).astype(np.float32)))
        loss_d, _ = gan.gan_losses(D(real), D(fake.detach()))
        d_opt.zero_grad()
        loss_d.backward()
        d_opt.step(lr)
        for p in d_params:
            p.requires_grad = False
        loss_g = -(ops.log_clamped(D(fake)).mean())
        g_opt.zero_grad()
        loss_g.backward()
        g_opt.step(lr)
        for p in d_params:
            p.requires_grad = True

    with no_grad():
        gen = G(Tensor(rng.uniform(-1, 1, (1000, 2)).astype(np.float32))).data
        real_held = (3.0 + 0.5 * rng.standard_normal((1000, 1))).astype(np.float32)
        d_real = D(Tensor(real_held)).data
        d_fake = D(Tensor(gen)).data
    acc = 0.5 * ((d_real > 0.5).mean() + (d_fake <= 0.5).mean())
    elapsed = time.time() - t0
    mean_ok = abs(float(gen.mean()) - 3.0) < 0.5
    acc_ok = 0.40 <= acc <= 0.80
    announce("toy GAN equilibrium", mean_ok and acc_ok and elapsed < 180,
             f"generated mean {float(gen.mean()):.3f} (target 3.0+/-0.5), "
             f"held-out D accuracy {acc:.3f} in [0.40, 0.80], {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# desk-scale study
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_study(tmp_path_factory):
    work = tmp_path_factory.mktemp("desk_study")
    data_root = work / "data"
    t0 = time.time()
    generate_synthetic_desk_dataset(DESK_COUNTS, 64, 7, data_root)
    cfg = StudyConfig(dataset_root=str(data_root), run_dir=str(work / "run"),
                      seed=7, repeats=5, iterations=30, protocols="ds1,ds3")
    report = run_full_study(cfg, auto_accept=True, progress=lambda s: None)
    return cfg, report, time.time() - t0


@pytest.mark.slow
def test_desk_scale_study(desk_study):
    """DS3 beats DS1 overall and on the minority class by >=5 points."""
    cfg, report, elapsed = desk_study
    ds1_total, _ = report.total_mean_std("ds1")
    ds3_total, _ = report.total_mean_std("ds3")
    minority = ClassLabel.Pneumothorax
    gaps = [a3.per_class[minority] - a1.per_class[minority]
            for a1, a3 in zip(report.per_class["ds1"], report.per_class["ds3"])]
    median_gap = float(np.median(gaps))
    total_ok = ds3_total > ds1_total
    gap_ok = median_gap >= 5.0
    time_ok = elapsed <= 30 * 60
    announce("desk-scale study", total_ok and gap_ok and time_ok,
             f"total DS1 {ds1_total:.2f} -> DS3 {ds3_total:.2f}; "
             f"minority median gap {median_gap:+.1f} (>=5); "
             f"wall {elapsed / 60:.1f} min (<=30)")


# ---------------------------------------------------------------------------
# determinism and formats
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_determinism_and_formats(tmp_path):
    # GBCK bit-identical round trip
    rng = np.random.default_rng(0)
    tensors = {f"t{i}": rng.standard_normal((3, 4)).astype(np.float32)
               for i in range(5)}
    p1 = tmp_path / "a.gbck"
    save_checkpoint(p1, tensors)
    loaded = load_checkpoint(p1)
    p2 = tmp_path / "b.gbck"
    save_checkpoint(p2, loaded)
    ckpt_ok = p1.read_bytes() == p2.read_bytes()

    # verdict-log replay reconstructs the store exactly
    store = CurationStore(tmp_path / "store")
    store.enqueue([GeneratedSample(f"Normal-g-{i:04d}", "Normal",
                                   f"/s/{i}.png", "g", float(i), f"c{i}")
                   for i in range(30)])
    ids = [s.id for s in store.list_pending()]
    for sid in ids[::2]:
        store.post_verdict(sid, "accept", "r1")
    for sid in ids[1::4]:
        store.post_verdict(sid, "reject", "r2")
    replayed = CurationStore(tmp_path / "store")
    replay_ok = (replayed.stats() == store.stats()
                 and replayed.samples == store.samples
                 and replayed.verdicts == store.verdicts)

    # a reduced same-seed study twice -> bit-identical CSV outputs
    data_root = tmp_path / "data"
    generate_synthetic_desk_dataset({lbl: 40 for lbl in ClassLabel}, 64, 3,
                                    data_root)

    def tiny_study(run_dir):
        cfg = StudyConfig(dataset_root=str(data_root), run_dir=str(run_dir),
                          seed=11, repeats=2, iterations=2, protocols="ds1,ds3",
                          val_reserve=5, test_reserve=5, multiplier=1.0,
                          gan_iterations=2, gan_train_per_class=20,
                          batch_size=64)
        run_full_study(cfg, auto_accept=True, progress=lambda s: None)
        return {f.name: f.read_bytes()
                for f in sorted(Path(run_dir).glob("*.csv"))}

    out_a = tiny_study(tmp_path / "runA")
    out_b = tiny_study(tmp_path / "runB")
    study_ok = out_a.keys() == out_b.keys() and all(
        out_a[k] == out_b[k] for k in out_a)
    announce("determinism & formats", ckpt_ok and replay_ok and study_ok,
             f"GBCK round-trip {'bit-identical' if ckpt_ok else 'DIFFERS'}; "
             f"verdict replay {'exact' if replay_ok else 'DIFFERS'}; "
             f"study CSVs {'bit-identical' if study_ok else 'DIFFER'}")
