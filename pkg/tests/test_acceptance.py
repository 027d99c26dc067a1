"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavier criteria share module-scope training runs (tiny DCCNN, 64x64
phantoms, 4x acceleration) so the whole file stays well inside a CPU-minutes
budget.
"""

import numpy as np
import pytest

from marec import autodiff as ad
from marec import fourier, kspace, metrics, models, train
from marec.config import ExperimentConfig
from marec.models import DccnnConfig
from marec.optim import Adam

from test_autodiff import check_op
from test_fourier import naive_dft2c
from test_metrics import brute_force_ssim

ANATS = ("knee", "brain", "cardiac")


def report(capsys, n, ok, desc, detail=""):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {desc}"
    if detail:
        line += f" [{detail}]"
    with capsys.disabled():
        print(line)
    assert ok, line


# -- shared training runs ----------------------------------------------------


def _seeded(seed, **kw):
    base = dict(
        regime="maon", epochs=12, slices_per_anatomy=32, extent=64,
        acceleration=4, eval_every=12,
        data_seed=100 + seed, init_seed=200 + seed,
        mask_seed=300 + seed, shuffle_seed=400 + seed,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def paired_runs(tmp_path_factory):
    """Per seed: a trained maon run, then mapn+pn4 warm-started from it."""
    root = tmp_path_factory.mktemp("acc")
    out = []
    for seed in range(3):
        maon_cfg = _seeded(seed, output_root=str(root))
        maon_dir = train.run_regime(maon_cfg, run_dir=root / f"maon{seed}", quiet=True)
        maon_tr = train.Trainer(maon_cfg)
        arrays, _ = models.load_checkpoint(maon_dir / "final.npz")
        models.restore_model(maon_tr.model, arrays)
        maon_scores = maon_tr.evaluate("val")

        mapn_cfg = _seeded(seed, regime="mapn", pn_kind="pn4", epochs=8,
                           warmup_epochs=2, warm_start=str(maon_dir / "final.npz"),
                           output_root=str(root))
        mapn_tr = train.Trainer(mapn_cfg)
        for _ in range(mapn_cfg.epochs):
            mapn_tr.train_epoch()
        mapn_scores = mapn_tr.evaluate("val")
        out.append({"seed": seed, "maon_dir": maon_dir, "maon_cfg": maon_cfg,
                    "maon": maon_scores, "mapn": mapn_scores,
                    "mapn_model": mapn_tr.model})
    return out


# -- criteria ----------------------------------------------------------------


def test_criterion_1_dc_exactness(capsys):
    """100 random-weight forward passes at 4x and 6x: sampled k-space columns
    reproduce the measurements to 1e-9 relative."""
    cfg = models.desk_dccnn_config()
    worst = 0.0
    for trial in range(100):
        accel = 4 if trial % 2 == 0 else 6
        m = models.build_model("dccnn", "pn0", list(ANATS), cfg, seed=trial)
        rng = np.random.default_rng(trial)
        img = kspace.ComplexImage.from_real(rng.standard_normal((64, 64)))
        mask = kspace.make_cartesian_mask(64, accel, 0.08 if accel == 4 else 0.06, trial)
        meas = kspace.undersample(img, mask)
        rec = m.reconstruct(meas, mask, m.registry.anatomies[0])
        rec_k = fourier.fft2c(rec.to_complex())
        want = meas.to_complex()[:, mask.columns]
        rel = np.abs(rec_k[:, mask.columns] - want).max() / np.abs(want).max()
        worst = max(worst, rel)
    report(capsys, 1, worst <= 1e-9, "data consistency exact at sampled columns",
           f"worst rel err {worst:.2e} over 100 passes")


def test_criterion_2_gradient_fidelity(capsys):
    """Central finite differences on every differentiable operator."""
    cases = {
        "add/mul": (lambda ts: (ts[0] + ts[1] * ts[0]).sum(), [(3, 4), (1, 4)]),
        "power": (lambda ts: ad.tsum(ad.power(ts[0] * ts[0] + ad.Tensor(1.0), 1.5)), [(4, 3)]),
        "mean": (lambda ts: ad.tsum(ad.tmean(ts[0], axis=(0, 2), keepdims=True) * ts[0]), [(2, 3, 4)]),
        "reshape": (lambda ts: ad.tsum(ad.tabs(ad.reshape(ts[0], (8,)))), [(2, 4)]),
        "concat": (lambda ts: ad.tsum(ad.tabs(ad.concat([ts[0], ts[1]]))), [(1, 2, 3, 3), (1, 1, 3, 3)]),
        "sigmoid": (lambda ts: ad.tsum(ad.sigmoid(ts[0])), [(3, 4)]),
        "conv2d": (lambda ts: ad.tsum(ad.tabs(ad.conv2d(ts[0], ts[1], ts[2], padding=1))),
                   [(2, 3, 6, 6), (4, 3, 3, 3), (4,)]),
        "conv1x1": (lambda ts: ad.tsum(ad.tabs(ad.conv2d(ts[0], ts[1]))),
                    [(2, 4, 5, 5), (3, 4, 1, 1)]),
        "conv_T": (lambda ts: ad.tsum(ad.tabs(ad.conv2d_transpose(ts[0], ts[1], ts[2]))),
                   [(2, 3, 4, 4), (3, 2, 2, 2), (2,)]),
        "dense": (lambda ts: ad.tsum(ad.tabs(ad.dense(ts[0], ts[1], ts[2]))),
                  [(3, 4), (2, 4), (2,)]),
        "gap": (lambda ts: ad.tsum(ad.global_avg_pool(ts[0] * ts[0])), [(2, 3, 4, 4)]),
        "batchnorm": (lambda ts: ad.tsum(ad.tabs(
            ad.batchnorm(ts[0], ts[1], ts[2], np.zeros(3), np.ones(3), "train"))),
            [(4, 3, 5, 5), (3,), (3,)]),
        "l1": (lambda ts: ad.l1_loss(ts[0], ad.Tensor(np.full((3, 3), 10.0))), [(3, 3)]),
        "fft": (lambda ts: ad.tsum(ad.mul(kspace.fft2_op(ts[0]),
                                          ad.Tensor(np.arange(128.0).reshape(1, 2, 8, 8)))),
                [(1, 2, 8, 8)]),
        "dc": (lambda ts: ad.tsum(ad.tabs(kspace.dc_op(
            ts[0], ts[1], kspace.make_cartesian_mask(8, 2, 0.1, 0)))),
            [(1, 2, 8, 8), (1, 2, 8, 8)]),
    }
    failed = []
    for name, (build, shapes) in cases.items():
        try:
            check_op(build, shapes, seed=hash(name) % 1000, rtol=1e-4)
        except AssertionError as e:
            failed.append(f"{name}: {e}")
    report(capsys, 2, not failed, "finite-difference checks on every operator",
           f"{len(cases)} ops" + ("; FAILED " + "; ".join(failed) if failed else ""))


def test_criterion_3_fourier(capsys):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    rt = np.abs(fourier.ifft2c(fourier.fft2c(a)) - a).max()
    energy = np.sum(np.abs(a) ** 2)
    pv = abs(np.sum(np.abs(fourier.fft2c(a)) ** 2) - energy) / energy
    b = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    oracle = np.abs(fourier.fft2c(b) - naive_dft2c(b)).max()
    ok = rt <= 1e-10 and pv <= 1e-10 and oracle <= 1e-10
    report(capsys, 3, ok, "FFT roundtrip, Parseval, naive DFT oracle",
           f"roundtrip {rt:.1e}, parseval {pv:.1e}, oracle {oracle:.1e}")


def test_criterion_4_metric_oracles(capsys):
    rng = np.random.default_rng(1)
    t = rng.uniform(0, 1, (64, 64))
    t[0, 0], t[0, 1] = 0.0, 1.0
    p_err = abs(metrics.psnr(t + 0.1, t) - 20.0)
    s_self = metrics.ssim(t, t)
    c = rng.uniform(0, 1, (16, 16))
    c[0, 0], c[0, 1] = 0.0, 1.0
    r = np.clip(c + 0.1 * rng.standard_normal((16, 16)), 0, 1)
    r[0, 0], r[0, 1] = 0.0, 1.0
    s_err = abs(metrics.ssim(r, c) - brute_force_ssim(r, c))
    ok = p_err <= 0.01 and s_self == 1.0 and s_err <= 1e-9
    report(capsys, 4, ok, "PSNR offset oracle, SSIM self/brute-force oracle",
           f"psnr err {p_err:.4f} dB, ssim(a,a) {s_self}, ssim oracle err {s_err:.1e}")


def test_criterion_5_parameter_accounting(capsys):
    cfg = DccnnConfig()  # published widths: 5 cascades x 5 blocks x 64 channels
    rows = {(r["fashion"], r["model"]): r for r in metrics.count_report(cfg)}
    published = {
        ("maon", "dccnn"): 569640,
        ("mapn", "dccnn+pn1"): 579960,
        ("mapn", "dccnn+pn2"): 825780,
        ("mapn", "dccnn+pn3"): 833520,
        ("mapn", "dccnn+pn4"): 768120,
        ("maon", "dccnn+pn4"): 757800,
    }
    misses = []
    for key, want in published.items():
        got = rows[key]["sum"]
        if abs(got - want) / want > 0.05:
            misses.append(f"{key[1]}: {got} vs {want}")
    oaon = rows[("oaon", "dccnn")]["sum"]
    pn4 = rows[("mapn", "dccnn+pn4")]["sum"]
    halved = oaon == 1708920 and pn4 < 0.5 * oaon
    # count_report itself raises if the closed form disagrees with a built
    # model's census, so reaching this point certifies the oracle agreement
    ok = not misses and halved
    report(capsys, 5, ok, "parameter accounting within 5% of published totals",
           f"pn4 {pn4} < 50% of oaon {oaon}" + ("; off: " + "; ".join(misses) if misses else ""))


def test_criterion_6_isolation_and_warmup(capsys, paired_runs, tmp_path):
    """200 instrumented mapn steps: inactive-anatomy isolation at every step,
    shared 3x3 convs bitwise frozen during warm-up, step-0 equivalence."""
    maon_dir = paired_runs[0]["maon_dir"]
    maon_cfg = paired_runs[0]["maon_cfg"]
    cfg = _seeded(0, regime="mapn", pn_kind="pn4", epochs=12, warmup_epochs=6,
                  warm_start=str(maon_dir / "final.npz"), output_root=str(tmp_path))
    tr = train.Trainer(cfg)

    base = train.build_model_from_config(maon_cfg)
    arrays, _ = models.load_checkpoint(maon_dir / "final.npz")
    models.restore_model(base, arrays)
    e = tr._cache["cardiac"][0]
    mask = tr.masks[("cardiac", "train")]
    meas = kspace.undersample(e["slice"].image, mask)
    step0 = np.abs(
        tr.model.reconstruct(meas, mask, e["slice"].anatomy).magnitude()
        - base.reconstruct(meas, mask, e["slice"].anatomy).magnitude()
    ).max()

    frozen_before = {n: tr.registry.shared[n].data.copy() for n in tr.frozen}
    steps = 0
    isolation_ok = True
    frozen_ok = True
    while steps < 200:
        plan = tr.epoch_plan(tr.epoch)
        in_warmup = tr.epoch < cfg.warmup_epochs
        for anat_idx, indices in plan.batches:
            snap = [{n: t.data.copy() for n, t in d.items()}
                    for i, d in enumerate(tr.registry.specific) if i != anat_idx]
            others = [i for i in range(3) if i != anat_idx]
            meas_b, target = tr._batch_arrays(anat_idx, indices)
            tr.train_step(anat_idx, meas_b, target)
            for snap_d, idx in zip(snap, others):
                for n, t in tr.registry.specific[idx].items():
                    if not np.array_equal(t.data, snap_d[n]):
                        isolation_ok = False
            if in_warmup:
                for n in tr.frozen:
                    if not np.array_equal(tr.registry.shared[n].data, frozen_before[n]):
                        frozen_ok = False
            steps += 1
            if steps >= 200:
                break
        tr.epoch += 1
    ok = isolation_ok and frozen_ok and step0 <= 1e-10
    report(capsys, 6, ok, "anatomy isolation, warm-up freeze, step-0 equivalence",
           f"200 steps, step-0 max diff {step0:.1e}, "
           f"isolation {isolation_ok}, freeze {frozen_ok}")


def test_criterion_7_mapn_beats_maon(capsys, paired_runs):
    """3-seed average: mapn+pn4 mean PSNR >= maon, and per-anatomy in >=2/3."""
    maon_mean = np.mean([[r["maon"][a]["psnr"] for a in ANATS] for r in paired_runs])
    mapn_mean = np.mean([[r["mapn"][a]["psnr"] for a in ANATS] for r in paired_runs])
    per_anat = {}
    for a in ANATS:
        d = np.mean([r["mapn"][a]["psnr"] - r["maon"][a]["psnr"] for r in paired_runs])
        per_anat[a] = d
    wins = sum(1 for d in per_anat.values() if d >= 0)
    ok = mapn_mean >= maon_mean and wins >= 2
    detail = (f"mean {mapn_mean:.2f} vs {maon_mean:.2f} dB; " +
              ", ".join(f"{a} {d:+.2f}" for a, d in per_anat.items()))
    report(capsys, 7, ok, "mapn+pn4 directional gain over maon (3 seeds)", detail)


def test_criterion_8_learning_sanity(capsys, tmp_path):
    # (a) trained expert beats zero-filled by >= 3 dB on held-out phantoms
    cfg = ExperimentConfig(regime="oaon", anatomies=("cardiac",), epochs=12,
                           slices_per_anatomy=32, eval_every=12,
                           output_root=str(tmp_path))
    zf = train.zero_filled_scores(cfg)["cardiac"]["psnr"]
    d = train.run_regime(cfg, run_dir=tmp_path / "oa", quiet=True)
    tr = train.Trainer(cfg)
    arrays, _ = models.load_checkpoint(d / "best.npz")
    models.restore_model(tr.model, arrays)
    trained = tr.evaluate("val")["cardiac"]["psnr"]
    margin = trained - zf

    # (b) unet single-sample overfit: L1 below 10% of initial within 200 steps
    from marec import data as data_mod
    m = models.build_model("unet", "pn0", ["knee"], models.desk_unet_config(), seed=0)
    s = data_mod.make_dataset(["knee"], 1, 64, 64, seed=0, val_fraction=0.0)["knee"][0]
    mask = kspace.make_cartesian_mask(64, 4, 0.08, 0)
    meas = kspace.undersample(s.image, mask)
    x = ad.Tensor(np.stack([kspace.zero_filled(meas, mask).real,
                            kspace.zero_filled(meas, mask).imag])[None])
    tgt = ad.Tensor(np.stack([s.image.real, s.image.imag])[None])
    opt = Adam(lr=0.01)
    init = ad.l1_loss(m.forward(x, "train"), tgt).item()
    final = init
    for _ in range(200):
        loss = ad.l1_loss(m.forward(x, "train"), tgt)
        m.registry.zero_grad()
        loss.backward()
        opt.step(m.registry.shared)
        opt.step(m.registry.specific[0])
        final = loss.item()
        if final < 0.1 * init:
            break
    ok = margin >= 3.0 and final < 0.1 * init
    report(capsys, 8, ok, "trained net beats zero-filled >=3dB; unet overfits",
           f"margin {margin:+.2f} dB ({trained:.2f} vs zf {zf:.2f}); "
           f"unet L1 {init:.3f} -> {final:.3f}")


def test_criterion_9_anatomy_sensitive_learners(capsys, paired_runs):
    """After the criterion-7 runs: per-anatomy 1x1 adapter means separate
    pairwise in at least one block, and BN affine means differ."""
    ok_all = True
    details = []
    for r in paired_runs:
        rows = metrics.learner_weight_summary(r["mapn_model"])
        by_block = {}
        for row in rows:
            if row["learner"] == "conv1x1":
                by_block.setdefault(row["block"], {})[row["anatomy"]] = row["mean_weight"]
        best = 0.0
        for block, means in by_block.items():
            vals = list(means.values())
            for i in range(len(vals)):
                for j in range(i + 1, len(vals)):
                    best = max(best, abs(vals[i] - vals[j]))
        gammas = {}
        for row in rows:
            if row["learner"] == "bn_gamma":
                gammas.setdefault(row["anatomy"], []).append(row["mean_weight"])
        gmeans = [np.mean(v) for v in gammas.values()]
        bn_sep = max(abs(a - b) for i, a in enumerate(gmeans) for b in gmeans[i + 1:])
        ok = best > 1e-3 and bn_sep > 0
        ok_all = ok_all and ok
        details.append(f"seed{r['seed']}: adapter sep {best:.2e}, bn sep {bn_sep:.2e}")
    report(capsys, 9, ok_all, "learner weights are anatomy-sensitive", "; ".join(details))


def test_criterion_10_reproducibility(capsys, tmp_path):
    def cfg():
        return ExperimentConfig(regime="maon", epochs=3, slices_per_anatomy=8,
                                eval_every=1, output_root=str(tmp_path))

    assert cfg().hash() == cfg().hash()
    d1 = train.run_regime(cfg(), run_dir=tmp_path / "r1", quiet=True)
    d2 = train.run_regime(cfg(), run_dir=tmp_path / "r2", quiet=True)
    same_metrics = (d1 / "metrics.csv").read_text() == (d2 / "metrics.csv").read_text()

    train.run_regime(ExperimentConfig(regime="maon", epochs=1, slices_per_anatomy=8,
                                      eval_every=1, output_root=str(tmp_path)),
                     run_dir=tmp_path / "r3", quiet=True)
    train.run_regime(cfg(), run_dir=tmp_path / "r3", resume=True, quiet=True)
    a, _ = models.load_checkpoint(d1 / "final.npz")
    b, _ = models.load_checkpoint(tmp_path / "r3" / "final.npz")
    resume_ok = set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)
    metrics_ok = ((d1 / "metrics.csv").read_text()
                  == (tmp_path / "r3" / "metrics.csv").read_text())
    ok = same_metrics and resume_ok and metrics_ok
    report(capsys, 10, ok, "bitwise reproducibility and resume equivalence",
           f"identical metrics {same_metrics}, resume params {resume_ok}, "
           f"resume metrics {metrics_ok}")
