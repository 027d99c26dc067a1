"""Model assembly: shape contracts, DC exactness, neutrality, checkpoints."""

import numpy as np
import pytest

from marec import autodiff as ad
from marec import fourier, kspace, models
from marec.errors import ConfigurationError, DataError

LABELS = ["knee", "brain", "cardiac"]


def tiny_cfg():
    return models.DccnnConfig(cascades=2, blocks_per_subcnn=2, channels=4)


def random_measurement(H=16, W=16, accel=4, seed=0):
    rng = np.random.default_rng(seed)
    img = kspace.ComplexImage.from_real(rng.standard_normal((H, W)))
    mask = kspace.make_cartesian_mask(W, accel, 0.08, seed)
    return img, mask, kspace.undersample(img, mask)


def test_dccnn_shape_contract():
    m = models.build_model("dccnn", "pn1", LABELS, tiny_cfg(), seed=1)
    img, mask, meas = random_measurement()
    out = m.reconstruct(meas, mask, m.registry.anatomies[0])
    assert out.shape == img.shape
    assert out.domain == kspace.IMAGE


@pytest.mark.parametrize("accel", [4, 6])
def test_dc_exactness(accel):
    """Reconstructed k-space equals measurements at every sampled column."""
    for trial in range(10):
        m = models.build_model("dccnn", "pn0", LABELS, tiny_cfg(), seed=trial)
        img, mask, meas = random_measurement(32, 32, accel, seed=trial)
        rec = m.reconstruct(meas, mask, m.registry.anatomies[0])
        rec_k = fourier.fft2c(rec.to_complex())
        got = rec_k[:, mask.columns]
        want = meas.to_complex()[:, mask.columns]
        rel = np.abs(got - want).max() / max(np.abs(want).max(), 1e-30)
        assert rel <= 1e-9


def test_zero_weights_reproduce_zero_filled():
    """All-zero sub-CNN convs and identity BN make the cascade a no-op: the
    output is exactly the zero-filled reconstruction."""
    m = models.build_model("dccnn", "pn0", LABELS, tiny_cfg(), seed=2)
    for name, t in m.registry.shared.items():
        if name.endswith(".conv.w"):
            t.data[...] = 0.0
        if name.endswith(".beta"):
            t.data[...] = 0.0
    img, mask, meas = random_measurement(16, 16)
    rec = m.reconstruct(meas, mask, m.registry.anatomies[0])
    zf = kspace.zero_filled(meas, mask)
    assert np.abs(rec.to_complex() - zf.to_complex()).max() <= 1e-9


def test_unet_shape_and_grads():
    m = models.build_model("unet", "pn1", LABELS, models.UNetConfig(levels=2, base_channels=4), seed=3)
    x = ad.Tensor(np.random.default_rng(4).standard_normal((2, 2, 16, 16)), requires_grad=False)
    out = m.forward(x, "train")
    assert out.data.shape == (2, 2, 16, 16)
    loss = ad.l1_loss(out, ad.Tensor(np.zeros_like(out.data)))
    loss.backward()
    assert m.registry.shared["out.conv.w"].grad is not None
    assert m.registry.specific[0]["enc0.blk0.bn.gamma"].grad is not None


def test_unet_rejects_indivisible_extent():
    m = models.build_model("unet", "pn0", LABELS, models.UNetConfig(levels=3, base_channels=4), seed=5)
    with pytest.raises(ConfigurationError):
        m.forward(ad.Tensor(np.zeros((1, 2, 12, 12))), "eval")


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    m = models.build_model("dccnn", "pn4", LABELS, tiny_cfg(), seed=6)
    # move some state so the roundtrip is not trivially at init
    m.registry.specific[1]["casc0.blk0.bn.beta"].data += 0.5
    m.registry.specific_buffers[2]["casc1.blk1.bn.mean"][...] = 7.0
    path = tmp_path / "ck.npz"
    models.save_checkpoint(path, m, {"note": 1})
    arrays, meta = models.load_checkpoint(path)
    assert meta == {"note": 1}
    m2 = models.build_model("dccnn", "pn4", LABELS, tiny_cfg(), seed=99)
    models.restore_model(m2, arrays)
    for (tag, name, t), (tag2, name2, t2) in zip(m.registry.all_params(),
                                                 m2.registry.all_params()):
        assert (tag, name) == (tag2, name2)
        assert np.array_equal(t.data, t2.data), name
    assert m2.registry.specific_buffers[2]["casc1.blk1.bn.mean"][0] == 7.0


def test_restore_rejects_missing_and_misshaped(tmp_path):
    m = models.build_model("dccnn", "pn1", LABELS, tiny_cfg(), seed=7)
    arrays = models.checkpoint_arrays(m)
    bad = dict(arrays)
    bad.pop("shared|casc0.blk0.conv.w")
    with pytest.raises(DataError):
        models.restore_model(m, bad)
    bad = dict(arrays)
    bad["shared|casc0.blk0.conv.w"] = np.zeros((1, 1, 3, 3))
    with pytest.raises(DataError):
        models.restore_model(m, bad)


def test_warm_start_step0_equivalence():
    """A pn4 model warm-started from a pn0 checkpoint computes the same
    function (adapters start at zero, BN replicated per anatomy)."""
    base = models.build_model("dccnn", "pn0", LABELS, tiny_cfg(), seed=8)
    arrays = models.checkpoint_arrays(base)
    for pn in ("pn1", "pn3", "pn4"):
        m = models.build_model("dccnn", pn, LABELS, tiny_cfg(), seed=9)
        models.warm_start_from_shared(m, arrays)
        img, mask, meas = random_measurement(16, 16, seed=10)
        for anat in m.registry.anatomies:
            r1 = m.reconstruct(meas, mask, anat).to_complex()
            r0 = base.reconstruct(meas, mask, base.registry.anatomies[0]).to_complex()
            assert np.abs(r1 - r0).max() <= 1e-10, pn


def test_paper_scale_counts():
    """Registry census at published widths matches the closed-form oracle."""
    from marec.metrics import dccnn_count_oracle
    cfg = models.DccnnConfig()  # 5 cascades x 5 blocks x 64 channels
    for pn in ("pn0", "pn1", "pn2", "pn3", "pn4", "pn4_shared"):
        m = models.build_model("dccnn", pn, LABELS, cfg, seed=0)
        rep = m.registry.partition_report()
        sh, sp, tot = dccnn_count_oracle(cfg, pn, 3)
        assert (rep["shared_count"], rep["specific_count_per_anatomy"]) == (sh, sp), pn


def test_soft_dc_mode_runs_and_learns_lambda():
    cfg = models.DccnnConfig(cascades=1, blocks_per_subcnn=2, channels=4, dc_mode="soft")
    m = models.build_model("dccnn", "pn0", LABELS, cfg, seed=11)
    img, mask, meas = random_measurement(16, 16)
    st = ad.Tensor(np.stack([meas.real, meas.imag])[None])
    out = m.forward_kspace(st, mask, "train")
    ad.tsum(ad.tabs(out)).backward()
    assert m.registry.shared["dc.lam"].grad is not None


def test_build_model_rejects_unknown_kinds():
    with pytest.raises(ConfigurationError):
        models.build_model("mlp", "pn0", LABELS)
    with pytest.raises(ConfigurationError):
        models.build_model("dccnn", "pn9", LABELS, tiny_cfg())
