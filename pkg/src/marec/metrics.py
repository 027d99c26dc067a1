"""Reconstruction quality metrics and parameter accounting.

PSNR and SSIM are computed on magnitude images after rescaling BOTH images to
[0, 1] by the target's min/max; the convention is fixed here so deltas between
runs are comparable. SSIM uses the standard 11x11 gaussian window (sigma 1.5),
K1=0.01, K2=0.03, valid-region averaging.
"""

import numpy as np

from .errors import ConfigurationError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def rescale_pair(recon, target):
    """Map both magnitudes to [0,1] using the target's range."""
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.shape != target.shape:
        raise ConfigurationError("metric inputs must share a shape")
    lo, hi = target.min(), target.max()
    if hi <= lo:
        raise ConfigurationError("constant target has no dynamic range")
    return (recon - lo) / (hi - lo), (target - lo) / (hi - lo)


def psnr(recon, target):
    """Peak signal-to-noise ratio in dB on range-normalized magnitudes."""
    r, t = rescale_pair(recon, target)
    mse = np.mean((r - t) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter2_valid(img, g):
    """Separable 'valid' correlation with a 1-D window g along both axes."""
    n = g.size
    H, W = img.shape
    rows = np.zeros((H, W - n + 1))
    for k in range(n):
        rows += g[k] * img[:, k : k + W - n + 1]
    out = np.zeros((H - n + 1, W - n + 1))
    for k in range(n):
        out += g[k] * rows[k : k + H - n + 1, :]
    return out


def ssim(recon, target, window=SSIM_WINDOW, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2):
    """Mean structural similarity on range-normalized magnitudes."""
    r, t = rescale_pair(recon, target)
    if min(r.shape) < window:
        raise ConfigurationError(f"image smaller than the {window}x{window} SSIM window")
    g = _gaussian_window(window, sigma)
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    mu_r = _filter2_valid(r, g)
    mu_t = _filter2_valid(t, g)
    var_r = _filter2_valid(r * r, g) - mu_r**2
    var_t = _filter2_valid(t * t, g) - mu_t**2
    cov = _filter2_valid(r * t, g) - mu_r * mu_t
    num = (2 * mu_r * mu_t + c1) * (2 * cov + c2)
    den = (mu_r**2 + mu_t**2 + c1) * (var_r + var_t + c2)
    return float(np.mean(num / den))


def error_map(recon, target, clip=0.1):
    """|recon - target| on range-normalized magnitudes, clipped at `clip`."""
    r, t = rescale_pair(recon, target)
    return np.minimum(np.abs(r - t), clip)


# -- learned-parameter summaries -------------------------------------------


def learner_weight_summary(model):
    """Rows (block, anatomy, learner kind, mean weight) for every
    anatomy-specific learner in the model. Empty for all-shared models."""
    reg = model.registry
    rows = []
    if not reg.specific or not reg.specific[0]:
        return rows
    for anat, params in zip(reg.anatomies, reg.specific):
        for name in sorted(params):
            block, _, leaf = name.rpartition(".")
            if name.endswith(".gamma"):
                kind = "bn_gamma"
            elif name.endswith(".beta"):
                kind = "bn_beta"
            elif ".adapt." in name:
                kind = "conv1x1"
            elif ".se." in name:
                kind = "se_dense"
            else:
                kind = leaf
            block = block.rsplit(".", 1)[0] if kind != leaf else block
            rows.append({
                "block": block,
                "anatomy": anat.label,
                "learner": kind,
                "mean_weight": float(params[name].data.mean()),
            })
    return rows


# -- parameter accounting ---------------------------------------------------
#
# Closed-form layerwise formulas for the cascaded network. Conventions that
# the built models follow exactly: 3x3 convs carry no bias (normalization
# supplies the shift); a BN layer carries 4 values per channel (gamma, beta,
# running mean, running variance); squeeze/excite dense layers and 1x1
# adapters carry no bias.


def _dccnn_channel_seq(cfg):
    seq = []
    for bi in range(cfg.blocks_per_subcnn):
        cin = 2 if bi == 0 else cfg.channels
        cout = 2 if bi == cfg.blocks_per_subcnn - 1 else cfg.channels
        seq.append((cin, cout))
    return seq


def dccnn_shared_conv_params(cfg):
    return cfg.cascades * sum(9 * ci * co for ci, co in _dccnn_channel_seq(cfg))


def dccnn_bn_params(cfg):
    return cfg.cascades * sum(4 * co for _, co in _dccnn_channel_seq(cfg))


def dccnn_specific_params(cfg, pn_kind, se_reduction=2):
    bn = dccnn_bn_params(cfg)
    seq = _dccnn_channel_seq(cfg)
    if pn_kind == "pn0":
        return 0
    if pn_kind == "pn1":
        return bn
    if pn_kind == "pn2":
        se = cfg.cascades * sum(2 * co * max(1, co // se_reduction) for _, co in seq)
        return bn + se
    if pn_kind == "pn3":
        return bn + cfg.cascades * sum(co * co for _, co in seq)
    if pn_kind == "pn4":
        return bn + cfg.cascades * sum(ci * co for ci, co in seq)
    raise ConfigurationError(f"no specific-parameter formula for {pn_kind}")


def dccnn_count_oracle(cfg, pn_kind, n_anatomies=3):
    """(shared, specific per anatomy, n-anatomy total) by closed form."""
    conv = dccnn_shared_conv_params(cfg)
    bn = dccnn_bn_params(cfg)
    if pn_kind == "pn0":
        return conv + bn, 0, conv + bn
    if pn_kind == "pn4_shared":
        par = 3 * cfg.cascades * sum(ci * co for ci, co in _dccnn_channel_seq(cfg))
        return conv + par + bn, 0, conv + par + bn
    spec = dccnn_specific_params(cfg, pn_kind)
    return conv, spec, conv + n_anatomies * spec


def count_report(cfg=None, n_anatomies=3):
    """Table of parameter counts per (learning fashion, pn kind), verified
    against a freshly built model's registry census."""
    from .models import DccnnConfig, build_model

    cfg = cfg or DccnnConfig()
    labels = [f"anat{i}" for i in range(n_anatomies)]
    rows = []

    def census(pn_kind):
        m = build_model("dccnn", pn_kind, labels, cfg, seed=0)
        return m.registry.partition_report()

    def add(fashion, model_name, pn_kind, shared, spec, total):
        rep = census(pn_kind)
        expect = {"shared_count": shared, "specific_count_per_anatomy": spec,
                  "total": shared + n_anatomies * spec if fashion == "mapn" else total}
        if fashion != "oaon" and (rep["shared_count"] != shared or
                                  rep["specific_count_per_anatomy"] != spec):
            raise ConfigurationError(
                f"count oracle disagrees with registry census for {model_name}: "
                f"{rep} vs {expect}"
            )
        rows.append({"fashion": fashion, "model": model_name,
                     "shared": shared, "specific_per_anatomy": spec, "sum": total})

    base_sh, _, base_total = dccnn_count_oracle(cfg, "pn0", n_anatomies)
    # one expert network per anatomy: all parameters are anatomy-specific
    rows.append({"fashion": "oaon", "model": "dccnn", "shared": 0,
                 "specific_per_anatomy": base_total, "sum": n_anatomies * base_total})
    add("maon", "dccnn", "pn0", base_sh, 0, base_total)
    sh, sp, tot = dccnn_count_oracle(cfg, "pn4_shared", n_anatomies)
    add("maon", "dccnn+pn4", "pn4_shared", sh, sp, tot)
    for pk in ("pn1", "pn2", "pn3", "pn4"):
        sh, sp, tot = dccnn_count_oracle(cfg, pk, n_anatomies)
        add("mapn", f"dccnn+{pk}", pk, sh, sp, tot)
    return rows
