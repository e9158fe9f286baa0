"""Joint multi-modal VAE over two feature modalities.

Three encoders (joint, x-only, w-only) share one latent space; two decoders
map a latent point back to each modality. The training objective is the
negative ELBO of the joint encoder plus ``alpha_vi``-weighted
KL(q(z|x,w) || q(z|x)) and KL(q(z|x,w) || q(z|w)) terms that pull the
uni-modal encoders toward the joint one. Reconstruction is a unit-variance
Gaussian likelihood (half squared error, constants dropped).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from .nnkit import (
    DenseNet,
    DiagGaussian,
    RngStream,
    adam_init,
    adam_step,
    gauss_head,
    init_dense,
    net_apply,
    net_backward,
    net_forward,
)

log = logging.getLogger(__name__)

MODALITIES = ("x", "w")
NET_NAMES = ("enc_joint", "enc_x", "enc_w", "dec_x", "dec_w")
INPUT_MODES = ("joint", "x-only", "w-only")


def check_modality(modality: str) -> str:
    if modality not in MODALITIES:
        raise ValueError(f"modality must be 'x' or 'w', got {modality!r}")
    return modality


def other_modality(modality: str) -> str:
    return "w" if check_modality(modality) == "x" else "x"


class TrainingDiverged(RuntimeError):
    history: list = []


@dataclass
class JmvaeConfig:
    d_x: int = 8
    d_w: int = 8
    d_z: int = 2
    hidden: int = 64
    alpha_vi: float = 0.1
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.001
    dataset_size: int = 3000

    def __post_init__(self):
        if self.d_z < 1:
            raise ValueError("d_z must be >= 1")
        if self.d_x != self.d_w:
            raise ValueError("both modalities must share one feature dimension")
        if self.alpha_vi < 0:
            raise ValueError("alpha_vi must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.dataset_size < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and dataset_size >= 1 required")


@dataclass
class JmvaeModel:
    enc_joint: DenseNet
    enc_x: DenseNet
    enc_w: DenseNet
    dec_x: DenseNet
    dec_w: DenseNet
    d_x: int
    d_w: int
    d_z: int

    def __post_init__(self):
        if self.d_x != self.d_w:
            raise ValueError("d_x must equal d_w")
        expected = {
            "enc_joint": (self.d_x + self.d_w, 2 * self.d_z),
            "enc_x": (self.d_x, 2 * self.d_z),
            "enc_w": (self.d_w, 2 * self.d_z),
            "dec_x": (self.d_z, self.d_x),
            "dec_w": (self.d_z, self.d_w),
        }
        for name, (n_in, n_out) in expected.items():
            net = getattr(self, name)
            if (net.input_dim, net.output_dim) != (n_in, n_out):
                raise ValueError(f"{name} is {net.input_dim}->{net.output_dim}, expected {n_in}->{n_out}")

    def nets(self) -> dict[str, DenseNet]:
        return {name: getattr(self, name) for name in NET_NAMES}

    def params(self) -> list[np.ndarray]:
        return [p for name in NET_NAMES for p in getattr(self, name).params()]

    def feat_dim(self, modality: str) -> int:
        return self.d_x if check_modality(modality) == "x" else self.d_w


def init_jmvae(cfg: JmvaeConfig, rng: RngStream) -> JmvaeModel:
    h = cfg.hidden
    return JmvaeModel(
        enc_joint=init_dense([cfg.d_x + cfg.d_w, h, 2 * cfg.d_z], rng.child("enc_joint")),
        enc_x=init_dense([cfg.d_x, h, 2 * cfg.d_z], rng.child("enc_x")),
        enc_w=init_dense([cfg.d_w, h, 2 * cfg.d_z], rng.child("enc_w")),
        dec_x=init_dense([cfg.d_z, h, cfg.d_x], rng.child("dec_x")),
        dec_w=init_dense([cfg.d_z, h, cfg.d_w], rng.child("dec_w")),
        d_x=cfg.d_x, d_w=cfg.d_w, d_z=cfg.d_z,
    )


def _check_feat(model: JmvaeModel, modality: str, feat) -> np.ndarray:
    feat = np.asarray(feat, dtype=np.float64)
    if feat.shape[-1] != model.feat_dim(modality):
        raise ValueError(f"{modality}-feature must have length {model.feat_dim(modality)}, got {feat.shape}")
    return feat


def encode_uni(model: JmvaeModel, modality: str, feat) -> DiagGaussian:
    """Posterior from a single modality. Works on one vector or a batch."""
    feat = _check_feat(model, modality, feat)
    net = model.enc_x if modality == "x" else model.enc_w
    return gauss_head(net_apply(net, feat))


def encode_joint(model: JmvaeModel, x, w) -> DiagGaussian:
    x = _check_feat(model, "x", x)
    w = _check_feat(model, "w", w)
    return gauss_head(net_apply(model.enc_joint, np.concatenate([x, w], axis=-1)))


def decode(model: JmvaeModel, modality: str, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.d_z:
        raise ValueError(f"latent must have length {model.d_z}, got {z.shape}")
    net = model.dec_x if check_modality(modality) == "x" else model.dec_w
    return net_apply(net, z)


@dataclass
class LossBreakdown:
    recon_x: float
    recon_w: float
    kl_prior: float
    kl_unimodal_x: float
    kl_unimodal_w: float
    total: float


def _kl_terms(mu, lv, mu2, lv2):
    """Per-row KL(N(mu, e^lv) || N(mu2, e^lv2)) and its partials."""
    inv2 = np.exp(-lv2)
    ratio = np.exp(lv - lv2)
    diff = mu - mu2
    kl = 0.5 * np.sum(lv2 - lv + ratio + diff**2 * inv2 - 1.0, axis=-1)
    d_mu = diff * inv2
    d_lv = 0.5 * (ratio - 1.0)
    d_lv2 = 0.5 * (1.0 - ratio - diff**2 * inv2)
    return kl, d_mu, -d_mu, d_lv, d_lv2


def jmvae_loss(model: JmvaeModel, x, w, rng: RngStream | None = None, *,
               alpha_vi: float = 0.1, eps=None) -> tuple[LossBreakdown, dict[str, list[np.ndarray]]]:
    """Batch-mean loss and exact gradients for all five nets.

    ``eps`` freezes the reparameterization noise (shape ``(batch, d_z)``);
    otherwise it is drawn from ``rng``.
    """
    x = np.atleast_2d(_check_feat(model, "x", x))
    w = np.atleast_2d(_check_feat(model, "w", w))
    if x.shape[0] != w.shape[0]:
        raise ValueError("x and w batches differ in size")
    b, dz = x.shape[0], model.d_z
    if eps is None:
        if rng is None:
            raise ValueError("either rng or eps is required")
        eps = rng.normal((b, dz))
    eps = np.asarray(eps, dtype=np.float64).reshape(b, dz)

    hj, cj = net_forward(model.enc_joint, np.concatenate([x, w], axis=1))
    hx, cx = net_forward(model.enc_x, x)
    hw, cw = net_forward(model.enc_w, w)
    mu, lv = hj[:, :dz], hj[:, dz:]
    mux, lvx = hx[:, :dz], hx[:, dz:]
    muw, lvw = hw[:, :dz], hw[:, dz:]

    sig = np.exp(0.5 * lv)
    z = mu + sig * eps
    xr, cdx = net_forward(model.dec_x, z)
    wr, cdw = net_forward(model.dec_w, z)

    recon_x = 0.5 * np.sum((xr - x) ** 2, axis=1)
    recon_w = 0.5 * np.sum((wr - w) ** 2, axis=1)
    kl_prior = 0.5 * np.sum(np.exp(lv) + mu**2 - 1.0 - lv, axis=1)
    kl_x, dmu_x, dmux, dlv_x, dlvx = _kl_terms(mu, lv, mux, lvx)
    kl_w, dmu_w, dmuw, dlv_w, dlvw = _kl_terms(mu, lv, muw, lvw)

    total = recon_x + recon_w + kl_prior + alpha_vi * (kl_x + kl_w)
    if not np.all(np.isfinite(total)):
        raise TrainingDiverged("non-finite JMVAE loss")

    s = 1.0 / b
    g_dx, dz_x = net_backward(model.dec_x, cdx, (xr - x) * s)
    g_dw, dz_w = net_backward(model.dec_w, cdw, (wr - w) * s)
    dz_total = dz_x + dz_w  # already batch-scaled
    dmu = dz_total + s * (mu + alpha_vi * (dmu_x + dmu_w))
    dlv = (dz_total * eps * 0.5 * sig
           + s * (0.5 * (np.exp(lv) - 1.0) + alpha_vi * (dlv_x + dlv_w)))
    g_ej, _ = net_backward(model.enc_joint, cj, np.concatenate([dmu, dlv], axis=1))
    g_ex, _ = net_backward(model.enc_x, cx, s * alpha_vi * np.concatenate([dmux, dlvx], axis=1))
    g_ew, _ = net_backward(model.enc_w, cw, s * alpha_vi * np.concatenate([dmuw, dlvw], axis=1))

    losses = LossBreakdown(
        recon_x=float(recon_x.mean()),
        recon_w=float(recon_w.mean()),
        kl_prior=float(kl_prior.mean()),
        kl_unimodal_x=float(kl_x.mean()),
        kl_unimodal_w=float(kl_w.mean()),
        total=0.0,
    )
    losses.total = (losses.recon_x + losses.recon_w + losses.kl_prior
                    + alpha_vi * (losses.kl_unimodal_x + losses.kl_unimodal_w))
    grads = {"enc_joint": g_ej, "enc_x": g_ex, "enc_w": g_ew, "dec_x": g_dx, "dec_w": g_dw}
    return losses, grads


def _mean_breakdown(parts: list[tuple[LossBreakdown, int]]) -> LossBreakdown:
    n = sum(k for _, k in parts)
    acc = {f.name: 0.0 for f in fields(LossBreakdown)}
    for lb, k in parts:
        for key, val in asdict(lb).items():
            acc[key] += val * k / n
    return LossBreakdown(**acc)


def train_jmvae(dataset, cfg: JmvaeConfig, rng: RngStream) -> tuple[JmvaeModel, list[LossBreakdown]]:
    """Minibatch Adam training. ``dataset`` is (labels, xs, ws); labels are never used in the loss."""
    _, xs, ws = dataset
    xs = np.asarray(xs, dtype=np.float64)
    ws = np.asarray(ws, dtype=np.float64)
    if len(xs) == 0 or len(xs) != len(ws):
        raise ValueError("dataset must be nonempty with matching x and w rows")
    if xs.shape[1] != cfg.d_x or ws.shape[1] != cfg.d_w:
        raise ValueError("dataset feature widths do not match the config")

    model = init_jmvae(cfg, rng.child("init"))
    params = model.params()
    opt = adam_init(params, lr=cfg.learning_rate)
    shuffle_rng = rng.child("shuffle")
    noise_rng = rng.child("reparam")
    history: list[LossBreakdown] = []
    n = len(xs)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        parts = []
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                losses, grads = jmvae_loss(model, xs[idx], ws[idx], noise_rng, alpha_vi=cfg.alpha_vi)
            except TrainingDiverged as exc:
                err = TrainingDiverged(f"{exc} at epoch {epoch}, batch {batch_no}")
                err.history = history
                raise err from exc
            adam_step(params, [g for name in NET_NAMES for g in grads[name]], opt)
            parts.append((losses, len(idx)))
        history.append(_mean_breakdown(parts))
        log.debug("epoch %d total %.5f", epoch, history[-1].total)
    return model, history


def latent_dump(model: JmvaeModel, dataset) -> list[tuple]:
    """Rows ``(class, input_mode, mu, sigma)`` for every sample under each of the three input modes."""
    labels, xs, ws = dataset
    xs = np.asarray(xs, dtype=np.float64)
    ws = np.asarray(ws, dtype=np.float64)
    posts = {
        "joint": encode_joint(model, xs, ws),
        "x-only": encode_uni(model, "x", xs),
        "w-only": encode_uni(model, "w", ws),
    }
    rows = []
    for i, label in enumerate(labels):
        for mode in INPUT_MODES:
            g = posts[mode]
            rows.append((int(label), mode, g.mu[i].copy(), g.sigma[i].copy()))
    return rows
