"""Fused observation encoder trained with a temperature-scaled contrastive
loss over augmented view pairs.

Both camera images pass through one shared convolutional encoder, the pose
through a small dense stack; a fusion head maps their concatenation to the
embedding, which is L2-normalized (with an epsilon guard) so cosine
similarity is a plain dot product downstream. Two independently drawn
augmentations of the same frame form a positive pair; all other frames in
the batch act as negatives. The denominator of each softmax term ranges over
all 2B-1 other embeddings, the positive included, which is the standard
in-batch formulation; the checkpoint sidecar records this convention.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .nn import (Activation, Adam, Conv2d, Dense, Flatten, Network,
                 load_networks, save_networks)
from .task import Observation, TaskDataset

NORM_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    temperature: float = 0.4
    include_pose: bool = True
    image_size: int = 48

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AugmentationConfig:
    crop_min: float = 0.8           # crop window as a fraction of the image side
    brightness: float = 0.2
    contrast: float = 0.2
    noise_sigma: float = 0.02
    translate_px: float = 2.0
    pose_sigma: float = 0.006       # ~1% of the workspace span, positions only

    def as_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def normalize_rows(u: np.ndarray):
    """Unit-normalize rows with an epsilon guard; returns (z, cache)."""
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    denom = norms + NORM_EPS
    return u / denom, (u, norms, denom)


def normalize_rows_backward(cache, dz: np.ndarray) -> np.ndarray:
    u, norms, denom = cache
    du = dz / denom
    # d|u|/du = u/|u|; guard the zero-norm case where that direction vanishes
    safe = np.where(norms > 0, norms, 1.0)
    proj = np.sum(u * dz, axis=-1, keepdims=True) / (safe * denom ** 2)
    return du - u * proj


class FusionEncoder:
    """Shared image encoder + pose encoder + fusion head -> unit embedding."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        if cfg.image_size % 16 != 0:
            raise ValueError("image size must be divisible by 16 for the conv stack")
        self.cfg = cfg
        side = cfg.image_size // 16
        self.img_feat = 24
        self.pose_feat = 16
        self.f_img = Network([
            Conv2d(3, 6, kernel=4, stride=4, rng=rng), Activation("gelu"),
            Conv2d(6, 12, kernel=4, stride=4, rng=rng), Activation("gelu"),
            Flatten(), Dense(side * side * 12, self.img_feat, rng=rng),
        ], name="f_img")
        self.f_pose = Network([
            Dense(7, self.pose_feat, rng=rng), Activation("gelu"),
            Dense(self.pose_feat, self.pose_feat, rng=rng),
        ], name="f_pose") if cfg.include_pose else None
        fusion_in = 2 * self.img_feat + (self.pose_feat if cfg.include_pose else 0)
        self.f_fusion = Network([
            Dense(fusion_in, cfg.embed_dim, rng=rng), Activation("gelu"),
            Dense(cfg.embed_dim, cfg.embed_dim, rng=rng),
        ], name="f_fusion")

    def networks(self) -> dict[str, Network]:
        nets = {"f_img": self.f_img, "f_fusion": self.f_fusion}
        if self.f_pose is not None:
            nets["f_pose"] = self.f_pose
        return nets

    def parameters(self):
        out = []
        for net in self.networks().values():
            out.extend(net.parameters())
        return out

    @property
    def param_count(self) -> int:
        return sum(net.param_count for net in self.networks().values())

    def _check_images(self, hand: np.ndarray):
        n = self.cfg.image_size
        if hand.shape[1:] != (n, n, 3):
            raise ValueError(f"expected {n}x{n}x3 images, got {hand.shape[1:]}")

    def encode_batch(self, hand: np.ndarray, third: np.ndarray,
                     pose: np.ndarray) -> np.ndarray:
        self._check_images(hand)
        parts = [self.f_img.forward(hand), self.f_img.forward(third)]
        if self.f_pose is not None:
            parts.append(self.f_pose.forward(pose))
        z, _ = normalize_rows(self.f_fusion.forward(np.concatenate(parts, axis=1)))
        return z

    def encode(self, obs: Observation) -> np.ndarray:
        return self.encode_batch(obs.hand_image[None], obs.third_image[None],
                                 obs.pose[None])[0]

    def encode_batch_recorded(self, hand, third, pose):
        """Forward with tapes kept for `backward_batch`."""
        self._check_images(hand)
        ha, tape_h = self.f_img.forward_recorded(hand)
        ta, tape_t = self.f_img.forward_recorded(third)
        parts = [ha, ta]
        tape_p = None
        if self.f_pose is not None:
            pa, tape_p = self.f_pose.forward_recorded(pose)
            parts.append(pa)
        u, tape_f = self.f_fusion.forward_recorded(np.concatenate(parts, axis=1))
        z, ncache = normalize_rows(u)
        return z, (tape_h, tape_t, tape_p, tape_f, ncache)

    def backward_batch(self, tapes, dz: np.ndarray):
        """Gradients for all parameters given dL/dz; returns the flat grad
        list aligned with `parameters()`."""
        tape_h, tape_t, tape_p, tape_f, ncache = tapes
        du = normalize_rows_backward(ncache, dz)
        fgrads, dcat = self.f_fusion.backward(tape_f, du)
        k = self.img_feat
        img_grads_h, _ = self.f_img.backward(tape_h, dcat[:, :k])
        img_grads_t, _ = self.f_img.backward(tape_t, dcat[:, k:2 * k])
        img_grads = Network.accumulate(img_grads_h, img_grads_t)
        flat = self.f_img.grad_arrays(img_grads)
        if self.f_pose is not None:
            pgrads, _ = self.f_pose.backward(tape_p, dcat[:, 2 * k:])
            flat = flat + self.f_pose.grad_arrays(pgrads)
        return flat + self.f_fusion.grad_arrays(fgrads)


def encoder_fingerprint(enc: FusionEncoder) -> str:
    """Hash of architecture + parameters + config; banks built with one
    encoder refuse queries through another."""
    h = hashlib.sha256()
    h.update(json.dumps(enc.cfg.as_dict(), sort_keys=True).encode())
    for name, net in sorted(enc.networks().items()):
        h.update(name.encode())
        h.update(json.dumps(net.descriptors(), sort_keys=True).encode())
        for _, arr in net.parameters():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def ntxent_loss(z1: np.ndarray, z2: np.ndarray, temperature: float = 0.4):
    """Symmetrized temperature-scaled contrastive loss over a batch of
    positive pairs. Inputs are (B, D) embedding batches (unit rows expected;
    cosine is computed with defensive normalization so the loss is
    well-defined for any nonzero input). Returns (loss, dz1, dz2).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    b = len(z1)
    if b < 2:
        raise ValueError("contrastive loss needs batch size >= 2 (no negatives otherwise)")
    if z1.shape != z2.shape:
        raise ValueError("view batches must have identical shapes")
    raw = np.concatenate([z1, z2], axis=0)
    zn, ncache = normalize_rows(raw)
    n = 2 * b
    sim = (zn @ zn.T) / temperature
    np.fill_diagonal(sim, -np.inf)  # self-similarity never competes
    partner = np.concatenate([np.arange(b, n), np.arange(0, b)])
    logmax = sim.max(axis=1, keepdims=True)
    expo = np.exp(sim - logmax)
    denom = expo.sum(axis=1, keepdims=True)
    logprob = sim - logmax - np.log(denom)
    loss = -float(np.mean(logprob[np.arange(n), partner]))

    softmax = expo / denom
    g = softmax / n
    g[np.arange(n), partner] -= 1.0 / n
    np.fill_diagonal(g, 0.0)
    dzn = (g + g.T) @ zn / temperature
    draw = normalize_rows_backward(ncache, dzn)
    return loss, draw[:b], draw[b:]


@dataclass
class AugmentationPipeline:
    cfg: AugmentationConfig

    def apply_images(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Random crop-resize with translation, brightness/contrast jitter,
        and pixel noise; output stays in [0, 1]."""
        b, h, w, _ = images.shape
        a = self.cfg
        scale = rng.uniform(a.crop_min, 1.0, size=b)
        win = scale * h
        base = (h - win) / 2.0
        off_y = np.clip(base + rng.uniform(-a.translate_px, a.translate_px, size=b), 0, h - win)
        off_x = np.clip(base + rng.uniform(-a.translate_px, a.translate_px, size=b), 0, h - win)

        r = np.arange(h)
        ys = off_y[:, None] + scale[:, None] * (r[None, :] + 0.5) - 0.5  # (b, h)
        xs = off_x[:, None] + scale[:, None] * (r[None, :] + 0.5) - 0.5
        y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
        x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        wy = (ys - y0)[:, :, None, None]
        wx = (xs - x0)[:, None, :, None]
        bi = np.arange(b)[:, None, None]
        r00 = images[bi, y0[:, :, None], x0[:, None, :]]
        r01 = images[bi, y0[:, :, None], x1[:, None, :]]
        r10 = images[bi, y1[:, :, None], x0[:, None, :]]
        r11 = images[bi, y1[:, :, None], x1[:, None, :]]
        out = (r00 * (1 - wy) * (1 - wx) + r01 * (1 - wy) * wx
               + r10 * wy * (1 - wx) + r11 * wy * wx)

        out += rng.uniform(-a.brightness, a.brightness, size=(b, 1, 1, 1))
        out = 0.5 + (out - 0.5) * (1.0 + rng.uniform(-a.contrast, a.contrast, size=(b, 1, 1, 1)))
        out += rng.normal(0.0, a.noise_sigma, size=out.shape)
        return np.clip(out, 0.0, 1.0)

    def apply_pose(self, pose: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = pose.copy()
        out[:, :3] += rng.normal(0.0, self.cfg.pose_sigma, size=(len(pose), 3))
        quat = out[:, 3:]
        out[:, 3:] = quat / np.linalg.norm(quat, axis=1, keepdims=True)
        return out

    def apply(self, hand, third, pose, rng):
        return (self.apply_images(hand, rng), self.apply_images(third, rng),
                self.apply_pose(pose, rng))


def train_encoder(dataset: TaskDataset, enc: FusionEncoder,
                  aug1: AugmentationPipeline, aug2: AugmentationPipeline,
                  steps: int, rng: np.random.Generator, batch_size: int = 64,
                  lr: float = 1e-3, lr_decay: float = 0.1) -> list[float]:
    """Contrastive training over all dataset frames; returns the loss trace."""
    hand, third, pose, _, _ = dataset.frame_arrays()
    n = len(hand)
    if n < batch_size:
        raise ValueError(f"dataset has {n} frames < batch size {batch_size}")
    opt = Adam(enc.parameters(), lr=lr)
    trace = []
    for step in range(steps):
        idx = rng.choice(n, size=batch_size, replace=False)
        h1, t1, p1 = aug1.apply(hand[idx], third[idx], pose[idx], rng)
        h2, t2, p2 = aug2.apply(hand[idx], third[idx], pose[idx], rng)
        za, tapes_a = enc.encode_batch_recorded(h1, t1, p1)
        zb, tapes_b = enc.encode_batch_recorded(h2, t2, p2)
        loss, dza, dzb = ntxent_loss(za, zb, enc.cfg.temperature)
        if not np.isfinite(loss):
            raise RuntimeError(f"contrastive loss diverged at step {step}")
        flat = [ga + gb for ga, gb in zip(enc.backward_batch(tapes_a, dza),
                                          enc.backward_batch(tapes_b, dzb))]
        step_lr = lr * (lr_decay ** (step / max(steps - 1, 1))) if steps > 1 else lr
        opt.step(flat, lr=step_lr)
        trace.append(loss)
    return trace


def save_encoder(enc: FusionEncoder, path, aug_cfg: AugmentationConfig | None = None) -> None:
    """Write the checkpoint plus a JSON sidecar at `<path>.json`."""
    path = Path(path)
    meta = {"encoder_config": enc.cfg.as_dict()}
    save_networks(path, enc.networks(), meta=meta)
    sidecar = {
        "embed_dim": enc.cfg.embed_dim,
        "temperature": enc.cfg.temperature,
        "include_pose": enc.cfg.include_pose,
        "image_size": enc.cfg.image_size,
        "augmentation_hash": (aug_cfg or AugmentationConfig()).hash(),
        "loss_denominator": "all 2B-1 others, positive pair included",
        "fingerprint": encoder_fingerprint(enc),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))


def load_encoder(path) -> FusionEncoder:
    nets, meta = load_networks(path)
    cfg = EncoderConfig(**meta["encoder_config"])
    enc = FusionEncoder(cfg, rng=np.random.default_rng(0))  # params replaced below
    for name, net in enc.networks().items():
        net.set_params([arr for _, arr in nets[name].parameters()])
    return enc
