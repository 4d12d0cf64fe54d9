"""Observation-conditioned action-sequence denoiser (the study object).

The policy maps one observation to a full fixed-horizon action sequence by
iterative denoising: a conv stack shared by both camera views plus the pose
feeds a conditioning vector; the denoiser is an MLP on the flattened noisy
action sequence concatenated with that conditioning and timestep features.
Actions are standardized per dimension during training and de-standardized at
inference. Deliberately overparameterized relative to the 30-demonstration
dataset, since the memorization behavior under study lives in that regime.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .diffusion import (DivergenceError, NoiseSchedule, geometric_schedule,
                        timestep_embedding, TEMB_DIM)
from .nn import (Activation, Adam, Conv2d, Dense, Flatten, FourierFeatures,
                 Network, load_networks, save_networks)
from .task import Demonstration, Observation

COND_DIM = 64


@dataclass(frozen=True)
class PolicyConfig:
    horizon: int = 32
    action_dim: int = 8
    image_size: int = 48
    hidden: int = 768
    num_steps: int = 100
    sigma_min: float = 0.004
    sigma_max: float = 0.95
    rff_freqs: int = 64
    rff_scale: float = 0.1

    @property
    def flat_dim(self) -> int:
        return self.horizon * self.action_dim

    def as_dict(self) -> dict:
        return {"horizon": self.horizon, "action_dim": self.action_dim,
                "image_size": self.image_size, "hidden": self.hidden,
                "num_steps": self.num_steps, "sigma_min": self.sigma_min,
                "sigma_max": self.sigma_max, "rff_freqs": self.rff_freqs,
                "rff_scale": self.rff_scale}


class DiffusionPolicy:
    def __init__(self, cfg: PolicyConfig, rng: np.random.Generator):
        self.cfg = cfg
        side = cfg.image_size // 16
        self.f_img = Network([
            Conv2d(3, 8, kernel=4, stride=4, rng=rng), Activation("gelu"),
            Conv2d(8, 16, kernel=4, stride=4, rng=rng), Activation("gelu"),
            Flatten(), Dense(side * side * 16, 32, rng=rng),
        ], name="f_img")
        self.f_head = Network([
            Dense(32 + 32 + 7, COND_DIM, rng=rng), Activation("gelu"),
            Dense(COND_DIM, COND_DIM, rng=rng),
        ], name="f_head")
        din = cfg.flat_dim + COND_DIM + TEMB_DIM
        layers = []
        first = din
        if cfg.rff_scale > 0 and cfg.rff_freqs > 0:
            layers.append(FourierFeatures(din, active=cfg.flat_dim, freqs=cfg.rff_freqs,
                                          scale=cfg.rff_scale,
                                          seed=int(rng.integers(0, 2 ** 31))))
            first = din + 2 * cfg.rff_freqs
        layers += [
            Dense(first, cfg.hidden, rng=rng), Activation("gelu"),
            Dense(cfg.hidden, cfg.hidden, rng=rng), Activation("gelu"),
            Dense(cfg.hidden, cfg.flat_dim, rng=rng),
        ]
        self.denoiser = Network(layers, name="denoiser")
        self.sched = geometric_schedule(cfg.num_steps, cfg.sigma_min, cfg.sigma_max)
        self.norm_mean = np.zeros(cfg.action_dim)
        self.norm_scale = np.ones(cfg.action_dim)
        n = cfg.image_size
        self.img_mean_hand = np.zeros((n, n, 3))
        self.img_mean_third = np.zeros((n, n, 3))

    def networks(self) -> dict[str, Network]:
        return {"f_img": self.f_img, "f_head": self.f_head, "denoiser": self.denoiser}

    def parameters(self):
        out = []
        for net in self.networks().values():
            out.extend(net.parameters())
        return out

    @property
    def param_count(self) -> int:
        return sum(net.param_count for net in self.networks().values())

    # -- action standardization -------------------------------------------
    def fit_normalizer(self, demos: list[Demonstration]) -> None:
        stacked = np.concatenate([d.actions for d in demos], axis=0)
        self.norm_mean = stacked.mean(axis=0)
        self.norm_scale = np.maximum(stacked.std(axis=0), 1e-3)
        # center images on the training mean so the observation differences
        # (cup location) dominate the conv input energy
        self.img_mean_hand = np.mean([d.observations[0].hand_image for d in demos], axis=0)
        self.img_mean_third = np.mean([d.observations[0].third_image for d in demos], axis=0)

    def normalize(self, actions: np.ndarray) -> np.ndarray:
        return (actions - self.norm_mean) / self.norm_scale

    def denormalize(self, seq: np.ndarray) -> np.ndarray:
        return seq * self.norm_scale + self.norm_mean

    # -- conditioning -------------------------------------------------------
    def _cond_batch(self, hand, third, pose) -> np.ndarray:
        n = self.cfg.image_size
        if hand.shape[1:] != (n, n, 3):
            raise ValueError(f"policy expects {n}x{n}x3 images, got {hand.shape[1:]}")
        cat = np.concatenate([self.f_img.forward(hand - self.img_mean_hand),
                              self.f_img.forward(third - self.img_mean_third), pose], axis=1)
        return self.f_head.forward(cat)

    def _cond_recorded(self, hand, third, pose):
        h_out, tape_h = self.f_img.forward_recorded(hand - self.img_mean_hand)
        t_out, tape_t = self.f_img.forward_recorded(third - self.img_mean_third)
        cond, tape_c = self.f_head.forward_recorded(
            np.concatenate([h_out, t_out, pose], axis=1))
        return cond, (tape_h, tape_t, tape_c)

    def encode_observation(self, obs: Observation) -> np.ndarray:
        return self._cond_batch(obs.hand_image[None], obs.third_image[None], obs.pose[None])[0]

    def _denoiser_input(self, x, cond, k):
        temb = timestep_embedding(k, self.sched)
        if temb.ndim == 1:
            temb = np.broadcast_to(temb, (x.shape[0], TEMB_DIM))
        return np.concatenate([x, cond, temb], axis=1)

    # -- sampling -----------------------------------------------------------
    def sample_actions(self, cond: np.ndarray, rng: np.random.Generator,
                       sigma_scale: float = 1.0) -> np.ndarray:
        """Denoise (n, T*A) sequences for an (n, COND_DIM) conditioning
        batch; returns raw (n, T, A) actions."""
        sched = self.sched
        n = len(cond)
        x = rng.standard_normal((n, self.cfg.flat_dim))
        for k in range(sched.num_steps, 0, -1):
            eps = self.denoiser.forward(self._denoiser_input(x, cond, k))
            x = sched.alpha[k - 1] * (x - sched.gamma[k - 1] * eps)
            s = sigma_scale * sched.sigma[k - 1]
            if s > 0:
                x = x + s * rng.standard_normal(x.shape)
        seq = x.reshape(n, self.cfg.horizon, self.cfg.action_dim)
        return self.denormalize(seq)


def infer_action(model: DiffusionPolicy, obs: Observation, rng: np.random.Generator,
                 sigma_scale: float = 1.0) -> np.ndarray:
    """One full-horizon action sequence for one observation."""
    cond = model.encode_observation(obs)
    return model.sample_actions(cond[None], rng, sigma_scale=sigma_scale)[0]


def timed_infer(model: DiffusionPolicy, obs: Observation, rng: np.random.Generator,
                sigma_scale: float = 1.0):
    """infer_action plus wall-clock seconds around encoding + denoising."""
    t0 = time.perf_counter()
    seq = infer_action(model, obs, rng, sigma_scale=sigma_scale)
    return seq, time.perf_counter() - t0


def training_action_mse(model: DiffusionPolicy, demos: list[Demonstration],
                        seed: int = 0) -> float:
    """MSE between noise-free (sigma=0) inferences and the demonstrated
    actions, averaged over the given demonstrations; raw action units."""
    hand = np.stack([d.observations[0].hand_image for d in demos])
    third = np.stack([d.observations[0].third_image for d in demos])
    pose = np.stack([d.observations[0].pose for d in demos])
    cond = model._cond_batch(hand, third, pose)
    rng = np.random.Generator(np.random.PCG64(seed))
    seqs = model.sample_actions(cond, rng, sigma_scale=0.0)
    truth = np.stack([d.actions for d in demos])
    return float(np.mean((seqs - truth) ** 2))


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    checkpoint_steps: list[int] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    train_action_mses: list[float] = field(default_factory=list)

    def best_val_index(self) -> int:
        if not self.val_losses:
            raise ValueError("no validation checkpoints recorded")
        return int(np.argmin(self.val_losses))

    def rows(self) -> list[dict]:
        return [
            {"step": s, "val_loss": v, "train_action_mse": m}
            for s, v, m in zip(self.checkpoint_steps, self.val_losses, self.train_action_mses)
        ]


def train_policy(demos: list[Demonstration], model: DiffusionPolicy, steps: int,
                 rng: np.random.Generator, val_fraction: float = 0.0,
                 batch_size: int = 16, lr: float = 1e-3, lr_decay: float = 0.1,
                 cadence: int = 50, mse_every_checkpoint: bool = True):
    """Noise-prediction training of the conditional denoiser plus its
    observation encoder. Returns (train_demos, val_demos, report).

    With val_fraction > 0 the trailing fraction of a seeded shuffle is held
    out; validation loss uses a fixed bank of (timestep, noise) draws so the
    trace is smooth and comparable across checkpoints.
    """
    if val_fraction > 0 and len(demos) < 2:
        raise ValueError("validation split needs at least 2 demonstrations")
    order = rng.permutation(len(demos))
    n_val = int(round(val_fraction * len(demos)))
    val_demos = [demos[i] for i in order[len(demos) - n_val:]] if n_val else []
    train_demos = [demos[i] for i in order[:len(demos) - n_val]]

    model.fit_normalizer(train_demos)
    sched = model.sched
    cfg = model.cfg
    hand = np.stack([d.observations[0].hand_image for d in train_demos])
    third = np.stack([d.observations[0].third_image for d in train_demos])
    pose = np.stack([d.observations[0].pose for d in train_demos])
    flat = np.stack([model.normalize(d.actions).ravel() for d in train_demos])

    val_bank = None
    if val_demos:
        vh = np.stack([d.observations[0].hand_image for d in val_demos])
        vt = np.stack([d.observations[0].third_image for d in val_demos])
        vp = np.stack([d.observations[0].pose for d in val_demos])
        vflat = np.stack([model.normalize(d.actions).ravel() for d in val_demos])
        vrng = np.random.Generator(np.random.PCG64(12345))
        draws = 16
        vk = vrng.integers(1, sched.num_steps + 1, size=(len(val_demos), draws))
        veps = vrng.standard_normal((len(val_demos), draws, cfg.flat_dim))
        val_bank = (vh, vt, vp, vflat, vk, veps)

    def val_loss() -> float:
        vh, vt, vp, vflat, vk, veps = val_bank
        cond = model._cond_batch(vh, vt, vp)
        total = 0.0
        draws = vk.shape[1]
        for j in range(draws):
            ab = sched.alpha_bar[vk[:, j] - 1][:, None]
            xk = np.sqrt(ab) * vflat + np.sqrt(1 - ab) * veps[:, j]
            pred = model.denoiser.forward(model._denoiser_input(xk, cond, vk[:, j]))
            total += float(np.mean((pred - veps[:, j]) ** 2))
        return total / draws

    opt = Adam(model.parameters(), lr=lr)
    report = TrainReport()
    n = len(train_demos)
    b = min(batch_size, n)

    def checkpoint(step):
        report.checkpoint_steps.append(step)
        report.val_losses.append(val_loss() if val_bank else float("nan"))
        report.train_action_mses.append(
            training_action_mse(model, train_demos) if mse_every_checkpoint else float("nan"))

    for step in range(steps):
        idx = rng.integers(0, n, size=b)
        cond, (tape_h, tape_t, tape_c) = model._cond_recorded(hand[idx], third[idx], pose[idx])
        k = rng.integers(1, sched.num_steps + 1, size=b)
        ab = sched.alpha_bar[k - 1][:, None]
        eps = rng.standard_normal((b, cfg.flat_dim))
        xk = np.sqrt(ab) * flat[idx] + np.sqrt(1 - ab) * eps
        pred, tape_d = model.denoiser.forward_recorded(model._denoiser_input(xk, cond, k))
        diff = pred - eps
        loss = float(np.mean(diff * diff))
        if not np.isfinite(loss):
            raise DivergenceError(f"policy training loss diverged at step {step}")
        report.losses.append(loss)
        dpred = (2.0 / diff.size) * diff
        dgrads, dinput = model.denoiser.backward(tape_d, dpred)
        dcond = dinput[:, cfg.flat_dim:cfg.flat_dim + COND_DIM]
        hgrads, dcat = model.f_head.backward(tape_c, dcond)
        ig1, _ = model.f_img.backward(tape_h, dcat[:, :32])
        ig2, _ = model.f_img.backward(tape_t, dcat[:, 32:64])
        igrads = Network.accumulate(ig1, ig2)
        flat_grads = (model.f_img.grad_arrays(igrads) + model.f_head.grad_arrays(hgrads)
                      + model.denoiser.grad_arrays(dgrads))
        step_lr = lr * (lr_decay ** (step / max(steps - 1, 1))) if steps > 1 else lr
        opt.step(flat_grads, lr=step_lr)
        if (step + 1) % cadence == 0:
            checkpoint(step + 1)
    return train_demos, val_demos, report


def save_policy(model: DiffusionPolicy, path) -> None:
    import base64
    meta = {
        "policy_config": model.cfg.as_dict(),
        "norm_mean": model.norm_mean.tolist(),
        "norm_scale": model.norm_scale.tolist(),
        "img_mean_hand": base64.b64encode(
            np.ascontiguousarray(model.img_mean_hand, dtype="<f8").tobytes()).decode(),
        "img_mean_third": base64.b64encode(
            np.ascontiguousarray(model.img_mean_third, dtype="<f8").tobytes()).decode(),
    }
    save_networks(path, model.networks(), meta=meta)


def load_policy(path) -> DiffusionPolicy:
    nets, meta = load_networks(path)
    cfg = PolicyConfig(**meta["policy_config"])
    model = DiffusionPolicy(cfg, rng=np.random.default_rng(0))  # params replaced below
    for name, net in model.networks().items():
        net.set_params([arr for _, arr in nets[name].parameters()])
    model.norm_mean = np.array(meta["norm_mean"])
    model.norm_scale = np.array(meta["norm_scale"])
    import base64
    n = cfg.image_size
    model.img_mean_hand = np.frombuffer(
        base64.b64decode(meta["img_mean_hand"]), dtype="<f8").reshape(n, n, 3).copy()
    model.img_mean_third = np.frombuffer(
        base64.b64decode(meta["img_mean_third"]), dtype="<f8").reshape(n, n, 3).copy()
    return model
