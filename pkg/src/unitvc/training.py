"""Losses, the joint-optimization training step, and checkpoints."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .bins import BinGrid, gaussian_bin_weights
from .config import SystemConfig
from .networks import Discriminator, VoiceConversionModel, lengths_to_mask, log_duration_target
from .units import UnitVocabulary

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
GEN_LOSSES = ("recon_l1", "adv_gen", "voicing_bce", "duration_mse", "pitch_bin_bce",
              "energy_bin_bce", "pitch_consistency_mse", "energy_consistency_mse")
JOINT_LOSSES = ("pitch_consistency_mse", "energy_consistency_mse")


@dataclass
class LossReport:
    recon_l1: float = 0.0
    adv_gen: float = 0.0
    adv_disc: float = 0.0
    voicing_bce: float = 0.0
    duration_mse: float = 0.0
    pitch_bin_bce: float = 0.0
    energy_bin_bce: float = 0.0
    pitch_consistency_mse: float = 0.0
    energy_consistency_mse: float = 0.0
    total_gen: float = 0.0
    skipped: bool = False

    @classmethod
    def from_tensors(cls, losses, skipped=False):
        return cls(**{k: float(v) for k, v in losses.items()}, skipped=skipped)

    def is_finite(self):
        return all(math.isfinite(v) for k, v in asdict(self).items() if k != "skipped")


@dataclass
class ModelState:
    """All learnable parameters plus the config they were built from."""

    generator: VoiceConversionModel
    discriminator: Discriminator
    config: SystemConfig
    step: int = 0
    vocab: UnitVocabulary = None
    optimizer_state: dict = field(default_factory=dict)

    @classmethod
    def create(cls, cfg, vocab=None, seed=None):
        torch.manual_seed(cfg.train.seed if seed is None else seed)
        gen = VoiceConversionModel(cfg)
        disc = Discriminator(cfg.model.disc_channels, cfg.model.disc_layers)
        return cls(gen, disc, cfg, 0, vocab)

    @property
    def fingerprint(self):
        return self.config.fingerprint()


def collate(records):
    """Pad a list of UtteranceFeatures into a batch of tensors."""
    def pad(arrays, dtype, value=0):
        longest = max(len(a) for a in arrays)
        out = np.full((len(arrays), longest) + arrays[0].shape[1:], value, dtype=dtype)
        for i, a in enumerate(arrays):
            out[i, :len(a)] = a
        return torch.from_numpy(out)

    def lengths(arrays):
        return torch.tensor([len(a) for a in arrays], dtype=torch.long)

    return {
        "wave": pad([r.wave for r in records], np.float32),
        "wave_lengths": lengths([r.wave for r in records]),
        "mel": pad([r.mel for r in records], np.float32),
        "frame_lengths": lengths([r.mel for r in records]),
        "pitch": pad([r.pitch for r in records], np.float32),
        "voicing": pad([r.voicing for r in records], np.int64),
        "energy": pad([r.energy for r in records], np.float32),
        "units": pad([r.units for r in records], np.int64),
        "durations": pad([r.durations for r in records], np.int64),
        "unit_lengths": lengths([r.units for r in records]),
    }


def mix_bin_weights(gt, pred, c=0.5):
    """c * gt + (1 - c) * pred.

    Computed with ``torch.lerp`` so that mixing a tensor with itself and the
    c = 0 / c = 1 endpoints are exact, subnormal weights included.
    """
    if gt.shape != pred.shape:
        raise ValueError(f"bin weight shapes differ: {tuple(gt.shape)} vs {tuple(pred.shape)}")
    if not 0.0 <= c <= 1.0:
        raise ValueError("mixing coefficient must lie in [0, 1]")
    dtype = torch.promote_types(gt.dtype, pred.dtype)
    return torch.lerp(pred.to(dtype), gt.to(dtype), c)


def target_bin_weights(batch, cfg):
    pitch_bw = gaussian_bin_weights(batch["pitch"], BinGrid.pitch(cfg.grid), clamp=True)
    energy_bw = gaussian_bin_weights(batch["energy"], BinGrid.energy(cfg.grid), clamp=True)
    return pitch_bw.float(), energy_bw.float()


def forward_train(model, batch, cfg, joint=None):
    """Teacher-forced forward pass: ground-truth L and V feed every network."""
    joint = cfg.train.joint_optimization if joint is None else joint
    wave, wave_lengths = batch["wave"], batch["wave_lengths"]
    units, durations = batch["units"], batch["durations"]
    lengths = batch["frame_lengths"]

    a_p = model.encode_attribute(wave, wave_lengths, "p")
    a_r = model.encode_attribute(wave, wave_lengths, "r")
    a_s = model.encode_attribute(wave, wave_lengths, "s")

    log_dur = model.predict_duration(units, batch["unit_lengths"], a_r)
    pitch_logits, voicing_logit, energy_logits, _ = model.predict_pitch_energy(units, durations, a_p)
    pitch_gt, energy_gt = target_bin_weights(batch, cfg)
    pitch_pred, energy_pred = torch.sigmoid(pitch_logits), torch.sigmoid(energy_logits)

    if joint:
        c = cfg.train.mix_coef
        pitch_in = mix_bin_weights(pitch_gt, pitch_pred, c)
        energy_in = mix_bin_weights(energy_gt, energy_pred, c)
    else:
        pitch_in, energy_in = pitch_gt, energy_gt

    voicing_in = batch["voicing"]
    mel_hat, parts = model.synthesize(pitch_in, voicing_in, energy_in, units, durations, a_s, lengths)
    return {
        "a_p": a_p, "a_r": a_r, "a_s": a_s,
        "log_dur": log_dur,
        "pitch_logits": pitch_logits, "voicing_logit": voicing_logit, "energy_logits": energy_logits,
        "pitch_gt": pitch_gt, "energy_gt": energy_gt,
        "pitch_pred": pitch_pred, "energy_pred": energy_pred,
        "pitch_in": pitch_in, "energy_in": energy_in,
        "synth_durations": durations, "synth_voicing": voicing_in,
        "mel_hat": mel_hat, "parts": parts,
    }


def _masked_mean(x, mask):
    mask = mask.to(x.dtype)
    while mask.dim() < x.dim():
        mask = mask.unsqueeze(-1)
    mask = mask.expand_as(x)
    return (x * mask).sum() / mask.sum().clamp_min(1.0)


def lsgan_disc_loss(disc, real, fake, lengths):
    real_s, fake_s = disc(real), disc(fake)
    mask = lengths_to_mask(lengths, real.shape[1])
    return _masked_mean((real_s - 1.0) ** 2, mask) + _masked_mean(fake_s ** 2, mask)


def lsgan_gen_loss(disc, fake, lengths):
    mask = lengths_to_mask(lengths, fake.shape[1])
    return _masked_mean((disc(fake) - 1.0) ** 2, mask)


def compute_losses(batch, out, model, disc, cfg):
    """Every loss term as a tensor; ``total_gen`` is the weighted generator sum.

    ``adv_disc`` is evaluated on the detached fake and so carries no gradient
    into the generator.
    """
    tc = cfg.train
    fmask = lengths_to_mask(batch["frame_lengths"], batch["mel"].shape[1])
    umask = lengths_to_mask(batch["unit_lengths"], batch["units"].shape[1])
    vmask = fmask & batch["voicing"].bool()
    mel, mel_hat = batch["mel"], out["mel_hat"]
    lengths = batch["frame_lengths"]

    losses = {}
    losses["recon_l1"] = _masked_mean((mel_hat - mel).abs(), fmask)
    losses["adv_gen"] = lsgan_gen_loss(disc, mel_hat, lengths)
    losses["adv_disc"] = lsgan_disc_loss(disc, mel, mel_hat.detach(), lengths)
    losses["voicing_bce"] = _masked_mean(F.binary_cross_entropy_with_logits(
        out["voicing_logit"], batch["voicing"].float(), reduction="none"), fmask)
    losses["duration_mse"] = _masked_mean(
        (out["log_dur"] - log_duration_target(batch["durations"])) ** 2, umask)
    losses["pitch_bin_bce"] = _masked_mean(F.binary_cross_entropy_with_logits(
        out["pitch_logits"], out["pitch_gt"], reduction="none"), vmask)
    losses["energy_bin_bce"] = _masked_mean(F.binary_cross_entropy_with_logits(
        out["energy_logits"], out["energy_gt"], reduction="none"), fmask)

    # consistency between encodings of true and predicted bin weights, same tables
    src, eng = model.source, model.energy
    enc_p_gt = src.encode(out["pitch_gt"], batch["voicing"], fmask)
    enc_p_pred = src.encode(out["pitch_pred"], batch["voicing"], fmask)
    losses["pitch_consistency_mse"] = _masked_mean((enc_p_gt - enc_p_pred) ** 2, vmask)
    enc_q_gt = eng.encode(out["energy_gt"], fmask)
    enc_q_pred = eng.encode(out["energy_pred"], fmask)
    losses["energy_consistency_mse"] = _masked_mean((enc_q_gt - enc_q_pred) ** 2, fmask)

    active = [k for k in GEN_LOSSES if tc.joint_optimization or k not in JOINT_LOSSES]
    losses["total_gen"] = sum(getattr(tc, f"w_{k}") * losses[k] for k in active)
    return losses


class Trainer:
    """Alternating LSGAN discriminator / generator updates on one ModelState."""

    def __init__(self, state):
        self.state = state
        tc = state.config.train
        self.opt_g = torch.optim.Adam(state.generator.parameters(), lr=tc.lr_gen)
        self.opt_d = torch.optim.Adam(state.discriminator.parameters(), lr=tc.lr_disc)
        if state.optimizer_state:
            self.opt_g.load_state_dict(state.optimizer_state["gen"])
            self.opt_d.load_state_dict(state.optimizer_state["disc"])

    @property
    def cfg(self):
        return self.state.config

    def train_step(self, batch):
        cfg, tc = self.cfg, self.cfg.train
        gen, disc = self.state.generator, self.state.discriminator
        gen.train()
        disc.train()

        out = forward_train(gen, batch, cfg)
        losses = compute_losses(batch, out, gen, disc, cfg)
        if not all(torch.isfinite(v) for v in losses.values()):
            bad = [k for k, v in losses.items() if not torch.isfinite(v)]
            log.warning("step %d skipped: non-finite losses %s", self.state.step, bad)
            return LossReport.from_tensors({k: v.detach() for k, v in losses.items()}, skipped=True)

        self.opt_g.zero_grad(set_to_none=True)
        losses["total_gen"].backward()
        if not self._clip_and_check(gen):
            log.warning("step %d skipped: non-finite generator gradients", self.state.step)
            return LossReport.from_tensors({k: v.detach() for k, v in losses.items()}, skipped=True)
        self.opt_g.step()

        # adv_gen also left gradients on D; D is updated from its own objective only
        self.opt_d.zero_grad(set_to_none=True)
        (tc.w_adv_disc * losses["adv_disc"]).backward()
        if self._clip_and_check(disc):
            self.opt_d.step()
        else:
            log.warning("step %d: non-finite discriminator gradients, D update skipped",
                        self.state.step)

        self.state.step += 1
        return LossReport.from_tensors({k: v.detach() for k, v in losses.items()})

    def _clip_and_check(self, module):
        params = [p for p in module.parameters() if p.grad is not None]
        if not params:
            return True
        norm = torch.nn.utils.clip_grad_norm_(params, self.cfg.train.grad_clip)
        return bool(torch.isfinite(norm))

    def optimizer_state(self):
        return {"gen": self.opt_g.state_dict(), "disc": self.opt_d.state_dict()}


def iterate_batches(records, batch_size, seed):
    """Endless shuffled batches; the order depends only on ``seed``."""
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(len(records))
        for i in range(0, len(order), batch_size):
            chunk = order[i:i + batch_size]
            if len(chunk):
                yield collate([records[j] for j in chunk])


def fit(trainer, records, steps, log_path=None, checkpoint_dir=None, checkpoint_every=None):
    """Run ``steps`` training steps; returns the list of LossReports."""
    tc = trainer.cfg.train
    checkpoint_every = checkpoint_every or tc.checkpoint_every
    # resume-safe data order: the stream is re-seeded from the current step
    batches = iterate_batches(records, tc.batch_size, tc.seed + trainer.state.step)
    reports = []
    log_fh = open(log_path, "a") if log_path else None
    try:
        for _ in range(steps):
            report = trainer.train_step(next(batches))
            reports.append(report)
            if log_fh:
                log_fh.write(json.dumps({"step": trainer.state.step, **asdict(report)}) + "\n")
                log_fh.flush()
            if checkpoint_dir and trainer.state.step % checkpoint_every == 0:
                save_checkpoint(trainer.state, Path(checkpoint_dir) / "latest.pt", trainer)
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_dir:
        save_checkpoint(trainer.state, Path(checkpoint_dir) / "latest.pt", trainer)
    return reports


def save_checkpoint(state, path, trainer=None):
    vocab = None
    if state.vocab is not None:
        vocab = {k: torch.from_numpy(np.asarray(getattr(state.vocab, k), dtype=np.float64))
                 for k in ("codebook", "mean", "std")}
    blob = {
        "version": CHECKPOINT_VERSION,
        "fingerprint": state.fingerprint,
        "config": state.config.to_flat(),
        "step": state.step,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "vocab": vocab,
        "optimizer": trainer.optimizer_state() if trainer is not None else state.optimizer_state,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)


def load_checkpoint(path, cfg=None):
    """Load a ModelState; ``cfg``, when given, must carry the same fingerprint."""
    try:
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"corrupt or unsupported checkpoint {path}")
    stored_cfg = SystemConfig.from_flat(blob["config"])
    if stored_cfg.fingerprint() != blob["fingerprint"]:
        raise ValueError(f"corrupt checkpoint {path}: stored config does not match its fingerprint")
    if cfg is not None and cfg.fingerprint() != blob["fingerprint"]:
        raise ValueError(
            f"config fingerprint mismatch: checkpoint {blob['fingerprint']}, config {cfg.fingerprint()}")
    if cfg is not None:
        # keep run-time sections (train, adapters) from the caller
        stored_cfg.train, stored_cfg.adapters = cfg.train, cfg.adapters
    gen = VoiceConversionModel(stored_cfg)
    gen.load_state_dict(blob["generator"])
    disc = Discriminator(stored_cfg.model.disc_channels, stored_cfg.model.disc_layers)
    disc.load_state_dict(blob["discriminator"])
    vocab = None
    if blob.get("vocab") is not None:
        v = blob["vocab"]
        vocab = UnitVocabulary(v["codebook"].numpy(), v["mean"].numpy(), v["std"].numpy())
    return ModelState(gen, disc, stored_cfg, int(blob["step"]), vocab, blob.get("optimizer") or {})
