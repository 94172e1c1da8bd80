"""Training engine: detector pretraining, alternating adversarial training, evaluation."""

import copy
import json
from contextlib import contextmanager
from dataclasses import dataclass

import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import StepLR

from . import __version__
from .config import TrainConfig, config_hash
from .data import Batch, DatasetError, GroundTruthBundle, collate
from .generator import CamoGenerator
from .losses import detector_objective, generator_objective
from .metrics import evaluate_pairs
from .model import CamoDetector, ModelConfig


class TrainingDivergedError(RuntimeError):
    """Loss or gradients went non-finite; carries the last lr and gradient norm."""


def seed_all(seed):
    torch.manual_seed(seed)


class RunLog:
    """Append-only JSONL step log. With path=None it swallows records."""

    def __init__(self, path=None):
        self._fh = open(path, "w") if path is not None else None

    def write(self, record):
        if self._fh is not None:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


@contextmanager
def frozen(module):
    """Eval mode + requires_grad off, restored on exit. Activations still carry grad."""
    was_training = module.training
    flags = [p.requires_grad for p in module.parameters()]
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield module
    finally:
        module.train(was_training)
        for p, flag in zip(module.parameters(), flags):
            p.requires_grad_(flag)


def _flip_sample_tensors(image, mask, edge, flips):
    idx = flips.nonzero(as_tuple=True)[0]
    if idx.numel():
        image[idx] = torch.flip(image[idx], dims=[-1])
        mask[idx] = torch.flip(mask[idx], dims=[-1])
        edge[idx] = torch.flip(edge[idx], dims=[-1])
    return image, mask, edge


def iter_batches(samples, batch_size, generator, hflip=False):
    """Seeded random permutation, partial final batch kept."""
    perm = torch.randperm(len(samples), generator=generator)
    for start in range(0, len(samples), batch_size):
        chosen = [samples[i] for i in perm[start:start + batch_size].tolist()]
        batch = collate(chosen)
        if hflip:
            flips = torch.rand(len(chosen), generator=generator) < 0.5
            image, mask, edge = _flip_sample_tensors(
                batch.image.clone(), batch.gt.mask.clone(), batch.gt.edge_weight.clone(), flips)
            batch = Batch(image=image, gt=GroundTruthBundle.from_masks(mask, edge),
                          ids=batch.ids)
        yield batch


def _check_samples(samples):
    if not samples:
        raise DatasetError("empty sample list")
    h, w = samples[0].image.shape[-2:]
    for s in samples:
        if s.image.shape[-2:] != (h, w):
            raise DatasetError(f"sample '{s.id}' size {tuple(s.image.shape[-2:])} "
                               f"differs from {(h, w)}")
    if h % 32 or w % 32:
        raise DatasetError(f"sample size {h}x{w} must be divisible by 32")


def _optim_step(optimizer, loss, module, clip, phase, step, lr):
    if not torch.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss in phase '{phase}' at step {step} (lr={lr:g})")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(module.parameters(), clip)
    if not torch.isfinite(grad_norm):
        raise TrainingDivergedError(
            f"non-finite gradient norm in phase '{phase}' at step {step} "
            f"(lr={lr:g}, grad_norm={float(grad_norm)})")
    optimizer.step()
    return float(grad_norm)


@dataclass
class Checkpoint:
    detector: CamoDetector
    generator: CamoGenerator | None
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    epoch: int
    phase: str
    seed: int
    det_optimizer: dict | None = None
    gen_optimizer: dict | None = None

    @property
    def config_hash(self):
        return config_hash(self.model_cfg, self.train_cfg)

    def save(self, path):
        torch.save({
            "version": __version__,
            "model_cfg": self.model_cfg.to_dict(),
            "train_cfg": self.train_cfg.to_dict(),
            "detector": self.detector.state_dict(),
            "generator": self.generator.state_dict() if self.generator is not None else None,
            "det_optimizer": self.det_optimizer,
            "gen_optimizer": self.gen_optimizer,
            "epoch": self.epoch,
            "phase": self.phase,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }, path)

    @staticmethod
    def load(path):
        payload = torch.load(path, map_location="cpu")
        model_cfg = ModelConfig.from_dict(payload["model_cfg"])
        train_cfg = TrainConfig.from_dict(payload["train_cfg"])
        detector = CamoDetector(model_cfg)
        detector.load_state_dict(payload["detector"])
        generator = None
        if payload["generator"] is not None:
            generator = CamoGenerator()
            generator.load_state_dict(payload["generator"])
        return Checkpoint(detector=detector, generator=generator,
                          model_cfg=model_cfg, train_cfg=train_cfg,
                          epoch=payload["epoch"], phase=payload["phase"],
                          seed=payload["seed"],
                          det_optimizer=payload["det_optimizer"],
                          gen_optimizer=payload["gen_optimizer"])


def pretrain_detector(train_cfg, samples, model_cfg=None, log_path=None):
    """Train a fresh detector on real images. Deterministic given the config seed."""
    cfg = train_cfg.validate()
    model_cfg = (model_cfg or ModelConfig()).validate()
    _check_samples(samples)
    seed_all(cfg.seed)
    detector = CamoDetector(model_cfg)
    detector.train()
    optimizer = Adam(detector.parameters(), lr=cfg.lr_pretrain, betas=cfg.betas_pretrain)
    scheduler = StepLR(optimizer, step_size=cfg.lr_pretrain_step, gamma=cfg.lr_gamma)
    shuffle = torch.Generator().manual_seed(cfg.seed)

    log = RunLog(log_path)
    step, epoch = 0, 0
    try:
        for epoch in range(cfg.pretrain_epochs):
            for batch in iter_batches(samples, cfg.batch_size, shuffle, cfg.hflip):
                lr = optimizer.param_groups[0]["lr"]
                loss, report = detector_objective(
                    detector(batch.image), batch.gt, beta=cfg.beta,
                    window=cfg.pool_window, mode=cfg.detector_loss)
                grad_norm = _optim_step(optimizer, loss, detector, cfg.grad_clip,
                                        "pretrain", step, lr)
                step += 1
                log.write({"step": step, "epoch": epoch, "phase": "pretrain",
                           "lr": lr, "grad_norm": grad_norm, **report.to_dict()})
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    raise StopIteration
            scheduler.step()
    except StopIteration:
        pass
    finally:
        log.close()
    return Checkpoint(detector=detector, generator=None, model_cfg=model_cfg,
                      train_cfg=cfg, epoch=epoch + 1, phase="pretrain", seed=cfg.seed,
                      det_optimizer=optimizer.state_dict())


def adversarial_train(train_cfg, samples, init, log_path=None):
    """Alternating camouflage-generator / detector training from a pretrained checkpoint.

    The generator learns to make the images harder while staying faithful to the
    background; the detector then trains on the synthesized images (or, with
    probability real_mix, the real ones). `init` is left untouched.
    """
    cfg = train_cfg.validate()
    _check_samples(samples)
    seed_all(cfg.seed)
    detector = copy.deepcopy(init.detector)
    detector.train()
    generator = CamoGenerator()
    generator.train()
    det_opt = Adam(detector.parameters(), lr=cfg.lr_adv, betas=cfg.betas_adv)
    gen_opt = Adam(generator.parameters(), lr=cfg.lr_adv, betas=cfg.betas_adv)
    det_sched = StepLR(det_opt, step_size=cfg.lr_adv_step, gamma=cfg.lr_gamma)
    gen_sched = StepLR(gen_opt, step_size=cfg.lr_adv_step, gamma=cfg.lr_gamma)
    shuffle = torch.Generator().manual_seed(cfg.seed)
    mixer = torch.Generator().manual_seed(cfg.seed + 7919)

    log = RunLog(log_path)
    counts = {"gen": 0, "det": 0}

    def capped(phase):
        return cfg.max_steps is not None and counts[phase] >= cfg.max_steps

    def gen_step(batch, epoch):
        if capped("gen"):
            return
        lr = gen_opt.param_groups[0]["lr"]
        with frozen(detector):
            x_synth = generator(batch.image)
            loss, report = generator_objective(
                detector(x_synth), x_synth, batch.image, batch.gt,
                lam=cfg.lam, window=cfg.pool_window, multi_map=cfg.adv_multi_map)
            grad_norm = _optim_step(gen_opt, loss, generator, cfg.grad_clip,
                                    "gen", counts["gen"], lr)
        counts["gen"] += 1
        log.write({"step": counts["gen"], "epoch": epoch, "phase": "gen",
                   "lr": lr, "grad_norm": grad_norm, **report.to_dict()})

    def det_step(batch, epoch):
        if capped("det"):
            return
        lr = det_opt.param_groups[0]["lr"]
        use_real = bool(torch.rand((), generator=mixer).item() < cfg.real_mix)
        with frozen(generator):
            x_in = batch.image if use_real else generator(batch.image).detach()
        loss, report = detector_objective(detector(x_in), batch.gt, beta=cfg.beta,
                                          window=cfg.pool_window, mode=cfg.detector_loss)
        grad_norm = _optim_step(det_opt, loss, detector, cfg.grad_clip,
                                "det", counts["det"], lr)
        counts["det"] += 1
        log.write({"step": counts["det"], "epoch": epoch, "phase": "det",
                   "lr": lr, "grad_norm": grad_norm, "real_input": use_real,
                   **report.to_dict()})

    epoch = 0
    try:
        for epoch in range(cfg.adv_epochs):
            if cfg.alternation == "per_batch":
                for batch in iter_batches(samples, cfg.batch_size, shuffle, cfg.hflip):
                    gen_step(batch, epoch)
                    det_step(batch, epoch)
            else:
                for batch in iter_batches(samples, cfg.batch_size, shuffle, cfg.hflip):
                    gen_step(batch, epoch)
                for batch in iter_batches(samples, cfg.batch_size, shuffle, cfg.hflip):
                    det_step(batch, epoch)
            if capped("gen") and capped("det"):
                break
            det_sched.step()
            gen_sched.step()
    finally:
        log.close()
    return Checkpoint(detector=detector, generator=generator,
                      model_cfg=init.model_cfg, train_cfg=cfg, epoch=epoch + 1,
                      phase="adversarial", seed=cfg.seed,
                      det_optimizer=det_opt.state_dict(),
                      gen_optimizer=gen_opt.state_dict())


def _eval_batches(samples, batch_size):
    for start in range(0, len(samples), batch_size):
        yield collate(samples[start:start + batch_size])


def evaluate(detector, samples, batch_size=8):
    """Run the detector on the samples (id order) and average the four metrics."""
    _check_samples(samples)
    was_training = detector.training
    detector.eval()
    pairs, ids = [], []
    with torch.no_grad():
        for batch in _eval_batches(samples, batch_size):
            prob = detector(batch.image).final_prob
            for i, sid in enumerate(batch.ids):
                pairs.append((prob[i, 0].numpy(), batch.gt.mask[i, 0].numpy()))
                ids.append(sid)
    detector.train(was_training)
    return evaluate_pairs(pairs, ids)


def synthesize(generator, samples, batch_size=8):
    """Generator outputs for each sample, as (id, (3,H,W) tensor) pairs in id order."""
    was_training = generator.training
    generator.eval()
    out = []
    with torch.no_grad():
        for batch in _eval_batches(samples, batch_size):
            x_synth = generator(batch.image)
            out.extend((sid, x_synth[i].clone()) for i, sid in enumerate(batch.ids))
    generator.train(was_training)
    return out
