"""Losses, clip-level optimization (EPA or per-frame) and the staged
training schedule."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import checkpoint_name, load_checkpoint, save_checkpoint
from .codec import CodecOutput
from .config import ModelConfig, TrainConfig
from .frames import CODEC_STRIDE, Frame, pad_tensor, window_clips
from .model import ReferenceState, VideoCodec, clamp_pixels
from .quant import QuantMode

log = logging.getLogger(__name__)

LAMBDAS = (2048, 1024, 512, 256)


def mu_schedule(t: int) -> float:
    """Distortion weight of frame t: 1 at the first P-frame, +0.2 per frame."""
    if t < 2:
        raise ValueError(f"mu_schedule is defined for P-frames (t >= 2), got t={t}")
    return 1.0 + 0.2 * (t - 2)


@dataclass
class FrameLoss:
    t: int
    distortion: torch.Tensor
    bpp: torch.Tensor
    mu: float
    reg: torch.Tensor
    total: torch.Tensor


def frame_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    rate_bits: torch.Tensor,
    t: int,
    lmbda: float,
    orig_hw: tuple[int, int] | None = None,
    modulated: bool = True,
    reg: torch.Tensor | float = 0.0,
) -> FrameLoss:
    """lambda * mu_t * MSE + bpp (+ reg), measured on the unpadded area.

    t=1 is the I-frame and always has unit weight.
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    h, w = orig_hw or x.shape[-2:]
    d = torch.mean((x[..., :h, :w] - x_hat[..., :h, :w]) ** 2)
    bpp = rate_bits / (x.shape[0] * h * w)
    mu = mu_schedule(t) if (modulated and t >= 2) else 1.0  # None counts as off
    reg = torch.as_tensor(reg, dtype=d.dtype)
    total = lmbda * mu * d + bpp + reg
    if not torch.isfinite(total):
        raise FloatingPointError(f"non-finite loss at frame {t}")
    return FrameLoss(t, d, bpp, mu, reg, total)


def regularization(outputs: Sequence[CodecOutput], weight: float = 0.01) -> torch.Tensor:
    """Mean squared residual between the flow's final x slot and the
    condition, summed over conditional codec outputs."""
    terms = [torch.mean((o.x2 - o.cond) ** 2) for o in outputs if o.x2 is not None and o.cond is not None]
    if not terms or weight == 0:
        return torch.zeros(())
    return weight * torch.stack(terms).sum()


@dataclass
class LossBreakdown:
    frames: list[FrameLoss] = field(default_factory=list)

    @property
    def total(self) -> torch.Tensor:
        return torch.stack([f.total for f in self.frames]).sum()

    @property
    def reg(self) -> float:
        return float(sum(float(torch.as_tensor(f.reg).detach()) for f in self.frames))

    @property
    def distortion(self) -> list[float]:
        return [float(f.distortion.detach()) for f in self.frames]

    @property
    def bpp(self) -> list[float]:
        return [float(torch.as_tensor(f.bpp).detach()) for f in self.frames]

    @property
    def mu(self) -> list[float]:
        return [f.mu for f in self.frames]

    def summary(self) -> dict:
        return {
            "D": float(np.mean(self.distortion)),
            "R": float(np.sum(self.bpp)),
            "reg": self.reg,
            "total": float(self.total.detach()),
        }


def run_clip(
    model: VideoCodec,
    frames: Sequence[torch.Tensor],
    lmbda: float,
    cfg: TrainConfig,
    *,
    detach_refs: bool = False,
    mc_only: bool = False,
    orig_hw: tuple[int, int] | None = None,
    on_frame: Callable[[FrameLoss], None] | None = None,
) -> LossBreakdown:
    """Code a clip (I then P frames) and collect per-frame losses.

    With ``detach_refs`` every buffered reference is cut from the graph
    before it is used, so no gradient crosses frame boundaries.
    ``mc_only`` scores P-frames by the motion-compensated prediction and
    the motion rate, and leaves the I-frame out of the objective.
    """
    mode = QuantMode.ROUND_STE if cfg.round_based else QuantMode.NOISE
    out = LossBreakdown()
    intra = model.code_iframe(frames[0], mode)
    if not mc_only:
        fl = frame_loss(frames[0], intra.reconstruction, intra.rate_bits, 1, lmbda, orig_hw, cfg.modulated)
        out.frames.append(fl)
        if on_frame:
            on_frame(fl)
    state = ReferenceState().after_intra(intra.reconstruction)
    for t in range(2, len(frames) + 1):
        if detach_refs:
            state = state.detached()
        x = frames[t - 1]
        if mc_only:
            _, motion, prop, _, x_c = model.predict_pframe(x, state, mode)
            pred = clamp_pixels(x_c)
            fl = frame_loss(x, pred, motion.rate_bits, t, lmbda, orig_hw, cfg.modulated,
                            regularization([motion], cfg.reg_weight))
            state = state.after_inter(pred, motion.reconstruction, prop)
        else:
            res = model.code_pframe(x, state, mode)
            fl = frame_loss(x, res.reconstruction, res.rate_bits, t, lmbda, orig_hw, cfg.modulated,
                            regularization([res.motion, res.inter], cfg.reg_weight))
            state = res.state
        out.frames.append(fl)
        if on_frame:
            on_frame(fl)
    return out


def _update(optimizer, params, loss: torch.Tensor, clip: float) -> None:
    optimizer.zero_grad(set_to_none=True)
    if not loss.requires_grad:
        return
    loss.backward()
    if clip:
        torch.nn.utils.clip_grad_norm_(params, clip)
    optimizer.step()


def epa_step(
    model: VideoCodec,
    optimizer: torch.optim.Optimizer,
    frames: Sequence[torch.Tensor],
    lmbda: float,
    cfg: TrainConfig,
    epa: bool | None = None,
    orig_hw: tuple[int, int] | None = None,
    mc_only: bool = False,
) -> LossBreakdown:
    """One optimization pass over a clip.

    EPA keeps the whole clip in one graph and applies a single update to the
    summed loss; otherwise each frame is updated on its own with detached
    references.
    """
    epa = cfg.epa if epa is None else epa
    params = [p for g in optimizer.param_groups for p in g["params"]]
    model.train()
    if epa:
        bd = run_clip(model, frames, lmbda, cfg, mc_only=mc_only, orig_hw=orig_hw)
        _update(optimizer, params, bd.total, cfg.grad_clip)
        return bd
    return run_clip(
        model, frames, lmbda, cfg, detach_refs=True, mc_only=mc_only, orig_hw=orig_hw,
        on_frame=lambda fl: _update(optimizer, params, fl.total, cfg.grad_clip),
    )


# -- data -------------------------------------------------------------------


class ClipSampler:
    """Random clips with a shared crop/flip, padded to the codec stride."""

    def __init__(self, sequences: Sequence[Sequence[Frame]], crop: int, seed: int = 0, flip_prob: float = 0.5):
        if not sequences:
            raise ValueError("no training sequences")
        self.sequences = sequences
        self.crop = crop
        self.flip_prob = flip_prob
        self.rng = np.random.default_rng(seed)

    def sample(self, clip_len: int, batch: int = 1) -> list[torch.Tensor]:
        clips = []
        for _ in range(batch):
            seq = self.sequences[int(self.rng.integers(len(self.sequences)))]
            start = int(self.rng.integers(0, len(seq) - clip_len + 1))
            clip = next(window_clips(seq[start : start + clip_len], clip_len, self.crop,
                                     flip_prob=self.flip_prob, rng=self.rng))
            clips.append(clip.to_tensors())
        return [pad_tensor(torch.cat(ts, dim=0), CODEC_STRIDE) for ts in zip(*clips)]


# -- staged schedule --------------------------------------------------------


@dataclass
class Phase:
    name: str
    clip_len: int
    fraction: float
    groups: tuple[str, ...] | None = None  # None: everything not frozen by the stage
    mc_only: bool = False
    batch_size: int = 1
    lr: tuple[float, float] = (1e-4, 1e-5)


@dataclass
class StageConfig:
    stage: int
    phases: list[Phase]
    steps: int
    model_flags: dict
    modulated: bool
    frozen: tuple[str, ...] = ()
    lambdas: tuple[int, ...] = (2048,)
    sweep_steps: int = 0

    @property
    def clip_lengths(self) -> list[int]:
        return [p.clip_len for p in self.phases]


def stage_config(stage: int, steps: int | None = None, sweep_steps: int | None = None) -> StageConfig:
    """Desk-scale version of the four-step schedule."""
    if stage == 1:
        cfg = StageConfig(
            1, [Phase("epa-round-5f", 5, 1.0)], 500,
            dict(multiscale=False, feature_mod=False, quadtree=False), modulated=False,
            lambdas=LAMBDAS,
        )
    elif stage == 2:
        cfg = StageConfig(
            2,
            [
                Phase("mcnet-2f", 2, 0.25, ("mcnet",), mc_only=True),
                Phase("mcnet-inter-2f", 2, 0.25, ("mcnet", "inter")),
                Phase("e2e-5f", 5, 0.5),
            ],
            1000, dict(multiscale=True, feature_mod=False, quadtree=False), modulated=False,
            frozen=("iframe",),
        )
    elif stage == 3:
        cfg = StageConfig(
            3,
            [Phase("mod-2f", 2, 1 / 3), Phase("mod-5f", 5, 1 / 3), Phase("mod-7f", 7, 1 / 3, batch_size=2)],
            1000, dict(multiscale=True, feature_mod=True, quadtree=False), modulated=True,
            frozen=("iframe",),
        )
    elif stage == 4:
        cfg = StageConfig(
            4,
            [
                Phase("ctx-pretrain-7f", 7, 1 / 3, ("entropy_context",)),
                Phase("e2e-7f", 7, 2 / 3, lr=(5e-5, 1e-5)),
            ],
            1500, dict(multiscale=True, feature_mod=True, quadtree=True), modulated=True,
            frozen=("iframe",), lambdas=LAMBDAS,
        )
    else:
        raise ValueError(f"unknown stage {stage}")
    if steps is not None:
        cfg.steps = steps
    cfg.sweep_steps = sweep_steps if sweep_steps is not None else max(1, cfg.steps // 5)
    return cfg


def set_trainable(model: VideoCodec, groups: Sequence[str] | None, frozen: Sequence[str] = ()) -> list[torch.nn.Parameter]:
    """Enable gradients for the named groups (all when None) minus ``frozen``."""
    table = model.parameter_groups()
    names = {n for n, _ in model.named_parameters()}
    chosen = names if groups is None else {n for g in groups for n in table[g]}
    for g in frozen:
        chosen -= set(table[g])
    params = []
    for n, p in model.named_parameters():
        p.requires_grad_(n in chosen)
        if n in chosen:
            params.append(p)
    return params


def train_steps(
    model: VideoCodec,
    sampler: ClipSampler,
    lmbda: float,
    cfg: TrainConfig,
    steps: int,
    *,
    clip_len: int,
    batch_size: int = 1,
    groups: Sequence[str] | None = None,
    frozen: Sequence[str] = (),
    lr: tuple[float, float] | None = None,
    mc_only: bool = False,
    on_step: Callable[[int, LossBreakdown], None] | None = None,
) -> list[float]:
    """Plain training loop: Adam with a cosine learning-rate decay."""
    params = set_trainable(model, groups, frozen)
    if not params:
        raise ValueError("no trainable parameters selected")
    lr0, lr1 = lr or (cfg.lr, cfg.lr_end)
    opt = torch.optim.Adam(params, lr=lr0, foreach=True)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(steps, 1), eta_min=lr1)
    totals = []
    orig = (sampler.crop, sampler.crop)
    try:
        for step in range(steps):
            frames = sampler.sample(clip_len, batch_size)
            bd = epa_step(model, opt, frames, lmbda, cfg, orig_hw=orig, mc_only=mc_only)
            sched.step()
            totals.append(float(bd.total.detach()))
            if on_step:
                on_step(step, bd)
    finally:
        for p in model.parameters():
            p.requires_grad_(True)
    return totals


class CsvLog:
    FIELDS = ("step", "stage", "phase", "lambda", "D", "R", "total")

    def __init__(self, path):
        self.path = Path(path) if path else None
        self._fh = None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            new = not self.path.exists()
            self._fh = open(self.path, "a", newline="")
            self._w = csv.writer(self._fh)
            if new:
                self._w.writerow(self.FIELDS)

    def write(self, step, stage, phase, lmbda, bd: LossBreakdown) -> None:
        if self._fh is None:
            return
        s = bd.summary()
        self._w.writerow([step, stage, phase, lmbda, f"{s['D']:.6g}", f"{s['R']:.6g}", f"{s['total']:.6g}"])

    def close(self):
        if self._fh:
            self._fh.close()


def run_stage(
    stage: StageConfig,
    sequences: Sequence[Sequence[Frame]],
    checkpoint=None,
    out_dir=".",
    train_cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    log_path=None,
) -> dict[int, Path]:
    """Train one stage and write ``stage{K}_lambda{L}.ckpt`` per rate point."""
    tcfg = copy.deepcopy(train_cfg or TrainConfig())
    if tcfg.modulated is None:
        tcfg.modulated = stage.modulated
    out_dir = Path(out_dir)
    if stage.stage > 1 and checkpoint is None:
        raise FileNotFoundError(f"stage {stage.stage} needs the stage {stage.stage - 1} checkpoint")
    if checkpoint is not None:
        from .checkpoint import read_checkpoint

        manifest, _ = read_checkpoint(checkpoint)
        base = ModelConfig.from_dict(manifest["config"])
        cfg = ModelConfig.from_dict({**base.to_dict(), **stage.model_flags})
        model, _ = load_checkpoint(checkpoint, cfg)
    else:
        base = model_cfg or ModelConfig()
        model = VideoCodec(ModelConfig.from_dict({**base.to_dict(), **stage.model_flags}))
    torch.manual_seed(tcfg.seed)
    sampler = ClipSampler(sequences, tcfg.crop, seed=tcfg.seed)
    csv_log = CsvLog(log_path)
    counter = [0]

    def logger(phase_name, lmbda):
        def on_step(step, bd):
            counter[0] += 1
            if counter[0] % max(tcfg.log_every, 1) == 0:
                csv_log.write(counter[0], stage.stage, phase_name, lmbda, bd)
        return on_step

    outputs = {}
    top = stage.lambdas[0] if stage.lambdas else 2048
    try:
        for phase in stage.phases:
            n = max(1, int(round(stage.steps * phase.fraction)))
            log.info("stage %d phase %s: %d steps at lambda=%d", stage.stage, phase.name, n, top)
            train_steps(
                model, sampler, top, tcfg, n,
                clip_len=phase.clip_len, batch_size=phase.batch_size, groups=phase.groups,
                frozen=stage.frozen, lr=phase.lr, mc_only=phase.mc_only, on_step=logger(phase.name, top),
            )
        outputs[top] = save_checkpoint(out_dir / checkpoint_name(stage.stage, top), model, top, stage.stage)
        final = stage.phases[-1]
        for lmbda in stage.lambdas[1:]:
            sub = copy.deepcopy(model)
            train_steps(
                sub, sampler, lmbda, tcfg, stage.sweep_steps,
                clip_len=final.clip_len, batch_size=final.batch_size, frozen=stage.frozen,
                lr=final.lr, on_step=logger(f"{final.name}-sweep", lmbda),
            )
            outputs[lmbda] = save_checkpoint(out_dir / checkpoint_name(stage.stage, lmbda), sub, lmbda, stage.stage)
    finally:
        csv_log.close()
    return outputs
