"""Adam, the round-based loss/learning-rate schedule and the training loop."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .data.dataset import PreprocessConfig, random_crop_pair, to_batch
from .errors import ContractError, NumericalError
from .inference import predict_samples
from .losses import LossWeightSchedule, epe, gt_pyramid, multiscale_loss
from .tensor import Tensor, backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    initial_lr: float = 1e-4
    halve_every: int = 10
    reset_moments_each_round: bool = False


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, cfg=OptimizerConfig()):
    """Bias-corrected Adam update of ``params`` ({name: Tensor}) in place.

    ``grads`` maps every parameter name to its gradient array.
    """
    for name in params:
        if grads.get(name) is None:
            raise ContractError(f"adam_step: parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)).astype(p.dtype)
    return params, state


def schedule(round_index, epoch, loss_schedule=None, opt=OptimizerConfig()):
    """(scale weights, learning rate) for ``epoch`` (0-based) of round ``round_index`` (1-based)."""
    loss_schedule = loss_schedule or LossWeightSchedule.default()
    if not 1 <= round_index <= loss_schedule.num_rounds:
        raise ContractError(f"round must be in 1..{loss_schedule.num_rounds}, got {round_index}")
    budget = loss_schedule.epochs(round_index)
    if not 0 <= epoch < budget:
        raise ContractError(f"epoch must be in 0..{budget - 1} for round {round_index}, got {epoch}")
    lr = opt.initial_lr * 0.5 ** (epoch // opt.halve_every)
    return loss_schedule.weights(round_index), lr


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    seed: int = 0
    loss_schedule: LossWeightSchedule = field(default_factory=LossWeightSchedule.default)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    crop_h: int = 0  # 0 = train on full images
    crop_w: int = 0


@dataclass
class TrainState:
    round: int = 1
    epoch: int = 0
    adam: AdamState = field(default_factory=AdamState)
    rng_state: dict = None

    def to_json(self):
        return {"round": self.round, "epoch": self.epoch, "step": self.adam.step, "rng": self.rng_state}


class Trainer:
    """Runs the rounds of a :class:`LossWeightSchedule` over in-memory samples."""

    def __init__(self, model, train_samples, test_samples=(), cfg=TrainConfig(), state=None):
        if not train_samples:
            raise ContractError("training set is empty")
        self.model = model
        self.train_samples = list(train_samples)
        self.test_samples = list(test_samples)
        self.cfg = cfg
        self.state = state or TrainState(rng_state=np.random.default_rng(cfg.seed).bit_generator.state)
        self.params = dict(model.named_parameters())
        self.log = []
        self.round_checkpoints = {}
        self._pyramids = {}

    # -- persistence -----------------------------------------------------

    def checkpoint_bytes(self):
        extra = {}
        for name in self.params:
            if name in self.state.adam.m:
                extra["adam.m." + name] = self.state.adam.m[name]
                extra["adam.v." + name] = self.state.adam.v[name]
        return checkpoint.save_model(self.model, self.state.to_json(), extra)

    @classmethod
    def from_checkpoint(cls, data, train_samples, test_samples=(), cfg=TrainConfig(), network_cfg=None):
        model, tensors, saved = checkpoint.load_model(data, cfg=network_cfg)
        adam = AdamState(step=int(saved.get("step", 0)))
        for name, _ in model.named_parameters():
            if "adam.m." + name in tensors:
                adam.m[name] = tensors["adam.m." + name].copy()
                adam.v[name] = tensors["adam.v." + name].copy()
        state = TrainState(round=int(saved.get("round", 1)), epoch=int(saved.get("epoch", 0)), adam=adam, rng_state=saved.get("rng"))
        return cls(model, train_samples, test_samples, cfg, state)

    # -- evaluation ------------------------------------------------------

    def evaluate(self, samples=None):
        samples = self.test_samples if samples is None else samples
        if not samples:
            return float("nan")
        preds = predict_samples(self.model, samples)
        return float(np.mean([epe(p, s.gt_disparity, s.mask()) for p, s in zip(preds, samples)]))

    # -- training --------------------------------------------------------

    def _batch(self, indices, rng):
        samples = [self.train_samples[i] for i in indices]
        crop = self.cfg.crop_h and self.cfg.crop_w
        if crop:
            pcfg = PreprocessConfig(crop_h=self.cfg.crop_h, crop_w=self.cfg.crop_w)
            samples = [random_crop_pair(s, pcfg, int(rng.integers(2**31))) for s in samples]
        left, right, gt, mask = to_batch(samples)
        if crop:
            gts, masks = gt_pyramid(gt, mask)
        else:
            pyr = [self._pyramid(i) for i in indices]
            gts = [np.concatenate([p[0][s] for p in pyr]) for s in range(7)]
            masks = [np.concatenate([p[1][s] for p in pyr]) for s in range(7)]
        return left, right, gt, mask, gts, masks

    def _pyramid(self, i):
        if i not in self._pyramids:
            s = self.train_samples[i]
            self._pyramids[i] = gt_pyramid(s.gt_disparity[None, None], s.mask()[None, None])
        return self._pyramids[i]

    def train_step(self, left, right, gts, masks, weights, lr):
        d, _, _ = self.model(Tensor(left), Tensor(right))
        loss = multiscale_loss(d, gts, masks, weights)
        value = float(loss.item())
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at step {self.state.adam.step}", self._snapshot(value))
        self.model.zero_grad()
        backward(loss)
        grads = {name: p.grad for name, p in self.params.items()}
        for name, g in grads.items():
            if g is None:
                grads[name] = np.zeros_like(self.params[name].data)
            elif not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in {name}", self._snapshot(value))
        adam_step(self.params, grads, self.state.adam, lr, self.cfg.optimizer)
        return value, d[0].data

    def _snapshot(self, loss):
        return {
            "round": self.state.round,
            "epoch": self.state.epoch,
            "step": self.state.adam.step,
            "loss": loss,
            "param_norms": {n: float(np.linalg.norm(p.data)) for n, p in self.params.items()},
        }

    def run_epoch(self):
        st = self.state
        weights, lr = schedule(st.round, st.epoch, self.cfg.loss_schedule, self.cfg.optimizer)
        rng = np.random.default_rng()
        rng.bit_generator.state = st.rng_state
        order = rng.permutation(len(self.train_samples))
        bs = self.cfg.batch_size
        losses, epes = [], []
        for start in range(0, len(order), bs):
            idx = order[start : start + bs]
            left, right, gt, mask, gts, masks = self._batch(idx, rng)
            loss, pred = self.train_step(left, right, gts, masks, weights, lr)
            losses.append(loss)
            epes.extend(epe(pred[k], gt[k], mask[k]) for k in range(len(idx)))
        st.rng_state = rng.bit_generator.state
        record = {
            "round": st.round,
            "epoch": st.epoch,
            "step": st.adam.step,
            "lr": lr,
            "loss": float(np.mean(losses)),
            "train_epe": float(np.mean(epes)),
            "test_epe": self.evaluate(),
        }
        self.log.append(record)
        log.info("round %(round)d epoch %(epoch)d loss %(loss).4f train EPE %(train_epe).3f test EPE %(test_epe).3f", record)
        return record

    def run(self, stop_after=None, on_record=None, on_round_end=None):
        """Train until the schedule is exhausted or ``stop_after=(round, epoch)`` has run.

        Returns the metric log (one dict per epoch).
        """
        st = self.state
        sched = self.cfg.loss_schedule
        if st.round == 1 and st.epoch == 0 and not self.log:
            record = {"round": 0, "epoch": 0, "step": st.adam.step, "test_epe": self.evaluate()}
            self.log.append(record)
            if on_record:
                on_record(record)
        while st.round <= sched.num_rounds:
            if st.epoch == 0 and st.round > 1 and self.cfg.optimizer.reset_moments_each_round:
                st.adam = AdamState(step=st.adam.step)
            record = self.run_epoch()
            if on_record:
                on_record(record)
            finished = (st.round, st.epoch)
            st.epoch += 1
            if st.epoch >= sched.epochs(st.round):
                data = self.checkpoint_bytes_at_round_end(finished[0])
                if on_round_end:
                    on_round_end(finished[0], data)
                st.round += 1
                st.epoch = 0
            if stop_after is not None and finished == tuple(stop_after):
                break
        return self.log

    def checkpoint_bytes_at_round_end(self, round_index):
        data = self.checkpoint_bytes()
        self.round_checkpoints[round_index] = data
        return data


def train(model, train_samples, test_samples=(), cfg=TrainConfig(), **kwargs):
    """Train ``model`` in place; returns ``(model, metric_log, round_checkpoints)``."""
    trainer = Trainer(model, train_samples, test_samples, cfg)
    trainer.run(**kwargs)
    return model, trainer.log, trainer.round_checkpoints
