"""Training and evaluation loops.

Every forward pass re-derives the quantized weights from the shadow copy,
optionally perturbs them with fresh multiplicative noise, and (in VAT mode)
re-deals the Monte-Carlo curves to output channels according to the pool's
reassignment policy. Results depend only on the seed.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..adc import TransferCurve
from ..fixedpoint import QuantConfig
from .activation import ActMode, CurveBank, ReassignPolicy, VatPool
from .data import Dataset
from .network import DeskCNN
from .quant import NoiseConfig

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: dict[str, torch.Tensor] | None):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 32
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay: float = 0.1
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    mode: str


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord):
        self.records.append(rec)

    @property
    def final_test_acc(self) -> float:
        return self.records[-1].test_acc if self.records else float("nan")

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_acc", "test_acc", "mode"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.train_acc:.4f}", f"{r.test_acc:.4f}", r.mode])


def _seed_all(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def configure(net: DeskCNN, qcfg: QuantConfig | None, act_mode: ActMode | str,
              curve: TransferCurve | CurveBank | None = None, pool: VatPool | None = None,
              noise: NoiseConfig | None = None, generator: torch.Generator | None = None):
    """Put ``net`` into one hardware configuration (weights, activations, noise)."""
    act_mode = ActMode(act_mode)
    if act_mode is ActMode.IDEAL_RELU_FLOAT:
        net.set_quantization(None)
        net.set_activation(act_mode)
    else:
        net.set_quantization(qcfg or QuantConfig())
        net.set_activation(act_mode, qcfg, curve=curve, pool=pool)
    net.set_noise(noise or NoiseConfig(), generator)


@torch.no_grad()
def accuracy(net: DeskCNN, x: torch.Tensor, y: torch.Tensor, batch_size: int = 512) -> float:
    was_training = net.training
    net.eval()
    correct = 0
    for k in range(0, y.numel(), batch_size):
        correct += int((net(x[k:k + batch_size]).argmax(1) == y[k:k + batch_size]).sum())
    net.train(was_training)
    return 100.0 * correct / y.numel()


def train(net: DeskCNN, data: Dataset, qcfg: QuantConfig | None, act_mode: ActMode | str,
          cfg: TrainConfig = TrainConfig(), noise: NoiseConfig | None = None,
          curve: TransferCurve | CurveBank | None = None, vat_pool: VatPool | None = None,
          label: str | None = None) -> History:
    """Train ``net`` in place and return the per-epoch history."""
    act_mode = ActMode(act_mode)
    gen = _seed_all(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 1)
    configure(net, qcfg, act_mode, curve=curve, pool=vat_pool, noise=noise, generator=noise_gen)
    opt = torch.optim.SGD(net.parameters(), lr=cfg.lr, momentum=cfg.momentum,
                          weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, list(cfg.lr_decay_epochs), cfg.lr_decay)
    history = History()
    label = label or act_mode.value
    policy = vat_pool.policy if vat_pool is not None else None
    if policy is ReassignPolicy.FIXED:
        net.reassign(gen)
    last_good = net.shadow_state()
    n = data.n_train
    for epoch in range(1, cfg.epochs + 1):
        net.train()
        if policy is ReassignPolicy.PER_EPOCH:
            net.reassign(gen)
        order = torch.randperm(n, generator=gen)
        correct = 0
        for k in range(0, n, cfg.batch_size):
            idx = order[k:k + cfg.batch_size]
            xb, yb = data.x_train[idx], data.y_train[idx]
            if policy is ReassignPolicy.PER_ITERATION:
                net.reassign(gen)
            logits = net(xb)
            loss = F.cross_entropy(logits, yb)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {k // cfg.batch_size}", last_good)
            opt.zero_grad()
            loss.backward()
            opt.step()
            correct += int((logits.argmax(1) == yb).sum())
        sched.step()
        last_good = net.shadow_state()
        if policy is not None and policy is not ReassignPolicy.FIXED:
            net.reassign(gen)
        rec = EpochRecord(epoch, 100.0 * correct / n, accuracy(net, data.x_test, data.y_test), label)
        history.append(rec)
        log.debug("epoch %d train %.2f test %.2f (%s)", epoch, rec.train_acc, rec.test_acc, label)
    return history


@dataclass(frozen=True)
class CurveSetAccuracy:
    accuracies: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def min(self) -> float:
        return float(np.min(self.accuracies))


def evaluate(net: DeskCNN, data: Dataset, qcfg: QuantConfig | None, act_mode: ActMode | str,
             curve: TransferCurve | None = None, noise: NoiseConfig | None = None,
             pool: VatPool | None = None, seed: int = 0, repeats: int = 1) -> float:
    """Test accuracy under one hardware configuration.

    With noise or a VAT pool, ``repeats`` independent draws are averaged.
    """
    gen = torch.Generator().manual_seed(seed)
    configure(net, qcfg, act_mode, curve=curve, pool=pool, noise=noise, generator=gen)
    accs = []
    for _ in range(repeats):
        net.reassign(gen)
        accs.append(accuracy(net, data.x_test, data.y_test))
    return float(np.mean(accs))


def evaluate_curves(net: DeskCNN, data: Dataset, qcfg: QuantConfig,
                    curves: Sequence[TransferCurve], noise: NoiseConfig | None = None,
                    seed: int = 0) -> CurveSetAccuracy:
    """Accuracy with every ADC of the network set to each curve in turn."""
    bank = CurveBank(curves)
    accs = []
    for k in range(len(bank)):
        single = CurveBank([bank.curves[k]])
        accs.append(evaluate(net, data, qcfg, ActMode.FIXED_CURVE, curve=single, noise=noise,
                             seed=seed + k))
    return CurveSetAccuracy(tuple(accs))


def save_checkpoint(net: DeskCNN, path, qcfg: QuantConfig | None, seed: int,
                    history: History | None = None) -> None:
    """npz container: float32 shadow weights plus a JSON metadata record."""
    meta = {
        "format": "imcadc-checkpoint/1",
        "topology": net.topology,
        "qcfg": asdict(qcfg) if qcfg is not None else None,
        "seed": seed,
        "history": [asdict(r) for r in history.records] if history else [],
    }
    arrays = {f"w/{k}": v.detach().cpu().numpy().astype(np.float32)
              for k, v in net.state_dict().items()}
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[DeskCNN, dict]:
    with np.load(path) as f:
        meta = json.loads(str(f["meta"]))
        state = {k[2:]: torch.from_numpy(f[k]) for k in f.files if k.startswith("w/")}
    net = DeskCNN(**meta["topology"])
    net.load_state_dict(state)
    return net, meta
