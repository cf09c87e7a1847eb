"""Optimizer, loss assembly, schedules, and the deterministic training loop.

Runs are a pure function of (model seed, shuffle seed, data): batches are
drawn by a seeded per-epoch shuffle, the optimizer is plain bias-corrected
Adam, and every float that reaches a file goes through fixed 17-significant-
digit formatting, so identical configurations reproduce identical artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .errors import ContractError, NumericsError, ShapeError
from .metrics import chamfer_l1_loss, chamfer_l2_loss
from .report import write_loss_curve
from .tensor import Tensor


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise ContractError(f"parameter {name} has no gradient buffer")
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} vs parameter {p.data.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_tensors(self) -> dict:
        """Flat named-array view for checkpointing."""
        out = {
            "step": np.float64(self.step_count),
            "lr": np.float64(self.lr),
            "beta1": np.float64(self.beta1),
            "beta2": np.float64(self.beta2),
            "eps": np.float64(self.eps),
        }
        out.update({f"m:{k}": v for k, v in self.m.items()})
        out.update({f"v:{k}": v for k, v in self.v.items()})
        return out

    def load_state_tensors(self, state: dict):
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for k in self.m:
            self.m[k] = np.array(state[f"m:{k}"])
            self.v[k] = np.array(state[f"v:{k}"])


def alpha_schedule(epoch: float, total_ramp: int = 25) -> float:
    """Coarse-loss weight: linear from 0.01 at epoch 0 to 1.0 at the ramp end."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return 0.01 + (1.0 - 0.01) * min(epoch / total_ramp, 1.0)


def completion_loss(coarse, final, gt, alpha: float) -> Tensor:
    """alpha * CD_L1(coarse, gt) + CD_L1(final, gt), differentiable."""
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    return T.add(T.scale(chamfer_l1_loss(coarse, gt), alpha), chamfer_l1_loss(final, gt))


def reconstruction_loss(recon, target) -> Tensor:
    return chamfer_l2_loss(recon, target)


@dataclass(frozen=True)
class TrainConfig:
    task: str = "reconstruct"  # reconstruct | complete
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    alpha_ramp: int = 25
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    completion_mode: str = "full"
    grad_clip: float = 0.0  # 0: off; else clip global gradient L2 norm

    def __post_init__(self):
        if self.task not in ("reconstruct", "complete"):
            raise ContractError(f"unknown task {self.task!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be positive")


def default_train_config(task: str) -> TrainConfig:
    if task == "complete":
        return TrainConfig(task="complete", epochs=100, batch_size=16, lr=1e-3)
    return TrainConfig(task="reconstruct", epochs=200, batch_size=32, lr=1e-4)


def _clip_gradients(params: dict, max_norm: float):
    total = np.sqrt(sum(float((p.grad**2).sum()) for p in params.values()))
    if total > max_norm:
        factor = max_norm / total
        for p in params.values():
            p.grad *= factor


def _check_finite(loss_value: float, epoch: int, batch: int, params: dict):
    if np.isfinite(loss_value):
        return
    norms = {name.split(".")[0] for name in params}
    detail = ", ".join(
        f"{g}={np.sqrt(sum(float((p.data ** 2).sum()) for n, p in params.items() if n.startswith(g))):.3e}"
        for g in sorted(norms)
    )
    raise NumericsError(
        f"non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {detail}"
    )


@dataclass
class TrainResult:
    history: list  # (train_loss, val_loss) per epoch
    checkpoint: Checkpoint


def _epoch_alpha(config: TrainConfig, epoch: int) -> float:
    return alpha_schedule(epoch, config.alpha_ramp)


def _batch_loss(model, config: TrainConfig, inputs: Tensor, targets: Tensor, epoch: int) -> Tensor:
    if config.task == "reconstruct":
        return reconstruction_loss(model(inputs), targets)
    coarse, final, _ = model.forward(inputs, mode=config.completion_mode)
    if config.completion_mode == "vanilla":
        return chamfer_l1_loss(final, targets)
    return completion_loss(coarse, final, targets, _epoch_alpha(config, epoch))


def evaluate_loss(model, config: TrainConfig, inputs: np.ndarray, targets: np.ndarray,
                  epoch: int) -> float:
    total = 0.0
    for s in range(0, len(inputs), config.batch_size):
        xb = Tensor(inputs[s : s + config.batch_size])
        yb = Tensor(targets[s : s + config.batch_size])
        loss = _batch_loss(model, config, xb, yb, epoch)
        total += loss.item() * xb.shape[0]
    return total / len(inputs)


def train(model, config: TrainConfig, train_inputs, train_targets, val_inputs=None,
          val_targets=None, out_dir=None, run_config: dict | None = None,
          log=None) -> TrainResult:
    """Run the full loop: seeded shuffles, Adam steps, per-epoch train/val
    losses, periodic checkpoints.

    For reconstruction, inputs and targets are the same [S, n, 3] array; for
    completion, inputs are the partial clouds. Writes ``loss_curve.csv`` and
    ``checkpoint.axck`` under out_dir when given.
    """
    train_inputs = np.asarray(train_inputs, dtype=np.float64)
    train_targets = np.asarray(train_targets, dtype=np.float64)
    if len(train_inputs) != len(train_targets) or len(train_inputs) == 0:
        raise ContractError("training inputs/targets must be nonempty and aligned")
    params = model.parameters()
    adam = Adam(params, lr=config.lr)
    shuffle_rng = np.random.default_rng(config.seed)
    history = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def make_checkpoint(epoch):
        return Checkpoint(
            params={k: p.data for k, p in params.items()},
            optimizer=adam.state_tensors(),
            epoch=epoch,
            history=list(history),
            config=dict(run_config or {}),
        )

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_inputs))
        epoch_loss = 0.0
        for b, s in enumerate(range(0, len(order), config.batch_size)):
            idx = order[s : s + config.batch_size]
            xb = Tensor(train_inputs[idx])
            yb = Tensor(train_targets[idx])
            loss = _batch_loss(model, config, xb, yb, epoch)
            value = loss.item()
            _check_finite(value, epoch, b, params)
            adam.zero_grad()
            T.backward(loss)
            if config.grad_clip > 0.0:
                _clip_gradients(params, config.grad_clip)
            adam.step()
            epoch_loss += value * len(idx)
        train_loss = epoch_loss / len(train_inputs)
        if val_inputs is not None and len(val_inputs):
            val_loss = evaluate_loss(model, config, val_inputs, val_targets, epoch)
        else:
            val_loss = float("nan")
        history.append((train_loss, val_loss))
        if log is not None:
            log(epoch, train_loss, val_loss)
        if out_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_ep{epoch + 1:04d}.axck", make_checkpoint(epoch + 1))

    final = make_checkpoint(config.epochs)
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.axck", final)
        write_loss_curve(out_dir / "loss_curve.csv", history)
    return TrainResult(history, final)


def load_params_into(model, saved: dict):
    """Copy checkpoint arrays into a freshly built model's parameters."""
    params = model.parameters()
    missing = set(params) - set(saved)
    extra = set(saved) - set(params)
    if missing or extra:
        raise ContractError(
            f"checkpoint/model mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}"
        )
    for name, p in params.items():
        arr = np.asarray(saved[name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise ShapeError(f"parameter {name}: checkpoint {arr.shape} vs model {p.data.shape}")
        p.data = arr.copy()
