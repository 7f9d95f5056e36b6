"""Supervised training on synthesized speckle pairs.

Every step draws ``batch_size`` fresh windows (new positions, new speckle)
from the clean images, runs the float32 graph for each, averages the
per-window MSE against the clean windows and applies one Adam update.
All randomness flows from ``TrainConfig.seed`` through named sub-streams, so
a run is a pure function of (config, images).
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .errors import ParameterError, ShapeError, TrainingDiverged
from .model import ModelConfig, Params, build_forward, forward_window, init_params
from .speckle import NoiseSpec, child_seed, sample_patches

log = logging.getLogger(__name__)

REFERENCE_PATCH_BUDGET = 560_000
REFERENCE_BATCH_SIZE = 32


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0
    looks: float = 1.0
    validation_size: int = 16
    log_every: int = 50
    strict_deterministic: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        ints = ("steps", "batch_size", "seed", "checkpoint_every", "validation_size", "log_every")
        for name in ints:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ParameterError(f"{name}: expected an integer, got {value!r}")
        if self.steps < 0:
            raise ParameterError("steps: must be >= 0 (0 evaluates without updating)")
        if self.batch_size < 1:
            raise ParameterError("batch_size: must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate: must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("beta1/beta2: must lie in [0, 1)")
        if not self.eps > 0:
            raise ParameterError("eps: must be positive")
        if not self.looks > 0:
            raise ParameterError("looks: must be positive")
        if self.checkpoint_every < 0 or self.validation_size < 1 or self.log_every < 1:
            raise ParameterError("checkpoint_every >= 0, validation_size >= 1 and log_every >= 1 are required")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        if not isinstance(data, dict):
            raise ParameterError("train config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"{unknown[0]}: unknown field")
        kwargs = dict(data)
        if "model" in kwargs:
            if not isinstance(kwargs["model"], dict):
                raise ParameterError("model: expected an object")
            try:
                kwargs["model"] = ModelConfig.from_dict(kwargs["model"])
            except (ParameterError, TypeError) as exc:
                raise ParameterError(f"model: {exc}") from None
        for name in ("learning_rate", "beta1", "beta2", "eps", "looks"):
            if name in kwargs and (isinstance(kwargs[name], bool) or not isinstance(kwargs[name], (int, float))):
                raise ParameterError(f"{name}: expected a number, got {kwargs[name]!r}")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)


def mse_loss(pred, ref) -> float:
    p, r = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if p.shape != r.shape:
        raise ShapeError(f"mse_loss: shapes {p.shape} and {r.shape} differ")
    return float(np.mean((p - r) ** 2))


def mse_tensor(pred: ad.Tensor, ref: np.ndarray) -> ad.Tensor:
    if pred.shape != np.shape(ref):
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {np.shape(ref)} differ")
    diff = pred - pred.graph.constant(ref)
    return (diff * diff).mean()


class Adam:
    def __init__(self, params: Params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            params[name] -= update.astype(params[name].dtype)


@dataclass
class TrainResult:
    params: Params
    config: ModelConfig
    history: list = field(default_factory=list)  # (step, train_loss, val_loss or nan)
    initial_val_mse: float = math.nan
    final_val_mse: float = math.nan


def batch_loss(params: Params, config: ModelConfig, pairs, dtype=np.float32, grads: bool = True):
    """Mean window MSE over ``pairs``; returns ``(loss, {name: grad})``."""
    g = ad.Graph(dtype)
    P = {name: g.leaf(arr, requires_grad=grads, name=name) for name, arr in params.items()}
    total = None
    for pair in pairs:
        term = mse_tensor(build_forward(g, pair.noisy, P, config), pair.clean)
        total = term if total is None else total + term
    loss = total * (1.0 / len(pairs))
    if grads:
        g.backward(loss)
    return float(loss.data), {name: t.grad for name, t in P.items()}


def validation_mse(params: Params, config: ModelConfig, pairs) -> float:
    return float(np.mean([mse_loss(forward_window(p.noisy, params, config), p.clean) for p in pairs]))


def train(tc: TrainConfig, images, on_log: Callable[[int, float, float], None] | None = None,
          checkpoint_path=None, params: Params | None = None) -> TrainResult:
    if not images:
        raise ParameterError("training set is empty")
    cfg = tc.model
    params = init_params(cfg, tc.seed) if params is None else {k: v.copy() for k, v in params.items()}
    opt = Adam(params, tc.learning_rate, tc.beta1, tc.beta2, tc.eps)
    R = cfg.search_radius
    val_pairs = sample_patches(images, tc.validation_size, R, NoiseSpec(tc.looks, child_seed(tc.seed, 0xA11D)))

    def draw(step: int):
        return sample_patches(images, tc.batch_size, R, NoiseSpec(tc.looks, child_seed(tc.seed, 0xBA7C, step)))

    result = TrainResult(params=params, config=cfg)
    result.initial_val_mse = validation_mse(params, cfg, val_pairs)
    result.history.append((0, math.nan, result.initial_val_mse))
    if on_log:
        on_log(0, math.nan, result.initial_val_mse)

    pool = None if tc.strict_deterministic else ThreadPoolExecutor(max_workers=1)
    try:
        pending = pool.submit(draw, 1) if pool and tc.steps else None
        for step in range(1, tc.steps + 1):
            if pool:
                pairs = pending.result()
                pending = pool.submit(draw, step + 1) if step < tc.steps else None
            else:
                pairs = draw(step)
            loss, grads = batch_loss(params, cfg, pairs)
            if not math.isfinite(loss):
                raise TrainingDiverged(step, loss)
            opt.step(params, grads)
            last = step == tc.steps
            val = validation_mse(params, cfg, val_pairs) if (last or step % (tc.log_every * 10) == 0) else math.nan
            if step % tc.log_every == 0 or last:
                result.history.append((step, loss, val))
                if on_log:
                    on_log(step, loss, val)
                log.debug("step %d loss %.6g", step, loss)
            if checkpoint_path and tc.checkpoint_every and (step % tc.checkpoint_every == 0 or last):
                save_checkpoint(checkpoint_path, params, cfg, meta={"step": step, "train": tc.to_dict()})
    finally:
        if pool:
            pool.shutdown(wait=True, cancel_futures=True)
    result.final_val_mse = validation_mse(params, cfg, val_pairs) if tc.steps else result.initial_val_mse
    return result
