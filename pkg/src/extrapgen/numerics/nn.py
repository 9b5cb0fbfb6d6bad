"""Small feed-forward networks and a minibatch training loop on top of the tape."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np

from ..errors import NumericError, TrainingError
from . import autodiff as ad
from .optim import adam_init, adam_step
from .rng import Rng


@dataclass(frozen=True)
class Mlp:
    """Dense tanh network; parameters live in a flat dict under ``prefix``.

    ``sizes`` = (in, hidden..., out). The output layer is linear.
    """

    prefix: str
    sizes: tuple[int, ...]

    def init(self, rng: Rng, out_scale: float = 1.0) -> dict[str, np.ndarray]:
        params = {}
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            scale = np.sqrt(1.0 / fan_in)
            if i == n_layers - 1:
                scale *= out_scale
            params[f"{self.prefix}W{i}"] = rng.normal((fan_in, fan_out)) * scale
            params[f"{self.prefix}b{i}"] = np.zeros((1, fan_out))
        return params

    def __call__(self, params: Mapping, x):
        h = x
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            h = ad.matmul(h, params[f"{self.prefix}W{i}"]) + params[f"{self.prefix}b{i}"]
            if i < n_layers - 1:
                h = ad.tanh(h)
        return h

    def keys(self) -> list[str]:
        n_layers = len(self.sizes) - 1
        return [f"{self.prefix}{k}{i}" for i in range(n_layers) for k in ("W", "b")]


def init_mlp(rng: Rng, sizes, prefix: str = "", out_scale: float = 1.0) -> dict[str, np.ndarray]:
    return Mlp(prefix, tuple(sizes)).init(rng, out_scale)


def mlp_forward(params, x, sizes, prefix: str = ""):
    return Mlp(prefix, tuple(sizes))(params, x)


def train_loop(
    loss_fn: Callable[[dict, np.ndarray], "ad.Tensor"],
    params: dict[str, np.ndarray],
    n_rows: int,
    steps: int,
    batch_size: int,
    lr: float,
    rng: Rng,
    trainable: set[str] | None = None,
    record_every: int = 50,
    final_lr_frac: float = 1.0,
) -> tuple[dict[str, np.ndarray], list[tuple[int, float]]]:
    """Minimise ``loss_fn(tensors, batch_idx)`` with Adam over random minibatches.

    Only keys in ``trainable`` (default: all) are updated. With
    ``final_lr_frac < 1`` the step size follows a cosine decay from ``lr`` to
    ``lr * final_lr_frac``. Returns the final
    parameters and a training curve of ``(step, loss)`` pairs. A NaN loss
    raises :class:`TrainingError` carrying the last finite parameters.
    """
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    keys = sorted(params if trainable is None else trainable)
    frozen = {k: v for k, v in params.items() if k not in keys}
    state = adam_init({k: params[k] for k in keys}, lr=lr)
    curve: list[tuple[int, float]] = []
    batch_size = min(batch_size, n_rows)
    order = rng.permutation(n_rows)
    pos = 0
    for step in range(steps):
        if pos + batch_size > n_rows:
            order = rng.permutation(n_rows)
            pos = 0
        idx = order[pos:pos + batch_size]
        pos += batch_size

        def wrapped(t):
            return loss_fn({**frozen, **t}, idx)

        try:
            loss, grads = ad.value_and_grad(wrapped, {k: params[k] for k in keys})
        except NumericError as e:
            raise TrainingError(f"loss became NaN at step {step} ({e})", last_state=params, step=step) from e
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}", last_state=params, step=step)
        if final_lr_frac != 1.0:
            frac = 0.5 * (1.0 + np.cos(np.pi * step / max(steps - 1, 1)))
            state = replace(state, lr=lr * (final_lr_frac + (1.0 - final_lr_frac) * frac))
        upd, state = adam_step(state, {k: params[k] for k in keys}, grads)
        params = {**params, **upd}
        if step % record_every == 0 or step == steps - 1:
            curve.append((step, loss))
    return params, curve
