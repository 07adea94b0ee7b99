"""Loss, Adam, learning-rate schedule, training loop and evaluation."""
import csv
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .diagnostics import DECAY_TOL
from .energy import discrete_energy
from .model import ESTABLE, EStableNet, forward, predict, save_checkpoint
from .spectral import Grid, inner_product

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "train_mse", "test_mse", "test_rel_l2")


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    weight_decay: float = 1e-6
    batch_size: int = 16
    epochs: int = 1000
    halve_every: int = 50
    restart_every: int = 200
    beta: float = 0.0
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.halve_every < 1 or self.restart_every < 1:
            raise ValueError("halve_every and restart_every must be >= 1")
        if self.halve_every > self.restart_every:
            raise ValueError("halve_every must not exceed restart_every")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step decay by half every ``halve_every`` epochs, restarting every ``restart_every``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * 2.0 ** -((epoch % cfg.restart_every) // cfg.halve_every)


def mse_loss(pred, truth):
    """Mean over batch and grid points of (pred - truth)^2; ``truth`` may be an array."""
    truth = ad.as_tensor(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {truth.shape}")
    return ad.mean_sq(ad.sub(pred, truth))


def g_residual_penalty(trace, beta, g_operator=None):
    """beta * sum_n mean|phi^n - G(H^n U^{n+1})|^2 with H^n = 1/g^n.

    ``trace`` is the list of block states from :func:`esnet.model.forward`;
    ``g_operator`` applies G (identity when None).
    """
    if beta == 0:
        return ad.Tensor(np.array(0.0))
    total = None
    for prev, cur in zip(trace[:-1], trace[1:]):
        hu = ad.mul(ad.reciprocal(cur.g), cur.u)
        if g_operator is not None:
            hu = ad.linear_map(hu, g_operator)
        term = ad.mean_sq(ad.sub(prev.phi, hu))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, beta)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        params = list(params)
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(params, state: AdamState, lr: float, weight_decay: float = 0.0):
    """One Adam update with coupled L2 weight decay (added to the gradient)."""
    params = list(params)
    grads = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name or '<unnamed>'}")
        grads.append(g + weight_decay * p.value if weight_decay else g)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def relative_l2(pred, truth, grid: Grid):
    """Per-sample |pred - truth| / |truth| (quadrature norms); NaN where |truth| = 0."""
    num = np.sqrt(inner_product(pred - truth, pred - truth, grid))
    den = np.sqrt(inner_product(truth, truth, grid))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def evaluate(net: EStableNet, ds, batch_size=64, workers=1, return_pred=False):
    """Returns (mse, mean relative L2) over the dataset (and predictions if asked)."""
    if len(ds) == 0:
        raise ValueError("evaluate needs a nonempty dataset")
    if ds.grid.dims != net.dims:
        raise ValueError(f"dataset is {ds.grid.dims}D but the network is {net.dims}D")
    if workers > 1:
        chunks = [ds.phi0[i:i + batch_size] for i in range(0, len(ds), batch_size)]
        with ad.no_grad(), ThreadPoolExecutor(max_workers=workers) as pool:
            pred = np.concatenate(list(pool.map(lambda c: predict(net, c, batch_size), chunks)))
    else:
        pred = predict(net, ds.phi0, batch_size)
    mse = float(np.mean((pred - ds.phiT) ** 2))
    rel = relative_l2(pred, ds.phiT, ds.grid)
    bad = np.isnan(rel)
    if bad.any():
        warnings.warn(f"skipping {int(bad.sum())} sample(s) with zero-norm truth in relative L2")
    rel_mean = float(np.mean(rel[~bad])) if (~bad).any() else float("nan")
    if return_pred:
        return mse, rel_mean, pred
    return mse, rel_mean


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    best_epoch: int = -1
    best_test_mse: float = math.inf
    best_test_rel_l2: float = math.nan
    energy_violations: int = 0
    energy_checks: int = 0
    wall_time: float = 0.0


def _check_energy(net, trace, grid):
    """Per-batch decay check on the live training trace; returns violation count."""
    phis = [s.phi.value[:, 0] for s in trace]
    us = [s.u.value[:, 0] for s in trace]
    bad = 0
    for n in range(1, len(trace)):
        e0 = discrete_energy(phis[n - 1], us[n - 1], grid, net.C)
        e1 = discrete_energy(phis[n], us[n], grid, net.C)
        dphi = phis[n] - phis[n - 1]
        du = us[n] - us[n - 1]
        resid = np.abs(e1 - e0 + 0.5 * inner_product(dphi, dphi, grid) + inner_product(du, du, grid))
        bad += int(np.sum((e1 - e0 > DECAY_TOL) | (resid > DECAY_TOL)))
    return bad


def _write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])


def train(net: EStableNet, train_ds, test_ds, cfg: TrainConfig, log_path=None, checkpoint_path=None,
          monitor_energy=False, progress=None, eval_workers=1) -> TrainResult:
    """Minibatch Adam on the endpoint MSE. The network is left holding the
    best-by-test-loss parameters, which are also written to ``checkpoint_path``."""
    if train_ds.grid != test_ds.grid or train_ds.grid.dims != net.dims:
        raise ValueError("dataset grid does not match the network")
    if cfg.beta > 0 and net.kind == ESTABLE:
        log.info("beta > 0 ignored: G^-1 is applied exactly, so the residual penalty vanishes")
    grid = train_ds.grid
    rng = np.random.default_rng(cfg.seed)
    params = list(net.parameters())
    adam = AdamState.for_params(params)
    result = TrainResult()
    best_values = net.get_values()
    start = time.perf_counter()
    n = len(train_ds)
    x_all = train_ds.phi0[:, None]
    y_all = train_ds.phiT[:, None]

    def abort(msg):
        net.set_values(best_values)
        if checkpoint_path is not None:
            save_checkpoint(net, checkpoint_path)
        if log_path is not None:
            _write_log(log_path, result.log)
        raise TrainingAborted(msg)

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        perm = rng.permutation(n)
        total = 0.0
        for b0 in range(0, n, cfg.batch_size):
            idx = perm[b0:b0 + cfg.batch_size]
            net.zero_grad()
            pred, trace = forward(net, x_all[idx])
            loss = mse_loss(pred, y_all[idx])
            lv = float(loss.value)
            if not math.isfinite(lv):
                abort(f"non-finite training loss at epoch {epoch}")
            if monitor_energy and net.kind == ESTABLE:
                result.energy_violations += _check_energy(net, trace, grid)
                result.energy_checks += len(idx) * net.n_blocks
            loss.backward()
            try:
                adam_step(params, adam, lr, cfg.weight_decay)
            except FloatingPointError as exc:
                abort(f"epoch {epoch}: {exc}")
            total += lv * len(idx)
        row = {"epoch": epoch, "lr": lr, "train_mse": total / n, "test_mse": math.nan, "test_rel_l2": math.nan}
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            mse, rel = evaluate(net, test_ds, workers=eval_workers)
            row["test_mse"], row["test_rel_l2"] = mse, rel
            if not math.isfinite(mse):
                abort(f"non-finite test loss at epoch {epoch}")
            if mse < result.best_test_mse:
                result.best_test_mse, result.best_test_rel_l2, result.best_epoch = mse, rel, epoch
                best_values = net.get_values()
                if checkpoint_path is not None:
                    save_checkpoint(net, checkpoint_path)
        result.log.append(row)
        if progress:
            progress(row)
    net.set_values(best_values)
    result.wall_time = time.perf_counter() - start
    if log_path is not None:
        _write_log(log_path, result.log)
    return result


def read_log(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]
