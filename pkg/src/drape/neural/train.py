"""Self-supervised (physics loss) and supervised (vertex L2) training."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import NumericFailure
from ..metrics import collision_metric, strain_metrics
from ..physics import CapsuleCollider, EnergyModel, MaterialParams
from ..rig import BodyModel, pose_limits
from ..skinning import backprop_lbs, lbs_nodes_from_pose, lbs_vertices, project_to_simplex_rows
from .adam import Adam
from .model import DrapeModel, NetworkDims

MODES = ("self-supervised", "supervised")
BODY_MODES = ("single-body", "multi-body")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    curriculum_step: float = 0.1
    curriculum_every: int = 100
    seed: int = 0
    optimize_skin_weights: bool = False
    skin_lr: float | None = None
    mode: str = "self-supervised"
    body_mode: str = "single-body"
    steps_per_epoch: int = 1
    held_out: int = 20
    holdout_fraction: float = 0.1
    eval_every: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ValueError("batch size and steps per epoch must be positive")
        if not self.lr > 0 or (self.skin_lr is not None and not self.skin_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.body_mode not in BODY_MODES:
            raise ValueError(f"body mode must be one of {BODY_MODES}")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def curriculum(self, epoch: int) -> float:
        return min(1.0, self.curriculum_step * (1 + epoch // self.curriculum_every))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainingResult:
    model: DrapeModel
    weights: np.ndarray                     # normalized skin weights (n, K)
    config: TrainingConfig
    loss_curve: list = field(default_factory=list)
    history: list = field(default_factory=list)
    evaluation: dict | None = None
    baseline: dict | None = None


def sample_training_poses(skeleton, scale: float, rng: np.random.Generator, count: int) -> np.ndarray:
    lo, hi = pose_limits(skeleton, scale)
    return rng.uniform(lo, hi, size=(count, skeleton.pose_dim))


def held_out_poses(skeleton, count: int, seed: int) -> np.ndarray:
    """Full-range poses from a stream disjoint from training."""
    rng = np.random.default_rng([seed, 0x5EED])
    return sample_training_poses(skeleton, 1.0, rng, count)


class _Trainer:
    """Shared optimization plumbing for both supervision modes."""

    def __init__(self, garment, body: BodyModel, nodes, config: TrainingConfig, model=None, dims=None,
                 bodies=None):
        self.garment = garment
        self.body = body
        self.skeleton = body.skeleton
        self.config = config
        self.nodes = nodes
        self.model = model or DrapeModel(self.skeleton.pose_dim, nodes, dims or NetworkDims(), seed=config.seed)
        self.bodies = list(bodies) if bodies else [body]
        self.raw = nodes.weights.copy()
        self.initial_weights = nodes.weights.copy()
        self.params = [p for _, p in self.model.parameters()]
        self.opt = Adam(self.params, config.lr, config.betas, config.eps)
        self.skin_opt = None
        if config.optimize_skin_weights:
            self.skin_opt = Adam([self.raw], config.skin_lr or config.lr, config.betas, config.eps)
        self.rng = np.random.default_rng(config.seed)
        self.pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _map(self, fn, items):
        if self.pool is None:
            return [fn(i) for i in items]
        return list(self.pool.map(fn, items))     # results come back in submission order

    def body_indices(self, count):
        if self.config.body_mode == "single-body" or len(self.bodies) == 1:
            return np.zeros(count, dtype=np.int64)
        return self.rng.integers(0, len(self.bodies), size=count)

    def step(self, thetas, body_index, per_pose):
        """One optimizer step; ``per_pose(b, chi) -> (loss, grad_vertices, info)``."""
        batch = len(thetas)
        chi_skin = np.stack([lbs_nodes_from_pose(self.nodes, self.skeleton, t).reshape(-1) for t in thetas])
        signals = [None] * len(self.bodies)
        for i in sorted(set(body_index.tolist())):
            signals[i] = self.model.body_signal(self.bodies[i])
        deltas, cache = self.model.forward(thetas, chi_skin, signals, body_index)
        chi = (chi_skin + deltas).reshape(batch, self.nodes.m, 12)
        weights = self.raw / self.raw.sum(axis=1, keepdims=True)

        def one(b):
            x = lbs_vertices(self.garment, self.nodes, chi[b], weights)
            loss, gx, info = per_pose(b, x)
            if not np.isfinite(loss) or not np.all(np.isfinite(gx)):
                raise NumericFailure("non-finite training loss",
                                     {"pose": thetas[b].tolist(), "breakdown": info, "body": int(body_index[b])})
            gchi, graw = backprop_lbs(self.garment, self.nodes, chi[b], gx, self.raw)
            return loss, gchi, graw

        results = self._map(one, range(batch))
        total = 0.0
        gdeltas = np.empty((batch, 12 * self.nodes.m))
        graw = np.zeros_like(self.raw)
        for b, (loss, gchi, gr) in enumerate(results):
            total += loss
            gdeltas[b] = gchi.reshape(-1) / batch
            graw += gr / batch
        grads = self.model.backward(cache, gdeltas)
        self.opt.step(grads)
        if self.skin_opt is not None:
            self.skin_opt.step([graw])
            self.raw[:] = project_to_simplex_rows(self.raw, fallback=self.initial_weights)
        return total / batch

    @property
    def weights(self):
        return self.raw / self.raw.sum(axis=1, keepdims=True)


def evaluate_drapes(model: DrapeModel, garment, body: BodyModel, poses, params: MaterialParams = MaterialParams(),
                    weights=None, zero_deltas: bool = False, energy: EnergyModel | None = None):
    """Loss and metrics over ``poses``; ``zero_deltas`` gives the pure skinning baseline."""
    energy = energy or EnergyModel.build(garment, params)
    signal = model.body_signal(body)
    losses, no_gravity, ee, ea, ec, verts = [], [], [], [], [], []
    for theta in np.atleast_2d(poses):
        if zero_deltas:
            chi = lbs_nodes_from_pose(model.nodes, body.skeleton, theta)
            x = lbs_vertices(garment, model.nodes, chi, weights)
        else:
            x, _ = model.drape(garment, body.skeleton, theta, signal, weights)
        collider = CapsuleCollider.from_body(body, theta)
        loss, _, parts = energy.evaluate(x, collider, want_grad=False)
        losses.append(loss)
        no_gravity.append(loss - params.loss_weights[3] * parts["gravity"])
        e, a = strain_metrics(energy.rest, garment, x)
        ee.append(e)
        ea.append(a)
        ec.append(collision_metric(collider, x))
        verts.append(x)
    return {
        "loss": float(np.mean(losses)),
        "loss_without_gravity": float(np.mean(no_gravity)),
        "eps_e": float(np.mean(ee)),
        "eps_a": float(np.mean(ea)),
        "eps_c": float(np.mean(ec)),
        "per_pose_loss": [float(v) for v in losses],
        "vertices": np.stack(verts),
    }


def _strip(report):
    return {k: v for k, v in report.items() if k != "vertices"}


def train_self_supervised(garment, body: BodyModel, nodes, params: MaterialParams = MaterialParams(),
                          config: TrainingConfig = TrainingConfig(), dims: NetworkDims | None = None,
                          bodies=None, model: DrapeModel | None = None, evaluate: bool = True,
                          callback=None) -> TrainingResult:
    """Minimize the physics loss of the drape over sampled poses.

    ``bodies`` lists the body variants for multi-body training (the first is
    used for evaluation).  ``callback(epoch, loss)`` runs after each epoch.
    """
    config = replace(config, mode="self-supervised")
    trainer = _Trainer(garment, body, nodes, config, model, dims, bodies)
    energy = EnergyModel.build(garment, params)
    result = TrainingResult(trainer.model, trainer.weights, config)
    try:
        for epoch in range(config.epochs):
            scale = config.curriculum(epoch)
            epoch_loss = 0.0
            for _ in range(config.steps_per_epoch):
                thetas = sample_training_poses(trainer.skeleton, scale, trainer.rng, config.batch_size)
                body_index = trainer.body_indices(config.batch_size)
                colliders = [CapsuleCollider.from_body(trainer.bodies[i], t) for i, t in zip(body_index, thetas)]

                def per_pose(b, x, colliders=colliders):
                    loss, gx, parts = energy.evaluate(x, colliders[b])
                    return loss, gx, parts

                epoch_loss += trainer.step(thetas, body_index, per_pose)
            result.loss_curve.append(epoch_loss / config.steps_per_epoch)
            if config.eval_every and (epoch + 1) % config.eval_every == 0:
                probe = held_out_poses(trainer.skeleton, min(config.held_out, 8), config.seed)
                rep = evaluate_drapes(trainer.model, garment, body, probe, params, trainer.weights, energy=energy)
                result.history.append({"epoch": epoch + 1, **_strip(rep), "per_pose_loss": None})
            if callback is not None:
                callback(epoch, result.loss_curve[-1])
    finally:
        trainer.close()
    result.weights = trainer.weights
    if evaluate and config.held_out > 0:
        poses = held_out_poses(trainer.skeleton, config.held_out, config.seed)
        result.evaluation = _strip(evaluate_drapes(trainer.model, garment, body, poses, params, result.weights,
                                                   energy=energy))
        result.baseline = _strip(evaluate_drapes(trainer.model, garment, body, poses, params,
                                                 trainer.initial_weights, zero_deltas=True, energy=energy))
    return result


def train_supervised(garment, body: BodyModel, nodes, dataset, config: TrainingConfig = TrainingConfig(),
                     dims: NetworkDims | None = None, model: DrapeModel | None = None,
                     callback=None) -> TrainingResult:
    """Fit drapes to ``dataset = (poses (N, p), vertices (N, n, 3))`` with a mean squared vertex error."""
    poses, targets = dataset
    poses = np.asarray(poses, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(poses) == 0:
        raise ValueError("empty dataset")
    if targets.shape != (len(poses), garment.n_vertices, 3):
        raise ValueError(f"dataset vertices have shape {targets.shape}")
    config = replace(config, mode="supervised")
    count = len(poses)
    held = int(round(config.holdout_fraction * count)) if count > 1 else 0
    train_ids = np.arange(count - held)
    test_ids = np.arange(count - held, count)
    trainer = _Trainer(garment, body, nodes, config, model, dims)
    result = TrainingResult(trainer.model, trainer.weights, config)
    n = garment.n_vertices
    try:
        for epoch in range(config.epochs):
            epoch_loss = 0.0
            for _ in range(config.steps_per_epoch):
                pick = trainer.rng.choice(train_ids, size=config.batch_size, replace=len(train_ids) < config.batch_size)

                def per_pose(b, x, pick=pick):
                    diff = x - targets[pick[b]]
                    loss = float(np.sum(diff * diff)) / n
                    return loss, (2.0 / n) * diff, {"mse": loss}

                epoch_loss += trainer.step(poses[pick], trainer.body_indices(len(pick)), per_pose)
            result.loss_curve.append(epoch_loss / config.steps_per_epoch)
            if callback is not None:
                callback(epoch, result.loss_curve[-1])
    finally:
        trainer.close()
    result.weights = trainer.weights

    def mse(ids):
        if len(ids) == 0:
            return None
        signal = trainer.model.body_signal(body)
        errs = [np.mean(np.sum((trainer.model.drape(garment, body.skeleton, poses[i], signal, result.weights)[0]
                                - targets[i]) ** 2, axis=1)) for i in ids]
        return float(np.mean(errs))

    result.evaluation = {"train_mse": mse(train_ids), "held_out_mse": mse(test_ids)}
    return result


def write_checkpoint(result: TrainingResult, path, skeleton, garment, body: BodyModel,
                     params: MaterialParams = MaterialParams(), extra: dict | None = None):
    """Flat model at ``path`` plus a JSON sidecar next to it; returns the sidecar path."""
    from ..runtime.flat import export_flat

    path = Path(path)
    signal, _ = result.model.body_signal(body)
    export_flat(result.model, skeleton, garment, signal, result.weights).save(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    doc = {
        "config": result.config.to_dict(),
        "material": params.to_dict(),
        "dims": {"m": result.model.nodes.m, "pose_dim": result.model.pose_dim,
                 "pose_hidden": list(result.model.dims.pose_hidden),
                 "node_hidden": list(result.model.dims.node_hidden)},
        "loss_curve": result.loss_curve,
        "history": result.history,
        "evaluation": result.evaluation,
        "baseline": result.baseline,
    }
    if extra:
        doc.update(extra)
    sidecar.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return sidecar
