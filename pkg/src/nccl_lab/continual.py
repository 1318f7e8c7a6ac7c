"""Task streams, reservoir replay, and the sequential training loop.

A run owns four independent RNG streams spawned from one seed: model
init, data order/augmentation, mixing, and buffer decisions. Because the
mixing stream is consumed nowhere else, toggling mixing off leaves the
rest of the trajectory untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import AugmentConfig, ExperimentConfig, config_hash, \
    serialize_config
from .evaluation import (MetricsReport, aece_aoe, average_accuracy,
                         average_forgetting, calibration_predictions,
                         ece, eval_accuracy, nc_diagnostics, oe,
                         reliability_rows, train_probe)
from .autodiff import Tape, backward
from .geometry import PrototypeSet, build_etf
from .losses import (ClampCounter, hsd_loss, ird_loss, plasticity_loss,
                     sprd_loss)
from .model import (LrSchedule, ModelConfig, ModelParams, OptimizerState,
                    features_np, forward_features, forward_predictor,
                    init_model, lr_at, register_params, sgd_step, snapshot)
from .samix import mix_batch


@dataclass
class Task:
    index: int
    classes: np.ndarray
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    aux_x: np.ndarray
    aux_y: np.ndarray


@dataclass
class TaskStream:
    tasks: list[Task]
    num_classes: int
    input_dim: int

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)


def make_blob_stream(cfg: ExperimentConfig,
                     rng: np.random.Generator) -> TaskStream:
    """Gaussian-blob classes split sequentially into tasks.

    Each class gets one center; train/test/aux splits are drawn fresh
    around it so splits are disjoint by construction.
    """
    ds = cfg.dataset
    centers = rng.standard_normal((ds.classes, ds.input_dim)) * ds.center_scale
    per_split = (ds.samples_per_class, ds.test_per_class, ds.aux_per_class)
    splits = {c: [centers[c] + rng.standard_normal((n, ds.input_dim))
                  * ds.spread for n in per_split]
              for c in range(ds.classes)}
    tasks = []
    cpt = cfg.tasks.classes_per_task
    for t in range(cfg.tasks.count):
        classes = np.arange(t * cpt, (t + 1) * cpt)
        parts = [[], [], []]
        labels = [[], [], []]
        for c in classes:
            for s in range(3):
                parts[s].append(splits[c][s])
                labels[s].append(np.full(len(splits[c][s]), c))
        (tr_x, te_x, ax_x) = (np.concatenate(p) for p in parts)
        (tr_y, te_y, ax_y) = (np.concatenate(l) for l in labels)
        tasks.append(Task(t, classes, tr_x, tr_y, te_x, te_y, ax_x, ax_y))
    return TaskStream(tasks, ds.classes, ds.input_dim)


class ReplayBuffer:
    """Reservoir-sampled memory of (x, y) pairs.

    Every offered item lands in the buffer with probability cap/seen, so
    after any prefix of the stream the contents are a uniform sample of it.
    """

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 0:
            raise ValueError(f"ReplayBuffer: capacity must be >= 0, "
                             f"got {capacity}")
        self.capacity = capacity
        self.rng = rng
        self.seen = 0
        self.xs: np.ndarray | None = None
        self.ys: np.ndarray | None = None
        self._size = 0

    def __len__(self):
        return self._size

    def _ensure_storage(self, x: np.ndarray):
        if self.xs is None:
            self.xs = np.empty((self.capacity, x.shape[-1]))
            self.ys = np.empty(self.capacity, dtype=np.int64)

    def offer_many(self, xs: np.ndarray, ys: np.ndarray) -> None:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys)
        if xs.shape[0] != ys.shape[0]:
            raise ValueError(f"offer_many: {xs.shape[0]} inputs vs "
                             f"{ys.shape[0]} labels")
        if xs.shape[0] == 0:
            return
        if self.capacity == 0:
            self.seen += xs.shape[0]
            return
        self._ensure_storage(xs)
        i = 0
        n = xs.shape[0]
        while self._size < self.capacity and i < n:
            self.seen += 1
            self.xs[self._size] = xs[i]
            self.ys[self._size] = ys[i]
            self._size += 1
            i += 1
        if i == n:
            return
        # past the fill phase: item k of the stream keeps a slot with
        # probability cap/k. One vectorized draw for the whole tail.
        highs = self.seen + 1 + np.arange(n - i)
        draws = self.rng.integers(0, highs)
        self.seen += n - i
        for j in np.flatnonzero(draws < self.capacity):
            slot = int(draws[j])
            self.xs[slot] = xs[i + j]
            self.ys[slot] = ys[i + j]

    def offer(self, x: np.ndarray, y: int) -> None:
        self.offer_many(np.asarray(x)[None, :], np.asarray([y]))

    def sample(self, n: int, rng: np.random.Generator) -> tuple:
        if n > self._size:
            raise ValueError(f"ReplayBuffer.sample: asked for {n} of "
                             f"{self._size} stored items")
        idx = rng.choice(self._size, size=n, replace=False)
        return self.xs[idx].copy(), self.ys[idx].copy()

    def contents(self) -> tuple:
        if self._size == 0:
            return (np.empty((0, 0)), np.empty(0, dtype=np.int64))
        return self.xs[:self._size].copy(), self.ys[:self._size].copy()


def make_views(x: np.ndarray, aug: AugmentConfig,
               rng: np.random.Generator) -> np.ndarray:
    """Two stochastic views per sample, stacked [view1; view2] (2N, dim)."""
    x = np.asarray(x, dtype=np.float64)
    views = []
    for _ in range(2):
        v = x + rng.standard_normal(x.shape) * aug.noise_sigma
        if aug.mask_rate > 0:
            v = v * (rng.random(x.shape) >= aug.mask_rate)
        views.append(v)
    return np.concatenate(views, axis=0)


@dataclass
class RunRecord:
    config_text: str
    config_id: str
    seed: int
    acc_matrix: np.ndarray          # (T, T), nan above the diagonal
    metrics: MetricsReport
    loss_log: list[dict]
    reliability: list[tuple]
    prototypes: PrototypeSet

    def acc_matrix_jsonable(self) -> list[list[float | None]]:
        return [[None if np.isnan(v) else float(v) for v in row]
                for row in self.acc_matrix]


def _probe_data(task: Task, buffer: ReplayBuffer,
                past_tasks: list[Task]) -> tuple[np.ndarray, np.ndarray]:
    """Current train split plus the memory; aux splits when memory-free."""
    if len(buffer) > 0:
        bx, by = buffer.contents()
        return (np.concatenate([task.train_x, bx]),
                np.concatenate([task.train_y, by]))
    if past_tasks:
        xs = [t.aux_x for t in past_tasks] + [task.train_x]
        ys = [t.aux_y for t in past_tasks] + [task.train_y]
        return np.concatenate(xs), np.concatenate(ys)
    return task.train_x, task.train_y


def train_task(params: ModelParams, task: Task, prototypes: PrototypeSet,
               past_params: ModelParams | None,
               past_classes: np.ndarray, seen_classes: np.ndarray,
               buffer: ReplayBuffer, cfg: ExperimentConfig, epochs: int,
               rng_data: np.random.Generator, rng_mix: np.random.Generator,
               rng_buffer: np.random.Generator,
               loss_log: list[dict] | None = None,
               step_hook=None) -> None:
    """One task of Algorithm-style training; mutates params in place.

    The buffer is read for replay batches but only extended by the caller
    after the task finishes.
    """
    distill_cfg = cfg.distill
    distill_cfg.total_epochs = epochs
    plast_cfg = cfg.plasticity()
    schedule = LrSchedule(base_lr=cfg.train.lr,
                          warmup_epochs=cfg.train.warmup_epochs)
    opt = OptimizerState()
    proto_arr = prototypes.vectors
    past_protos = proto_arr[past_classes] if past_classes.size else None
    protos_so_far = proto_arr[seen_classes]
    n_train = task.train_x.shape[0]
    batch = cfg.train.batch_size

    for epoch in range(epochs):
        lr = lr_at(schedule, epoch, epochs)
        order = rng_data.permutation(n_train)
        epoch_stats = {"plasticity": 0.0, "distill": 0.0, "total": 0.0,
                       "steps": 0, "clamp_events": 0}
        for start in range(0, n_train, batch):
            idx = order[start:start + batch]
            bx, by = task.train_x[idx], task.train_y[idx]
            origins = np.zeros(len(idx), dtype=np.int64)
            if len(buffer) > 0:
                k = min(batch, len(buffer))
                mx, my = buffer.sample(k, rng_buffer)
                bx = np.concatenate([bx, mx])
                by = np.concatenate([by, my])
                origins = np.concatenate([origins, np.ones(k, dtype=np.int64)])
            views = make_views(bx, cfg.augment, rng_data)
            view_labels = np.concatenate([by, by])
            view_origins = np.concatenate([origins, origins])

            tape = Tape()
            pt = register_params(tape, params)
            z = forward_features(tape, pt, views)

            mixed_z = None
            mixed_targets = None
            if cfg.mix.enabled:
                mb = mix_batch(views, view_labels, prototypes, cfg.mix,
                               rng_mix, origins=view_origins)
                mixed_z = forward_features(tape, pt, mb.mixed_inputs)
                mixed_targets = mb.mixed_prototypes

            counter = ClampCounter()
            plast = plasticity_loss(
                tape, z, mixed_z, view_labels, mixed_targets, prototypes,
                plast_cfg, cfg.fnc2, past_prototypes=past_protos,
                clamp_counter=counter)

            total = plast
            distill_val = 0.0
            if past_params is not None:
                z_past = features_np(past_params, views)
                student = (forward_predictor(tape, pt, z)
                           if cfg.model.use_predictor_for_distill else z)
                ird = ird_loss(tape, student, z_past,
                               distill_cfg.kappa_current,
                               distill_cfg.kappa_past)
                sprd = None
                if epoch > distill_cfg.warmup_epochs:
                    sprd = sprd_loss(tape, student, z_past, protos_so_far,
                                     distill_cfg.zeta_current,
                                     distill_cfg.zeta_past)
                hsd = hsd_loss(tape, ird, sprd, epoch, distill_cfg)
                distill_val = float(hsd.values)
                total = tape.add(total, hsd)

            grads = backward(tape, total)
            grad_arrays = {name: grads.wrt(pt[name]) for name in pt}
            # the probe owns the classifier head; freeze it here
            grad_arrays.pop("cls_w", None)
            grad_arrays.pop("cls_b", None)
            sgd_step(params, grad_arrays, opt, lr)

            epoch_stats["plasticity"] += float(plast.values)
            epoch_stats["distill"] += distill_val
            epoch_stats["total"] += float(total.values)
            epoch_stats["steps"] += 1
            epoch_stats["clamp_events"] += counter.events
            if step_hook is not None:
                step_hook({"task": task.index, "epoch": epoch,
                           "lr": lr, "features": z.values,
                           "loss": float(total.values)})
        if loss_log is not None:
            steps = epoch_stats["steps"]
            loss_log.append({
                "task": task.index, "epoch": epoch, "lr": lr,
                "plasticity": epoch_stats["plasticity"] / steps,
                "distill": epoch_stats["distill"] / steps,
                "total": epoch_stats["total"] / steps,
                "clamp_events": epoch_stats["clamp_events"],
            })


def run_experiment(cfg: ExperimentConfig, seed: int | None = None,
                   step_hook=None) -> RunRecord:
    """Train across the whole task stream and assemble the run record."""
    cfg.validate()
    if seed is None:
        seed = cfg.train.seed
    streams = np.random.SeedSequence(seed).spawn(4)
    rng_model, rng_data, rng_mix, rng_buffer = \
        (np.random.default_rng(s) for s in streams)

    stream = make_blob_stream(cfg, rng_data)
    prototypes = build_etf(cfg.dataset.classes, cfg.model.embed_dim,
                           seed=seed)
    model_cfg = ModelConfig(
        input_dim=cfg.dataset.input_dim, hidden_dim=cfg.model.hidden_dim,
        feature_dim=cfg.model.feature_dim,
        proj_hidden_dim=cfg.model.proj_hidden_dim,
        embed_dim=cfg.model.embed_dim, num_classes=cfg.dataset.classes)
    params = init_model(model_cfg, rng_model)
    buffer = ReplayBuffer(cfg.buffer_capacity, rng_buffer)

    t_count = len(stream)
    acc_matrix = np.full((t_count, t_count), np.nan)
    loss_log: list[dict] = []
    past_params = None
    seen: list[int] = []

    for task in stream:
        past_classes = np.array(seen, dtype=np.int64)
        seen.extend(int(c) for c in task.classes)
        seen_classes = np.array(seen, dtype=np.int64)
        epochs = (cfg.train.epochs_first if task.index == 0
                  else cfg.train.epochs_rest)
        train_task(params, task, prototypes, past_params, past_classes,
                   seen_classes, buffer, cfg, epochs, rng_data, rng_mix,
                   rng_buffer, loss_log=loss_log, step_hook=step_hook)
        buffer.offer_many(task.train_x, task.train_y)
        past_params = snapshot(params)

        px, py = _probe_data(task, buffer, stream.tasks[:task.index])
        classifier = train_probe(params, px, py, cfg.dataset.classes)
        params.arrays["cls_w"] = classifier[0].copy()
        params.arrays["cls_b"] = classifier[1].copy()
        row = eval_accuracy(params, classifier,
                            stream.tasks[:task.index + 1],
                            scenario=cfg.tasks.scenario)
        acc_matrix[task.index, :task.index + 1] = row

    classifier = (params.arrays["cls_w"], params.arrays["cls_b"])
    per_task_preds = [calibration_predictions(params, classifier,
                                              t.test_x, t.test_y)
                      for t in stream]
    bins = cfg.calib_bins
    ece_per_task = [ece(p, bins) for p in per_task_preds]
    oe_per_task = [oe(p, bins) for p in per_task_preds]
    aece, aoe = aece_aoe(per_task_preds, bins)
    feats_by_class = {}
    for t in stream:
        feats = features_np(params, t.test_x)
        for c in t.classes:
            feats_by_class[int(c)] = feats[t.test_y == c]
    nc1, nc2, nc3 = nc_diagnostics(feats_by_class, prototypes)

    cid = config_hash(cfg)
    metrics = MetricsReport(
        run_id=f"{cid}-{seed}",
        average_accuracy=average_accuracy(acc_matrix),
        forgetting=(average_forgetting(acc_matrix) if t_count > 1 else None),
        ece_per_task=ece_per_task, oe_per_task=oe_per_task,
        aece=aece, aoe=aoe, nc1=nc1, nc2=nc2, nc3=nc3)
    return RunRecord(
        config_text=serialize_config(cfg), config_id=cid, seed=seed,
        acc_matrix=acc_matrix, metrics=metrics, loss_log=loss_log,
        reliability=reliability_rows(per_task_preds, bins),
        prototypes=prototypes)
