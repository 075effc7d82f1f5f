"""Continual-learning orchestration: task streams, memory buffer, the
per-step training loop, evaluation, and the aggregate metrics."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import gis as gis_mod
from . import model as mdl
from .autodiff import Tensor
from .errors import ConfigurationError, ContractViolation, NumericalDomainError
from .gis import SelectionHistory, SubmanifoldPool
from .product import MixedSpace

# Stable per-phase stream ids so every phase draws from its own rng and
# adding draws to one phase cannot shift any other.
_PHASES = {"data": 1, "init": 2, "warmup": 3, "gis": 4, "main": 5,
           "pairs": 6, "buffer": 7}


def phase_rng(seed: int, step: int, phase: str) -> np.random.Generator:
    return np.random.default_rng([seed, step, _PHASES[phase]])


@dataclass(frozen=True)
class StreamTask:
    step: int
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(sorted(set(int(v) for v in self.y_train)))


def _tree_means(n_leaves: int, dim: int, rng: np.random.Generator,
                scale: float = 4.0, decay: float = 0.55) -> np.ndarray:
    """Class means at the leaves of a random balanced binary tree.

    Each child sits at its parent plus a random direction whose length
    shrinks geometrically with depth, giving nested clusters.
    """
    depth = max(1, int(np.ceil(np.log2(max(n_leaves, 2)))))
    nodes = [np.zeros(dim)]
    for level in range(depth):
        nxt = []
        step = scale * decay ** level
        for parent in nodes:
            for _ in range(2):
                direction = rng.normal(size=dim)
                direction /= np.linalg.norm(direction)
                nxt.append(parent + step * direction)
        nodes = nxt
    return np.stack(nodes[:n_leaves])


def _cycle_means(n_classes: int, dim: int, rng: np.random.Generator,
                 radius: float = 3.0, per_circle: int = 8) -> np.ndarray:
    """Class means evenly spaced on random circles."""
    means = []
    remaining = n_classes
    while remaining > 0:
        k = min(per_circle, remaining)
        center = rng.normal(size=dim) * 2.0
        basis = np.linalg.qr(rng.normal(size=(dim, 2)))[0].T
        for i in range(k):
            angle = 2.0 * np.pi * i / k
            means.append(center + radius * (np.cos(angle) * basis[0] + np.sin(angle) * basis[1]))
        remaining -= k
    return np.stack(means)


def generate_synthetic_stream(classes: int, steps: int, samples_per_class: int,
                              test_per_class: int, ambient_dim: int,
                              tree_fraction: float, noise: float,
                              seed: int) -> list[StreamTask]:
    """Tree- plus cycle-structured Gaussian class clusters, split into
    disjoint label groups per step. Deterministic under the seed."""
    if classes % steps != 0:
        raise ConfigurationError(f"{classes} classes do not divide into {steps} steps")
    rng = np.random.default_rng([seed, 0, _PHASES["data"]])
    n_tree = int(round(tree_fraction * classes))
    parts = []
    if n_tree > 0:
        parts.append(_tree_means(n_tree, ambient_dim, rng))
    if classes - n_tree > 0:
        parts.append(_cycle_means(classes - n_tree, ambient_dim, rng))
    means = np.concatenate(parts)
    # Interleave structure types across steps.
    order = rng.permutation(classes)
    per_step = classes // steps
    tasks = []
    for t in range(steps):
        labels = order[t * per_step:(t + 1) * per_step]
        xs_tr, ys_tr, xs_te, ys_te = [], [], [], []
        for lab in labels:
            total = samples_per_class + test_per_class
            pts = means[lab] + noise * rng.normal(size=(total, ambient_dim))
            xs_tr.append(pts[:samples_per_class])
            ys_tr.append(np.full(samples_per_class, lab))
            xs_te.append(pts[samples_per_class:])
            ys_te.append(np.full(test_per_class, lab))
        tasks.append(StreamTask(
            step=t + 1,
            x_train=np.concatenate(xs_tr), y_train=np.concatenate(ys_tr).astype(int),
            x_test=np.concatenate(xs_te), y_test=np.concatenate(ys_te).astype(int),
        ))
    _check_disjoint(tasks)
    return tasks


def stream_from_arrays(x: np.ndarray, y: np.ndarray, steps: int, train_ratio: float,
                       seed: int) -> list[StreamTask]:
    """Partition labeled data into a class-incremental stream.

    Classes (sorted) are chunked into equal groups per step; rows are
    assigned to train/test by a content hash, so the split is stable
    under row reordering.
    """
    labels = np.asarray(sorted(set(int(v) for v in y)))
    if len(labels) % steps != 0:
        raise ConfigurationError(f"{len(labels)} classes do not divide into {steps} steps")
    per_step = len(labels) // steps
    is_train = np.array([_hash_split(row, int(lab), seed, train_ratio)
                         for row, lab in zip(x, y)])
    tasks = []
    for t in range(steps):
        group = set(labels[t * per_step:(t + 1) * per_step].tolist())
        mask = np.array([int(lab) in group for lab in y])
        tr = mask & is_train
        te = mask & ~is_train
        tasks.append(StreamTask(step=t + 1, x_train=x[tr], y_train=y[tr].astype(int),
                                x_test=x[te], y_test=y[te].astype(int)))
    _check_disjoint(tasks)
    return tasks


def _hash_split(row: np.ndarray, label: int, seed: int, train_ratio: float) -> bool:
    payload = f"{seed}:{label}:" + ",".join(f"{v:.9g}" for v in row)
    digest = hashlib.sha256(payload.encode()).digest()
    frac = int.from_bytes(digest[:8], "big") / 2**64
    return frac < train_ratio


def _check_disjoint(tasks):
    seen: set[int] = set()
    for task in tasks:
        labs = set(task.labels)
        if labs & seen:
            raise ConfigurationError("label sets overlap across steps")
        seen |= labs


# -- memory buffer ------------------------------------------------------

@dataclass
class MemoryBuffer:
    x: np.ndarray | None = None
    y: np.ndarray | None = None

    def __len__(self):
        return 0 if self.y is None else len(self.y)

    def update(self, x_new: np.ndarray, y_new: np.ndarray, policy: str,
               per_class: int, budget: int, rng: np.random.Generator):
        """Append exemplars of the step's classes, then enforce capacity."""
        xs = [] if self.x is None else [self.x]
        ys = [] if self.y is None else [self.y]
        for lab in sorted(set(int(v) for v in y_new)):
            idx = np.nonzero(y_new == lab)[0]
            take = min(per_class if policy == "per_class" else len(idx), len(idx))
            pick = rng.choice(idx, size=take, replace=False)
            xs.append(x_new[pick])
            ys.append(y_new[pick])
        self.x = np.concatenate(xs)
        self.y = np.concatenate(ys).astype(int)
        if policy == "global":
            self._rebalance(budget, rng)

    def _rebalance(self, budget: int, rng: np.random.Generator):
        """Evict uniformly at random from over-represented classes."""
        while len(self.y) > budget:
            labs, counts = np.unique(self.y, return_counts=True)
            worst = labs[np.argmax(counts)]
            candidates = np.nonzero(self.y == worst)[0]
            drop = rng.choice(candidates)
            keep = np.ones(len(self.y), dtype=bool)
            keep[drop] = False
            self.x = self.x[keep]
            self.y = self.y[keep]


# -- engine state and training loop -------------------------------------

@dataclass
class Snapshot:
    """Frozen end-of-step model and space (never mutated afterwards)."""

    params: dict[str, np.ndarray]
    classifier: np.ndarray
    space: MixedSpace


@dataclass
class EngineState:
    backbone: mdl.Backbone
    params: dict[str, np.ndarray]
    classifier: np.ndarray                  # (n_seen, feature_dim)
    pool: SubmanifoldPool
    history: SelectionHistory
    space: MixedSpace | None = None
    snapshot: Snapshot | None = None
    buffer: MemoryBuffer = field(default_factory=MemoryBuffer)
    label_to_index: dict[int, int] = field(default_factory=dict)
    gis_trace: list[dict] = field(default_factory=list)


def init_state(backbone: mdl.Backbone, pool: SubmanifoldPool, seed: int) -> EngineState:
    params = backbone.init_params(phase_rng(seed, 0, "init"))
    return EngineState(backbone=backbone, params=params,
                       classifier=np.zeros((0, backbone.feature_dim)),
                       pool=pool, history=SelectionHistory())


def run_step(state: EngineState, task: StreamTask, cfg: dict, seed: int) -> EngineState:
    """One full continual-learning step.

    Order: append classifier rows for new classes; warm up the classifier;
    run the geometry search and expand the space; train backbone and
    classifier on the step data plus the replay buffer; snapshot; refill
    the buffer.
    """
    t = task.step
    for lab in task.labels:
        if lab in state.label_to_index:
            raise ConfigurationError(f"label {lab} already seen")
        state.label_to_index[lab] = len(state.label_to_index)
    n_new = len(task.labels)
    init_rng = phase_rng(seed, t, "init")
    new_rows = init_rng.normal(0.0, 0.01, (n_new, state.backbone.feature_dim))
    state.classifier = np.concatenate([state.classifier, new_rows])
    n_classes = state.classifier.shape[0]

    y_train = np.array([state.label_to_index[int(v)] for v in task.y_train])
    feats = mdl.features_np(state.params, task.x_train)

    # Classifier warm-up then curvature/weight search, both with theta frozen.
    state.classifier = gis_mod.classifier_warmup(
        state.pool, feats, y_train, state.classifier,
        lr=cfg["lr_gis"], batch_size=cfg["batch_size"],
        rng=phase_rng(seed, t, "warmup"))
    weights, _ = gis_mod.gis_optimize(
        state.pool, feats, y_train, state.classifier, n_classes,
        epochs=cfg["epochs_gis"], lr=cfg["lr_gis"], batch_size=cfg["batch_size"],
        rng=phase_rng(seed, t, "gis"))
    chosen = gis_mod.select(state.pool, weights, tau1=1.0 / n_classes, step=t)
    state.history.selected.append(chosen)
    state.space = gis_mod.expand(state.history, state.pool)
    state.gis_trace.append(gis_mod.trace_record(t, state.pool, chosen, state.history))

    # Structure-preservation context from the frozen previous-step model.
    structure = None
    use_structure = (cfg["lambda1"] > 0 or cfg["lambda2"] > 0)
    if state.snapshot is not None and len(state.buffer) > 1 and use_structure:
        structure = _structure_context(state.snapshot, state.buffer)

    _main_training(state, task, y_train, structure, cfg, seed)

    state.snapshot = Snapshot(
        params={k: v.copy() for k, v in state.params.items()},
        classifier=state.classifier.copy(),
        space=state.space,
    )
    buf_cfg = cfg["buffer"]
    state.buffer.update(task.x_train, y_train, buf_cfg["policy"],
                        buf_cfg["per_class"], buf_cfg["budget"],
                        phase_rng(seed, t, "buffer"))
    return state


def _structure_context(snapshot: Snapshot, buffer: MemoryBuffer) -> dict:
    """Snapshot-side quantities for the two structure losses, computed once
    per step over the whole buffer."""
    prev_feats = mdl.features_np(snapshot.params, buffer.x)
    prev_tan = mdl.tangent_concat_np(prev_feats, snapshot.space)
    prev_cos, prev_valid = mdl.cosine_matrix_np(prev_tan)
    prev_d2 = mdl.sq_dist_matrix_np(prev_feats, prev_feats, snapshot.space)
    tau2 = mdl.tau2_same_class_mean(prev_d2, buffer.y)
    affinity = mdl.affinity_matrix(prev_d2, buffer.y, tau2)
    return {"prev_cos": prev_cos, "prev_valid": prev_valid,
            "affinity": affinity, "tau2": tau2}


def _main_training(state: EngineState, task: StreamTask, y_train: np.ndarray,
                   structure: dict | None, cfg: dict, seed: int):
    t = task.step
    if len(state.buffer):
        buf_y = state.buffer.y
        x_all = np.concatenate([task.x_train, state.buffer.x])
        y_all = np.concatenate([y_train, buf_y])
    else:
        x_all = task.x_train
        y_all = y_train
    rng_main = phase_rng(seed, t, "main")
    rng_pairs = phase_rng(seed, t, "pairs")
    lr = cfg["lr_main"]
    cap = cfg.get("repulsion_cap")
    pair_batch = cfg["pair_batch"]
    for _ in range(cfg["epochs_main"]):
        order = rng_main.permutation(len(y_all))
        for start in range(0, len(order), cfg["batch_size"]):
            batch = order[start:start + cfg["batch_size"]]
            tensors = {k: Tensor(v, requires_grad=True) for k, v in state.params.items()}
            wt = Tensor(state.classifier, requires_grad=True)
            feats = mdl.features_t(tensors, x_all[batch])
            loss = mdl.ce_loss_t(feats, wt, y_all[batch], state.space)
            if structure is not None:
                idx = rng_pairs.choice(len(state.buffer), size=min(pair_batch, len(state.buffer)),
                                       replace=False)
                buf_feats = mdl.features_t(tensors, state.buffer.x[idx])
                g_term = mdl.angular_reg_loss_t(
                    buf_feats, state.space,
                    structure["prev_cos"][np.ix_(idx, idx)],
                    structure["prev_valid"][np.ix_(idx, idx)])
                cap_val = None if not cap else cap * structure["tau2"]
                l_term = mdl.neighbor_robustness_loss_t(
                    buf_feats, state.space, structure["affinity"][np.ix_(idx, idx)],
                    repulsion_cap=cap_val)
                loss = mdl.total_loss_t(loss, cfg["lambda1"], g_term, cfg["lambda2"], l_term)
            if not np.isfinite(loss.value):
                raise NumericalDomainError(
                    f"training loss diverged at step {t} (batch of {len(batch)})")
            loss.backward()
            for k, p in tensors.items():
                state.params[k] = state.params[k] - lr * p.grad
            state.classifier = state.classifier - lr * wt.grad


def evaluate(state: EngineState, tasks: list[StreamTask]) -> list[float]:
    """Per-task accuracy over all seen classes (class-incremental protocol)."""
    if state.space is None:
        raise ContractViolation("model has not been trained yet")
    accs = []
    for task in tasks:
        feats = mdl.features_np(state.params, task.x_test)
        probs = mdl.class_probs_np(feats, state.classifier, state.space)
        pred = probs.argmax(axis=1)
        truth = np.array([state.label_to_index[int(v)] for v in task.y_test])
        accs.append(float((pred == truth).mean()))
    return accs


@dataclass
class MetricsRecord:
    """Lower-triangular accuracy matrix a[t][j] plus per-step test sizes."""

    accuracy: list[list[float]] = field(default_factory=list)
    test_sizes: list[int] = field(default_factory=list)

    def add_row(self, accs: list[float], sizes: list[int]):
        self.accuracy.append(list(accs))
        self.test_sizes = list(sizes)


def summary_metrics(record: MetricsRecord) -> dict:
    """Final accuracy, average accuracy, average incremental accuracy, and
    average forgetting from a complete accuracy matrix."""
    acc = record.accuracy
    steps = len(acc)
    if steps == 0 or any(len(row) != i + 1 for i, row in enumerate(acc)):
        raise ContractViolation("incomplete accuracy matrix")
    sizes = np.asarray(record.test_sizes, dtype=float)

    def aggregate(row):
        w = sizes[:len(row)]
        return float(np.average(row, weights=w))

    final_acc = aggregate(acc[-1])
    avg_acc = float(np.mean(acc[-1]))
    aia = float(np.mean([aggregate(row) for row in acc]))
    if steps == 1:
        forgetting = None
    else:
        drops = []
        for j in range(steps - 1):
            peak = max(acc[t][j] for t in range(j, steps - 1))
            drops.append(peak - acc[-1][j])
        forgetting = float(np.mean(drops))
    return {
        "final_accuracy": final_acc,
        "average_accuracy": avg_acc,
        "average_incremental_accuracy": aia,
        "average_forgetting": forgetting,
    }


def run_stream(tasks: list[StreamTask], cfg: dict, seed: int,
               backbone: mdl.Backbone, pool: SubmanifoldPool) -> tuple[EngineState, MetricsRecord]:
    """Execute the whole stream and collect the accuracy matrix."""
    state = init_state(backbone, pool, seed)
    record = MetricsRecord()
    for t, task in enumerate(tasks, start=1):
        run_step(state, task, cfg, seed)
        accs = evaluate(state, tasks[:t])
        record.add_row(accs, [len(x.y_test) for x in tasks[:t]])
    return state, record
