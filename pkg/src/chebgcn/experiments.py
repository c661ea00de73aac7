"""Experiment protocols: cross-validated training, grid sweeps, comparisons.

Every run is reproducible from one base seed. Sub-seeds for folds, cells,
and initializations are derived by hashing the base seed together with a
purpose tag, so parallel and serial execution of the same experiment give
byte-identical results.
"""

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .graph import build_laplacian, chebyshev_apply, rescale_laplacian
from .nn import (
    ChebFilterLayer,
    InceptionModule,
    Network,
    NonFiniteGradientError,
    glorot_uniform,
    make_input_basis,
    make_optimizer,
    masked_cross_entropy,
    network_backward,
    network_forward,
)
from .simdata import stratified_folds


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss."""


def derive_seed(*parts) -> int:
    """Deterministic 64-bit seed from a base seed and purpose tags.

    Parts may be ints or strings; the value depends only on them, never on
    process, thread, or iteration order.
    """
    blob = json.dumps(parts, separators=(",", ":")).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def config_fingerprint(payload) -> str:
    """sha256 hex digest of a canonical JSON rendering of a config payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by all experiment protocols.

    ``early_stop_window = 0`` disables early stopping; otherwise training
    stops once the monitored loss has not improved for that many epochs and
    the best-epoch weights are restored. ``stop_metric`` chooses the monitor:
    "val" carves a stratified validation split out of each fold's training
    nodes, "train" watches the training loss itself.
    """

    epochs: int = 200
    lr: float = 0.2
    optimizer: str = "sgd"
    early_stop_window: int = 0
    stop_metric: str = "val"
    val_fraction: float = 0.1
    dropout: float = 0.0
    weight_decay: float = 0.0
    n_folds: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.early_stop_window < 0:
            raise ValueError("early_stop_window must be >= 0")
        if self.stop_metric not in ("val", "train"):
            raise ValueError(f"unknown stop_metric {self.stop_metric!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be >= 0")
        if self.n_folds < 2:
            raise ValueError("n_folds must be at least 2")


@dataclass(frozen=True)
class BranchSpec:
    order: int
    width: int

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("branch order must be >= 0")
        if self.width < 1:
            raise ValueError("branch width must be >= 1")


@dataclass(frozen=True)
class ModuleSpec:
    branches: tuple
    aggregator: str = "concat"


@dataclass(frozen=True)
class ArchSpec:
    """Declarative network shape, independent of data dimensions."""

    modules: tuple
    classifier: bool = True
    activation: str = "relu"


def single_layer(order: int, width: int) -> ArchSpec:
    return ArchSpec(modules=(ModuleSpec(branches=(BranchSpec(order, width),)),))


def sequential(orders, width: int) -> ArchSpec:
    """One single-branch module per order, stacked."""
    mods = tuple(ModuleSpec(branches=(BranchSpec(k, width),)) for k in orders)
    return ArchSpec(modules=mods)


def inception(orders, width: int, aggregator: str = "concat") -> ArchSpec:
    """One module with a branch per order."""
    branches = tuple(BranchSpec(k, width) for k in orders)
    return ArchSpec(modules=(ModuleSpec(branches=branches, aggregator=aggregator),))


def max_first_module_order(arch: ArchSpec) -> int:
    return max(b.order for b in arch.modules[0].branches)


def build_network(arch: ArchSpec, d_in: int, n_classes: int, rng) -> Network:
    """Instantiate an architecture with Glorot weights and zero biases.

    The rng is consumed in a fixed order (modules, then branches, then the
    classifier), so equal specs and seeds give identical networks.
    """
    modules = []
    width_in = d_in
    for mspec in arch.modules:
        branches = [
            ChebFilterLayer.create(b.order, width_in, b.width, rng, activation=arch.activation)
            for b in mspec.branches
        ]
        module = InceptionModule(branches=branches, aggregator=mspec.aggregator)
        modules.append(module)
        width_in = module.d_out
    if arch.classifier:
        w = glorot_uniform(rng, width_in, n_classes, (width_in, n_classes))
        b = np.zeros(n_classes)
        return Network(modules=modules, classifier_weight=w, classifier_bias=b)
    return Network(modules=modules)


class EarlyStopper:
    """Track a loss series; stop after `window` epochs without improvement.

    ``update`` returns True when the gap since the best epoch reaches the
    window. A constant series therefore stops after window + 1 updates (the
    first one sets the incumbent best), and a strictly decreasing series
    never stops.
    """

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = window
        self.epoch = 0
        self.best = np.inf
        self.best_epoch = 0
        self.best_state = None

    def update(self, loss: float, state_fn=None) -> bool:
        self.epoch += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = self.epoch
            if state_fn is not None:
                self.best_state = state_fn()
        return self.epoch - self.best_epoch >= self.window


def early_stop(losses, window: int):
    """Replay a loss series through the stopping rule.

    Returns (stopped, epochs_used, best_epoch) with 1-based epochs.
    """
    stopper = EarlyStopper(window)
    for epoch, loss in enumerate(losses, start=1):
        if stopper.update(loss):
            return True, epoch, stopper.best_epoch
    return False, len(losses), stopper.best_epoch


def _carve_validation(train_mask, labels, fraction, seed):
    """Stratified validation mask inside a training mask, >= 1 node per class
    when a class has at least 2 training nodes."""
    rng = np.random.default_rng(seed)
    val = np.zeros(train_mask.shape[0], dtype=bool)
    for c in np.unique(labels[train_mask]):
        idx = np.flatnonzero(train_mask & (labels == c))
        n_val = max(1, int(round(fraction * idx.size)))
        n_val = min(n_val, idx.size - 1)
        if n_val <= 0:
            continue
        rng.shuffle(idx)
        val[idx[:n_val]] = True
    return val


def train_network(net, lap, x, labels, train_mask, cfg: TrainConfig,
                  input_basis=None, val_mask=None, dropout_rng=None) -> int:
    """Train in place; returns the number of epochs actually run.

    Raises :class:`TrainingDivergence` on a non-finite loss. With early
    stopping enabled the network ends at its best-epoch weights even when
    the epoch budget runs out first. Dropout and the monitored loss both
    follow the usual convention: dropout is on for the update pass only.
    """
    if input_basis is None:
        input_basis = make_input_basis(net, lap, x)
    if cfg.dropout > 0.0 and dropout_rng is None:
        dropout_rng = np.random.default_rng(derive_seed(cfg.seed, "dropout"))
    optimizer = make_optimizer(cfg.optimizer, cfg.lr)
    params = net.parameters()
    stopper = None
    monitor_mask = None
    if cfg.early_stop_window > 0:
        stopper = EarlyStopper(cfg.early_stop_window)
        use_val = cfg.stop_metric == "val" and val_mask is not None and bool(val_mask.any())
        monitor_mask = val_mask if use_val else train_mask

    epochs_run = cfg.epochs
    for epoch in range(1, cfg.epochs + 1):
        scores, tape = network_forward(net, lap, x, input_basis,
                                       dropout=cfg.dropout, dropout_rng=dropout_rng)
        loss, grad = masked_cross_entropy(scores, labels, train_mask)
        if not np.isfinite(loss):
            raise TrainingDivergence(f"non-finite training loss at epoch {epoch}")
        grads = network_backward(tape, grad)
        if cfg.weight_decay > 0.0:
            for name, p in params.items():
                grads[name] = grads[name] + cfg.weight_decay * p
        optimizer.step(params, grads)
        if stopper is not None:
            scores, _ = network_forward(net, lap, x, input_basis)
            monitor_loss, _ = masked_cross_entropy(scores, labels, monitor_mask)
            if not np.isfinite(monitor_loss):
                raise TrainingDivergence(f"non-finite monitored loss at epoch {epoch}")
            if stopper.update(monitor_loss, state_fn=net.get_state):
                epochs_run = epoch
                break
    if stopper is not None and stopper.best_state is not None:
        net.set_state(stopper.best_state)
    return epochs_run


def evaluate_accuracy(net, lap, x, labels, mask, input_basis=None) -> float:
    """Percent of masked nodes whose argmax score matches the label."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no nodes")
    scores, _ = network_forward(net, lap, x, input_basis)
    pred = scores.argmax(axis=1)
    return 100.0 * float(np.mean(pred[mask] == np.asarray(labels)[mask]))


def fold_checksum(folds) -> str:
    h = hashlib.sha256()
    for train, test in folds:
        h.update(np.packbits(np.asarray(train, dtype=bool)).tobytes())
        h.update(np.packbits(np.asarray(test, dtype=bool)).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class ExperimentResult:
    """Cross-validation outcome. Diverged folds are excluded from the
    accuracy statistics and listed by index instead."""

    fold_indices: tuple
    accuracies: tuple
    epochs: tuple
    failed_folds: tuple
    mean_accuracy: float
    sd_accuracy: float
    fingerprint: str
    fold_hash: str

    def to_dict(self) -> dict:
        return {
            "fold_indices": list(self.fold_indices),
            "accuracies": list(self.accuracies),
            "epochs": list(self.epochs),
            "failed_folds": list(self.failed_folds),
            "mean_accuracy": self.mean_accuracy,
            "sd_accuracy": self.sd_accuracy,
            "fingerprint": self.fingerprint,
            "fold_hash": self.fold_hash,
        }


def run_cv(graph, arch: ArchSpec, cfg: TrainConfig, folds=None) -> ExperimentResult:
    """Stratified k-fold cross-validation of one architecture on one graph.

    Fold assignment, per-fold initialization, and the validation carve each
    use seeds derived from ``cfg.seed``, so results are a pure function of
    (graph, arch, cfg). Pass ``folds`` to pin the split across several runs.
    """
    labels = graph.labels
    x = graph.features
    lap = rescale_laplacian(build_laplacian(graph))
    if folds is None:
        folds = stratified_folds(labels, cfg.n_folds, derive_seed(cfg.seed, "folds"))
    basis = chebyshev_apply(lap, x, max_first_module_order(arch))
    fingerprint = config_fingerprint({"arch": asdict(arch), "train": asdict(cfg)})

    fold_indices = []
    accuracies = []
    epochs = []
    failed = []
    for fi, (train, test) in enumerate(folds):
        rng = np.random.default_rng(derive_seed(cfg.seed, "fold", fi))
        net = build_network(arch, graph.n_features, graph.n_classes, rng)
        val = None
        eff_train = train
        if cfg.early_stop_window > 0 and cfg.stop_metric == "val":
            val = _carve_validation(train, labels, cfg.val_fraction, derive_seed(cfg.seed, "val", fi))
            eff_train = train & ~val
        drop_rng = None
        if cfg.dropout > 0.0:
            drop_rng = np.random.default_rng(derive_seed(cfg.seed, "dropout", fi))
        try:
            ep = train_network(net, lap, x, labels, eff_train, cfg,
                               input_basis=basis, val_mask=val, dropout_rng=drop_rng)
        except (TrainingDivergence, NonFiniteGradientError):
            failed.append(fi)
            continue
        fold_indices.append(fi)
        accuracies.append(evaluate_accuracy(net, lap, x, labels, test, input_basis=basis))
        epochs.append(ep)

    accs = np.array(accuracies)
    mean = float(accs.mean()) if accs.size else float("nan")
    sd = float(accs.std(ddof=1)) if accs.size >= 2 else 0.0
    return ExperimentResult(
        fold_indices=tuple(fold_indices),
        accuracies=tuple(accuracies),
        epochs=tuple(epochs),
        failed_folds=tuple(failed),
        mean_accuracy=mean,
        sd_accuracy=sd,
        fingerprint=fingerprint,
        fold_hash=fold_checksum(folds),
    )


@dataclass(frozen=True)
class SweepSpec:
    """Grid sweep over the orders (k1, k2) of a two-layer sequential net."""

    k_min: int = 1
    k_max: int = 6
    width: int = 16
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if self.k_min < 0 or self.k_max < self.k_min:
            raise ValueError(f"bad order range [{self.k_min}, {self.k_max}]")
        if self.width < 1:
            raise ValueError("width must be >= 1")


@dataclass(frozen=True)
class SweepResult:
    grid: dict  # (k1, k2) -> ExperimentResult
    best: tuple


def _sweep_cell(args):
    graph, spec, k1, k2 = args
    cfg = replace(spec.train, seed=derive_seed(spec.train.seed, "cell", k1, k2))
    return (k1, k2), run_cv(graph, sequential((k1, k2), spec.width), cfg)


def heatmap_sweep(graph, spec: SweepSpec, threads: int = 1) -> SweepResult:
    """Cross-validate every (k1, k2) cell of the order grid.

    Each cell derives its own seed from the base seed and its coordinates,
    never from scheduling, so any ``threads`` value produces exactly the
    same result as a serial run.
    """
    cells = [
        (graph, spec, k1, k2)
        for k1 in range(spec.k_min, spec.k_max + 1)
        for k2 in range(spec.k_min, spec.k_max + 1)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(_sweep_cell, cells))
    else:
        pairs = [_sweep_cell(c) for c in cells]
    grid = dict(pairs)

    def rank(cell):
        mean = grid[cell].mean_accuracy
        if not np.isfinite(mean):
            mean = -np.inf
        return (mean, -cell[0], -cell[1])

    best = max(grid, key=rank)
    return SweepResult(grid=grid, best=best)


def single_k_sweep(graph, k_min: int, k_max: int, width: int, cfg: TrainConfig) -> dict:
    """One single-filter model per order k; returns {k: ExperimentResult}."""
    if k_min < 0 or k_max < k_min:
        raise ValueError(f"bad order range [{k_min}, {k_max}]")
    out = {}
    for k in range(k_min, k_max + 1):
        cell_cfg = replace(cfg, seed=derive_seed(cfg.seed, "k", k))
        out[k] = run_cv(graph, single_layer(k, width), cell_cfg)
    return out


COMPARE_MODELS = (
    "sequential-k1k2",
    "sequential-k1k1",
    "sequential-k2k2",
    "inception-concat",
    "inception-maxpool",
)


@dataclass(frozen=True)
class ComparisonResult:
    k1: int
    k2: int
    results: dict  # model name -> ExperimentResult
    convergence_ratios: dict  # aggregator -> baseline epochs / inception epochs


def compare_models(graph, k1: int, k2: int, cfg: TrainConfig, width: int = 16) -> ComparisonResult:
    """Fixed five-way comparison on shared folds.

    Two-layer sequential nets with orders (k1, k2), (k1, k1), (k2, k2) are
    baselines; one-module two-branch nets with orders {k1, k2} under each
    aggregator are the candidates. All five see identical folds and the
    same per-fold init streams, so equal architectures give equal numbers.
    """
    folds = stratified_folds(graph.labels, cfg.n_folds, derive_seed(cfg.seed, "folds"))
    archs = {
        "sequential-k1k2": sequential((k1, k2), width),
        "sequential-k1k1": sequential((k1, k1), width),
        "sequential-k2k2": sequential((k2, k2), width),
        "inception-concat": inception((k1, k2), width, "concat"),
        "inception-maxpool": inception((k1, k2), width, "maxpool"),
    }
    results = {name: run_cv(graph, arch, cfg, folds=folds) for name, arch in archs.items()}
    hashes = {r.fold_hash for r in results.values()}
    if len(hashes) != 1:
        raise RuntimeError("internal error: models ran on different folds")

    ratios = {}
    base = results["sequential-k1k2"]
    for agg in ("concat", "maxpool"):
        inc = results[f"inception-{agg}"]
        if base.epochs and inc.epochs:
            base_mean = float(np.mean(base.epochs))
            inc_mean = float(np.mean(inc.epochs))
            ratios[agg] = base_mean / inc_mean if inc_mean > 0 else float("nan")
        else:
            ratios[agg] = float("nan")
    return ComparisonResult(k1=k1, k2=k2, results=results, convergence_ratios=ratios)


def write_cv_csv(path, result: ExperimentResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "accuracy", "epochs"])
        for fi, acc, ep in zip(result.fold_indices, result.accuracies, result.epochs):
            writer.writerow([fi, repr(acc), ep])


def write_sweep_csv(path, sweep: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k1", "k2", "fold", "accuracy", "epochs"])
        for k1, k2 in sorted(sweep.grid):
            res = sweep.grid[(k1, k2)]
            for fi, acc, ep in zip(res.fold_indices, res.accuracies, res.epochs):
                writer.writerow([k1, k2, fi, repr(acc), ep])


def write_boxplot_csv(path, results_by_k: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "fold", "accuracy", "epochs"])
        for k in sorted(results_by_k):
            res = results_by_k[k]
            for fi, acc, ep in zip(res.fold_indices, res.accuracies, res.epochs):
                writer.writerow([k, fi, repr(acc), ep])


def write_compare_csv(path, comparison: ComparisonResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "fold", "accuracy", "epochs"])
        for name in COMPARE_MODELS:
            res = comparison.results[name]
            for fi, acc, ep in zip(res.fold_indices, res.accuracies, res.epochs):
                writer.writerow([name, fi, repr(acc), ep])


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
