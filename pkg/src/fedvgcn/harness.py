"""Experiment runner: isolated / federated / combined comparisons.

One run = one dataset, one setting, five-fold cross-validation:

* combined    — plain GraphSage on the full plaintext data (the insecure
                upper baseline);
* isolated_a  — plain GraphSage on party A's feature and edge subset only
                (labels are available to the experiment for training and
                scoring, as in the published isolated baselines);
* isolated_b  — same for party B;
* federated   — the three-party encrypted protocol over the two views.

Federated folds are independent sessions, so they run in parallel worker
processes by default; results are bit-identical to a serial run. Records
persist as line-delimited JSON next to a human-readable table.
"""

import json
import multiprocessing
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import gnn, graph
from .protocol import FederatedConfig, FederatedSession

SETTINGS = ("isolated_a", "isolated_b", "federated", "combined")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass
class ExperimentConfig:
    dataset_dir: str
    name: str
    setting: str
    feature_ratio: float = 0.5
    edge_ratio: float = 0.5
    epochs: int = 100
    seed: int = 0
    key_bits: int = 512
    frac_bits: int = 32
    scalar_bits: int = 16
    activation_a: object = "auto"  # positive float or "auto"
    learning_rate: float = 1e-5
    dropout: float = 0.5
    unsup_weight: float = 0.0
    hidden: int = 64
    subsample_nodes: Optional[int] = None
    parallel_folds: Optional[int] = None  # None = min(5, cpu count)
    full_crypto: bool = False
    verify_stats: bool = True

    def validate(self) -> None:
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}; pick from {SETTINGS}")
        for nm, r in (("feature_ratio", self.feature_ratio), ("edge_ratio", self.edge_ratio)):
            if not 0.0 < r < 1.0:
                raise ConfigError(f"{nm} must lie in (0, 1), got {r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.key_bits not in (512, 1024, 2048):
            raise ConfigError("key_bits must be one of 512, 1024, 2048")
        if self.full_crypto and self.key_bits < 1024:
            raise ConfigError("--full-crypto requires at least 1024-bit keys")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.unsup_weight < 0:
            raise ConfigError("unsup_weight must be non-negative")
        if self.unsup_weight > 0 and self.setting == "federated":
            raise ConfigError(
                "the auxiliary unsupervised term is plaintext-only; "
                "federated runs require unsup_weight == 0"
            )
        if self.activation_a != "auto":
            try:
                a = float(self.activation_a)
            except (TypeError, ValueError):
                raise ConfigError("activation_a must be 'auto' or a positive number") from None
            if a <= 0:
                raise ConfigError("activation_a must be positive")
        if self.subsample_nodes is not None and self.subsample_nodes < 10:
            raise ConfigError("subsample_nodes must be at least 10")


@dataclass
class RunRecord:
    config: Dict
    fold_accuracies: List[float]
    mean_accuracy: float
    wall_time_s: float
    counters: Optional[Dict] = None
    final_losses: List[float] = field(default_factory=list)

    def __post_init__(self):
        for acc in self.fold_accuracies:
            if not 0.0 <= acc <= 1.0:
                raise ConfigError(f"accuracy out of [0,1]: {acc}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "fedvgcn.run_record",
                "version": 1,
                "config": self.config,
                "fold_accuracies": self.fold_accuracies,
                "mean_accuracy": self.mean_accuracy,
                "wall_time_s": self.wall_time_s,
                "counters": self.counters,
                "final_losses": self.final_losses,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        blob = json.loads(line)
        if blob.get("kind") != "fedvgcn.run_record":
            raise ConfigError("not a run record")
        return cls(
            config=blob["config"],
            fold_accuracies=blob["fold_accuracies"],
            mean_accuracy=blob["mean_accuracy"],
            wall_time_s=blob["wall_time_s"],
            counters=blob.get("counters"),
            final_losses=blob.get("final_losses", []),
        )


def subsample_dataset(ds: graph.Dataset, k: int, seed: int) -> graph.Dataset:
    """Seeded node subsample with edges reindexed to the survivors."""
    if k >= ds.n_nodes:
        return ds
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.permutation(ds.n_nodes)[:k])
    remap = {int(old): new for new, old in enumerate(keep)}
    edges = tuple(
        (remap[i], remap[j]) for i, j in ds.edges if i in remap and j in remap
    )
    return graph.Dataset(
        node_ids=tuple(ds.node_ids[i] for i in keep),
        features=ds.features[keep],
        labels=ds.labels[keep],
        edges=edges,
        num_classes=ds.num_classes,
        label_names=ds.label_names,
    )


def _load(config: ExperimentConfig) -> graph.Dataset:
    ds = graph.load_dataset_dir(config.dataset_dir, config.name)
    if config.verify_stats and config.name.lower() in graph.TABLE1_STATS:
        graph.verify_statistics(ds, config.name)
    if config.subsample_nodes is not None:
        ds = subsample_dataset(ds, config.subsample_nodes, config.seed)
    return ds


def _train_views(config: ExperimentConfig, ds: graph.Dataset):
    return graph.split_vertical(ds, config.feature_ratio, config.edge_ratio, config.seed)


def _plaintext_run(
    config: ExperimentConfig, x: np.ndarray, edges, labels, num_classes, folds
) -> Tuple[List[float], List[float]]:
    result = gnn.train_plaintext(
        x,
        edges,
        labels,
        num_classes,
        folds,
        epochs=config.epochs,
        seed=config.seed,
        activation=config.activation_a,
        hidden=config.hidden,
        learning_rate=config.learning_rate,
        dropout_rate=config.dropout,
        unsup_weight=config.unsup_weight,
    )
    finals = [l[-1] if l else float("nan") for l in result.losses]
    return result.fold_accuracies, finals


def _federated_fold_worker(args) -> Tuple[int, float, float, Dict]:
    """One fold = one full session; top-level so it can cross process
    boundaries. The fold model mirrors the plaintext trainer's recipe: one
    activation fit shared across folds, per-fold seeded Glorot init."""
    (fold_index, view_a, view_b, train_ids, test_ids, act_a, model_seed, cfg_fields) = args
    epochs = cfg_fields.pop("_epochs")
    config = FederatedConfig(**cfg_fields)
    in_dim = view_a.features.shape[1] + view_b.features.shape[1]
    model = gnn.glorot_init(
        in_dim,
        view_b.num_classes,
        act_a,
        model_seed,
        hidden=config.hidden,
        dropout_rate=config.dropout_rate,
        learning_rate=config.learning_rate,
    )
    session = FederatedSession(view_a, view_b, config, model=model)
    session.setup()
    losses = session.train(train_ids, epochs=epochs)
    acc = session.evaluate(test_ids)
    final_loss = losses[-1] if losses else float("nan")
    return fold_index, acc, final_loss, session.counters_report()


def _federated_run(
    config: ExperimentConfig, ds: graph.Dataset, folds
) -> Tuple[List[float], List[float], Dict]:
    view_a, view_b = _train_views(config, ds)
    x_full = np.hstack([view_a.features, view_b.features])
    edges_union = tuple(view_a.edges) + tuple(view_b.edges)
    act_a = gnn.resolve_activation(
        config.activation_a, x_full, edges_union, x_full.shape[1], ds.num_classes,
        config.seed, config.hidden,
    )
    jobs = []
    for fold in folds:
        cfg_fields = dict(
            key_bits=config.key_bits,
            frac_bits=config.frac_bits,
            scalar_bits=config.scalar_bits,
            seed=config.seed * 101 + fold.fold_index,
            learning_rate=config.learning_rate,
            dropout_rate=config.dropout,
            activation=act_a,
            hidden=config.hidden,
            test_mode=not config.full_crypto,
            _epochs=config.epochs,
        )
        jobs.append(
            (
                fold.fold_index,
                view_a,
                view_b,
                fold.train_ids,
                fold.test_ids,
                act_a,
                config.seed + fold.fold_index,
                cfg_fields,
            )
        )
    workers = config.parallel_folds
    if workers is None:
        workers = min(len(folds), os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=min(workers, len(jobs))) as pool:
            results = pool.map(_federated_fold_worker, jobs)
    else:
        results = [_federated_fold_worker(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    accs = [r[1] for r in results]
    finals = [r[2] for r in results]
    totals: Dict = {}
    for _, _, _, counters in results:
        for key, value in counters.items():
            if isinstance(value, (int, float)):
                totals[key] = totals.get(key, 0) + value
    return accs, finals, totals


def run(config: ExperimentConfig) -> RunRecord:
    """Execute one experiment setting end to end."""
    config.validate()
    started = time.time()
    ds = _load(config)
    folds = graph.five_fold(ds, config.seed)
    counters = None
    if config.setting == "combined":
        accs, finals = _plaintext_run(
            config, ds.features, ds.edges, ds.labels, ds.num_classes, folds
        )
    elif config.setting in ("isolated_a", "isolated_b"):
        view_a, view_b = _train_views(config, ds)
        view = view_a if config.setting == "isolated_a" else view_b
        accs, finals = _plaintext_run(
            config, view.features, view.edges, ds.labels, ds.num_classes, folds
        )
    else:
        accs, finals, counters = _federated_run(config, ds, folds)
    record = RunRecord(
        config=asdict(config),
        fold_accuracies=[float(a) for a in accs],
        mean_accuracy=float(np.mean(accs)),
        wall_time_s=time.time() - started,
        counters=counters,
        final_losses=[float(v) for v in finals],
    )
    return record


def write_records(records: Sequence[RunRecord], path: str) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path: str) -> List[RunRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_json(line))
    return records


_ROW_LABELS = {
    "isolated_a": "GraphSage_A",
    "isolated_b": "GraphSage_B",
    "federated": "FedVGraphSage",
    "combined": "GraphSage_A+B",
}


def compare(records: Sequence[RunRecord], out_path: Optional[str] = None) -> str:
    """Aligned accuracy table, one row per setting, one column per dataset."""
    if not records:
        raise ConfigError("compare needs at least one record")
    datasets: List[str] = []
    cells: Dict[Tuple[str, str], float] = {}
    for rec in records:
        name = rec.config["name"]
        setting = rec.config["setting"]
        if name not in datasets:
            datasets.append(name)
        cells[(setting, name)] = rec.mean_accuracy
    settings = [s for s in SETTINGS if any((s, d) in cells for d in datasets)]
    label_w = max(len(_ROW_LABELS[s]) for s in settings) + 2
    col_w = max(10, *(len(d) + 2 for d in datasets))
    lines = ["".ljust(label_w) + "".join(d.rjust(col_w) for d in datasets)]
    for s in settings:
        row = _ROW_LABELS[s].ljust(label_w)
        for d in datasets:
            val = cells.get((s, d))
            row += ("-".rjust(col_w) if val is None else f"{val:.4f}".rjust(col_w))
        lines.append(row)
    table = "\n".join(lines)
    if out_path:
        write_records(records, out_path)
    return table


def stats_report(dataset_dir: str, name: str) -> str:
    """Table-1 style statistics, with loud drift checking for known sets."""
    ds = graph.load_dataset_dir(dataset_dir, name)
    lines = [
        f"dataset:  {name}",
        f"nodes:    {ds.n_nodes}",
        f"edges:    {len(ds.edges)} (undirected, de-duplicated)",
        f"features: {ds.n_features}",
        f"classes:  {ds.num_classes}",
    ]
    dropped = {k: v for k, v in ds.dropped_edges.items() if v}
    if dropped:
        lines.append(f"dropped:  {dropped}")
    if name.lower() in graph.TABLE1_STATS:
        graph.verify_statistics(ds, name)
        lines.append("reference statistics: exact match")
    return "\n".join(lines)
