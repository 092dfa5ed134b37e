"""Citation-graph loading and vertical partitioning.

Datasets arrive in the Planetoid text layout: a ``<name>.content`` file of
``node_id <tab> f_1 ... f_k <tab> label`` rows and a ``<name>.cites`` file
of ``citing <tab> cited`` pairs. Edges are canonicalized to undirected
(min, max) index pairs and de-duplicated; citations of unknown nodes and
self-citations are dropped and counted rather than silently ignored.

The vertical split models two companies holding the same nodes but
disjoint feature columns and disjoint edge sets; the label-holding party B
is the active party. Node alignment is a plain sorted intersection: the
parties are assumed to have aligned their identifiers beforehand, so no
cryptographic set intersection happens here.
"""

import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

import numpy as np

# expected (nodes, undirected edges, features, classes) per dataset
TABLE1_STATS = {
    "cora": (2708, 5409, 1433, 7),
    "pubmed": (19717, 44338, 500, 3),
    "citeseer": (3327, 4732, 3703, 6),
}


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


class StatisticsMismatchError(DataError):
    """Loaded statistics differ from the published reference table."""


@dataclass(frozen=True)
class Dataset:
    node_ids: tuple
    features: np.ndarray  # (n_nodes, n_features) float64
    labels: np.ndarray  # (n_nodes,) int class indices
    edges: tuple  # canonical (i, j) index pairs, i < j, de-duplicated
    num_classes: int
    label_names: tuple = ()
    dropped_edges: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] == 0:
            raise DataError("feature matrix must be 2-D with at least one column")
        if len(self.node_ids) != self.features.shape[0]:
            raise DataError("node id count does not match feature rows")
        n = len(self.node_ids)
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise DataError(f"edge ({i},{j}) references unknown node index")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("labels out of [0, num_classes)")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def stats(self) -> Tuple[int, int, int, int]:
        return (self.n_nodes, len(self.edges), self.n_features, self.num_classes)


@dataclass(frozen=True)
class VerticalView:
    party: str  # "A" (passive) or "B" (active, label holder)
    node_ids: tuple
    features: np.ndarray
    feature_cols: np.ndarray  # original column indices, for reconstruction
    edges: tuple
    labels: np.ndarray = None  # only present on B
    num_classes: int = 0

    def __post_init__(self):
        if self.party not in ("A", "B"):
            raise DataError(f"unknown party {self.party!r}")
        if self.party == "A" and self.labels is not None:
            raise DataError("passive party must not hold labels")


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: np.ndarray  # node indices
    test_ids: np.ndarray


def load_planetoid(content_path: str, cites_path: str) -> Dataset:
    """Parse content/cites files into a Dataset with canonical edges."""
    node_ids: List[str] = []
    rows: List[np.ndarray] = []
    raw_labels: List[str] = []
    index: Dict[str, int] = {}
    n_feat = None
    with open(content_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                raise DataError(f"{content_path}:{lineno}: expected id, features, label")
            nid, feats, label = parts[0], parts[1:-1], parts[-1]
            if n_feat is None:
                n_feat = len(feats)
            elif len(feats) != n_feat:
                raise DataError(
                    f"{content_path}:{lineno}: {len(feats)} features, expected {n_feat}"
                )
            if nid in index:
                raise DataError(f"{content_path}:{lineno}: duplicate node id {nid!r}")
            try:
                row = np.asarray([float(v) for v in feats])
            except ValueError as exc:
                raise DataError(f"{content_path}:{lineno}: non-numeric feature: {exc}") from None
            index[nid] = len(node_ids)
            node_ids.append(nid)
            rows.append(row)
            raw_labels.append(label)
    if not node_ids:
        raise DataError(f"{content_path}: empty content file")

    label_names = tuple(sorted(set(raw_labels)))
    label_idx = {name: k for k, name in enumerate(label_names)}
    labels = np.asarray([label_idx[l] for l in raw_labels], dtype=np.int64)

    edges = set()
    dropped = {"unknown_endpoint": 0, "self_loop": 0, "duplicate": 0}
    with open(cites_path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise DataError(f"{cites_path}:{lineno}: expected two node ids")
            a, b = parts
            if a not in index or b not in index:
                dropped["unknown_endpoint"] += 1
                continue
            i, j = index[a], index[b]
            if i == j:
                dropped["self_loop"] += 1
                continue
            e = (min(i, j), max(i, j))
            if e in edges:
                dropped["duplicate"] += 1
            else:
                edges.add(e)

    return Dataset(
        node_ids=tuple(node_ids),
        features=np.vstack(rows),
        labels=labels,
        edges=tuple(sorted(edges)),
        num_classes=len(label_names),
        label_names=label_names,
        dropped_edges=dropped,
    )


def load_dataset_dir(directory: str, name: str) -> Dataset:
    """Load ``<directory>/<name>.content`` and ``<directory>/<name>.cites``."""
    content = os.path.join(directory, f"{name}.content")
    cites = os.path.join(directory, f"{name}.cites")
    for path in (content, cites):
        if not os.path.exists(path):
            raise DataError(f"missing dataset file: {path}")
    return load_planetoid(content, cites)


def verify_statistics(ds: Dataset, name: str) -> None:
    """Fail loudly if loader statistics drift from the reference table."""
    expected = TABLE1_STATS.get(name.lower())
    if expected is None:
        raise DataError(f"no reference statistics for dataset {name!r}")
    got = ds.stats()
    if got != expected:
        fields = ("nodes", "edges", "features", "classes")
        delta = ", ".join(
            f"{f}: got {g} expected {e}" for f, g, e in zip(fields, got, expected) if g != e
        )
        raise StatisticsMismatchError(f"{name}: statistics drift — {delta}")


def align_nodes(ids_a: Iterable, ids_b: Iterable) -> list:
    """Sorted intersection of the two parties' node id sets.

    Stand-in for the cryptographic set-intersection step; the parties are
    assumed to have aligned beforehand.
    """
    common = set(ids_a) & set(ids_b)
    if not common:
        raise DataError("no common node ids between parties; nothing to train on")
    return sorted(common)


def split_vertical(
    d: Dataset, feature_ratio: float, edge_ratio: float, seed: int
) -> Tuple[VerticalView, VerticalView]:
    """Randomly partition feature columns and edges between parties A and B.

    Columns are shuffled by a seeded rng; the first floor(ratio*k) go to the
    passive party A, the rest to the label-holding active party B. Edges are
    partitioned the same way. Deterministic per seed.
    """
    for nm, r in (("feature_ratio", feature_ratio), ("edge_ratio", edge_ratio)):
        if not 0.0 < r < 1.0:
            raise DataError(f"{nm} must lie strictly inside (0, 1), got {r}")
    rng = np.random.default_rng(seed)
    k = d.n_features
    cols = rng.permutation(k)
    n_a = int(feature_ratio * k)
    if n_a == 0 or n_a == k:
        raise DataError("feature split leaves one party with no columns")
    cols_a, cols_b = np.sort(cols[:n_a]), np.sort(cols[n_a:])

    e = len(d.edges)
    edge_perm = rng.permutation(e)
    e_a = int(edge_ratio * e)
    if e and (e_a == 0 or e_a == e):
        raise DataError("edge split leaves one party with no edges")
    edges_arr = np.asarray(d.edges, dtype=np.int64).reshape(e, 2)
    edges_a = tuple(map(tuple, edges_arr[np.sort(edge_perm[:e_a])]))
    edges_b = tuple(map(tuple, edges_arr[np.sort(edge_perm[e_a:])]))

    view_a = VerticalView(
        party="A",
        node_ids=d.node_ids,
        features=d.features[:, cols_a],
        feature_cols=cols_a,
        edges=edges_a,
    )
    view_b = VerticalView(
        party="B",
        node_ids=d.node_ids,
        features=d.features[:, cols_b],
        feature_cols=cols_b,
        edges=edges_b,
        labels=d.labels,
        num_classes=d.num_classes,
    )
    return view_a, view_b


def five_fold(d: Dataset, seed: int) -> List[FoldSplit]:
    """Seeded shuffle, then contiguous fifths as the test sets."""
    n = d.n_nodes
    if n < 5:
        raise DataError(f"five-fold split needs at least 5 nodes, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = []
    for k, test in enumerate(np.array_split(order, 5)):
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        folds.append(FoldSplit(k, train_ids=order[mask[order]], test_ids=np.sort(test)))
    return folds


def make_synthetic_dataset(
    n_nodes: int = 60,
    n_features: int = 24,
    n_classes: int = 3,
    seed: int = 0,
    intra_p: float = 0.12,
    inter_p: float = 0.01,
    feature_on: float = 0.45,
    feature_off: float = 0.04,
    target_edges: int = None,
) -> Dataset:
    """Class-clustered binary-feature graph in the citation-data mold.

    Communities are classes (stochastic block model edges); each class owns
    a band of feature columns that switch on with higher probability. Used
    for fixtures and for benchmarking at arbitrary dimensions; pass
    target_edges to sample a fixed edge budget instead of the O(n^2) SBM
    sweep (necessary at Cora scale).
    """
    rng = np.random.default_rng(seed)
    labels = np.sort(rng.integers(0, n_classes, size=n_nodes))
    band = max(1, n_features // n_classes)
    features = np.zeros((n_nodes, n_features))
    for v in range(n_nodes):
        c = labels[v]
        p = np.full(n_features, feature_off)
        p[c * band : (c + 1) * band] = feature_on
        features[v] = rng.random(n_features) < p
    edges = set()
    if target_edges is not None:
        by_class = [np.flatnonzero(labels == c) for c in range(n_classes)]
        while len(edges) < target_edges:
            if rng.random() < 0.85:
                members = by_class[int(rng.integers(n_classes))]
                if members.size < 2:
                    continue
                i, j = rng.choice(members, size=2, replace=False)
            else:
                i, j = rng.choice(n_nodes, size=2, replace=False)
            edges.add((min(int(i), int(j)), max(int(i), int(j))))
    else:
        for i in range(n_nodes):
            for j in range(i + 1, n_nodes):
                p = intra_p if labels[i] == labels[j] else inter_p
                if rng.random() < p:
                    edges.add((i, j))
    # keep every node attached so aggregation has something to chew on
    touched = {v for e in edges for v in e}
    for v in range(n_nodes):
        if v not in touched:
            friends = np.flatnonzero(labels == labels[v])
            u = int(rng.choice(friends[friends != v])) if friends.size > 1 else (v + 1) % n_nodes
            edges.add((min(u, v), max(u, v)))
            touched.add(u)
            touched.add(v)
    return Dataset(
        node_ids=tuple(f"n{k}" for k in range(n_nodes)),
        features=features,
        labels=labels,
        edges=tuple(sorted(edges)),
        num_classes=n_classes,
        label_names=tuple(str(c) for c in range(n_classes)),
    )


def write_planetoid(ds: Dataset, directory: str, name: str) -> None:
    """Write a Dataset back out in the content/cites text layout."""
    os.makedirs(directory, exist_ok=True)
    label_of = lambda k: ds.label_names[k] if ds.label_names else str(k)
    with open(os.path.join(directory, f"{name}.content"), "w") as fh:
        for v, nid in enumerate(ds.node_ids):
            feats = "\t".join(str(int(x)) if x == int(x) else repr(x) for x in ds.features[v])
            fh.write(f"{nid}\t{feats}\t{label_of(int(ds.labels[v]))}\n")
    with open(os.path.join(directory, f"{name}.cites"), "w") as fh:
        for i, j in ds.edges:
            fh.write(f"{ds.node_ids[i]}\t{ds.node_ids[j]}\n")
