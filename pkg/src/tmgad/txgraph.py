"""Timestamped transaction graphs: ingest, validation, indexing, splits.

Edges are stored columnar (src/dst/timestamp/amount arrays) sorted by the
total order (timestamp, src, dst, input position) and frozen after
construction. Direction is preserved here because motif typing needs it; the
GCN adjacency collapses it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp


class GraphError(Exception):
    pass


class ParseError(GraphError):
    pass


class ValidationError(GraphError):
    pass


NO_TIMESTAMP = -1  # t_earliest sentinel for isolated nodes
UNLABELED = -1


class EdgeRecord(NamedTuple):
    src: int
    dst: int
    timestamp: int
    amount: float


@dataclass
class SplitSpec:
    seed: int
    train_ids: np.ndarray
    test_ids: np.ndarray


@dataclass
class TransactionGraph:
    n: int
    src: np.ndarray        # int64, sorted with dst/timestamp by (t, src, dst, input pos)
    dst: np.ndarray
    timestamp: np.ndarray  # int64, non-negative
    amount: np.ndarray     # float64, NaN when absent
    features: np.ndarray | None = None          # n x d float64
    labels: np.ndarray | None = None            # int8 in {0,1}, UNLABELED when missing
    t_earliest: np.ndarray = field(default=None)  # int64, NO_TIMESTAMP for isolated nodes
    tau_max: int | None = None
    _incident: list | None = field(default=None, repr=False)
    _pair_edges: dict | None = field(default=None, repr=False)
    _edge_lists: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.src, self.dst, self.timestamp, self.amount):
            arr.setflags(write=False)
        if self.t_earliest is None:
            self.t_earliest = _earliest(self.n, self.src, self.dst, self.timestamp)
        self.t_earliest.setflags(write=False)
        if self.tau_max is None and len(self.timestamp):
            self.tau_max = int(self.timestamp.max())

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @property
    def num_features(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def edge(self, i: int) -> EdgeRecord:
        return EdgeRecord(int(self.src[i]), int(self.dst[i]),
                          int(self.timestamp[i]), float(self.amount[i]))

    def labeled_nodes(self) -> np.ndarray:
        if self.labels is None:
            return np.empty(0, dtype=np.int64)
        return np.nonzero(self.labels != UNLABELED)[0].astype(np.int64)

    def edge_lists(self) -> tuple[list, list, list]:
        """Edge columns as plain lists (cached; hot loops index them a lot)."""
        if self._edge_lists is None:
            self._edge_lists = (self.src.tolist(), self.dst.tolist(),
                                self.timestamp.tolist())
        return self._edge_lists

    def _build_adjacency_caches(self) -> None:
        inc = [[] for _ in range(self.n)]
        pairs: dict = {}
        src, dst, ts = self.edge_lists()
        for i in range(self.num_edges):
            s, d, t = src[i], dst[i], ts[i]
            inc[s].append((i, t))
            inc[d].append((i, t))
            key = (s, d) if s < d else (d, s)
            pairs.setdefault(key, ([], []))
            pairs[key][0].append(i)
            pairs[key][1].append(t)
        self._incident = [([i for i, _ in lst], [t for _, t in lst]) for lst in inc]
        self._pair_edges = pairs

    def incident_with_ts(self, v: int) -> tuple[list, list]:
        """(edge indices, timestamps) touching v, ascending in the edge order."""
        if self._incident is None:
            self._build_adjacency_caches()
        return self._incident[v]

    def pair_with_ts(self, u: int, w: int) -> tuple[list, list]:
        """(edge indices, timestamps) between u and w in either direction."""
        if self._pair_edges is None:
            self._build_adjacency_caches()
        return self._pair_edges.get((u, w) if u < w else (w, u), ([], []))

    def incident(self, v: int) -> list:
        return self.incident_with_ts(v)[0]


_EMPTY_IDX = np.empty(0, dtype=np.int64)


def _earliest(n: int, src, dst, ts) -> np.ndarray:
    out = np.full(n, NO_TIMESTAMP, dtype=np.int64)
    for arr in (src, dst):
        for v, t in zip(arr, ts):
            if out[v] == NO_TIMESTAMP or t < out[v]:
                out[v] = t
    return out


def _sort_edges(src, dst, ts):
    order = np.lexsort((dst, src, ts))  # stable: preserves input position within ties
    return src[order], dst[order], ts[order], order


def build_graph(n: int, src, dst, ts, amount=None) -> TransactionGraph:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.int64)
    if amount is None:
        amount = np.full(len(src), np.nan)
    amount = np.asarray(amount, dtype=np.float64)
    if len(src) and (src.min() < 0 or max(src.max(), dst.max()) >= n):
        raise ValidationError("edge endpoint out of range")
    if np.any(src == dst):
        raise ValidationError("self-loops are not allowed")
    if len(ts) and ts.min() < 0:
        raise ValidationError("negative timestamp")
    s, d, t, order = _sort_edges(src, dst, ts)
    return TransactionGraph(n=n, src=s, dst=d, timestamp=t, amount=amount[order].copy())


def _parse_int(token: str, what: str, lineno: int) -> int:
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    try:
        f = float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: cannot parse {what} from {token!r}") from None
    if f != int(f):
        raise ParseError(f"line {lineno}: {what} must be an integer, got {token!r}")
    return int(f)


def load_edge_list(path, fmt: str = "csv") -> TransactionGraph:
    """Read a src,dst,timestamp[,amount] CSV into a graph skeleton.

    Header rows are detected by a non-numeric first field. Node count is
    max id + 1; self-loops and negative timestamps are rejected.
    """
    if fmt != "csv":
        raise ValidationError(f"unsupported edge format {fmt!r}")
    srcs, dsts, tss, amts = [], [], [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if lineno == 1 and not parts[0].strip().lstrip("-").replace(".", "", 1).isdigit():
                continue  # header
            if len(parts) < 3 or len(parts) > 4:
                raise ParseError(f"line {lineno}: expected 3 or 4 columns, got {len(parts)}")
            s = _parse_int(parts[0], "src", lineno)
            d = _parse_int(parts[1], "dst", lineno)
            t = _parse_int(parts[2], "timestamp", lineno)
            if s < 0 or d < 0:
                raise ValidationError(f"line {lineno}: negative node id")
            if s == d:
                raise ValidationError(f"line {lineno}: self-loop {s}->{d}")
            if t < 0:
                raise ValidationError(f"line {lineno}: negative timestamp {t}")
            srcs.append(s)
            dsts.append(d)
            tss.append(t)
            if len(parts) == 4:
                try:
                    a = float(parts[3])
                except ValueError:
                    raise ParseError(f"line {lineno}: cannot parse amount {parts[3]!r}") from None
                if a < 0:
                    raise ValidationError(f"line {lineno}: negative amount {a}")
                amts.append(a)
            else:
                amts.append(np.nan)
    if not srcs:
        return TransactionGraph(n=0, src=_EMPTY_IDX.copy(), dst=_EMPTY_IDX.copy(),
                                timestamp=_EMPTY_IDX.copy(), amount=np.empty(0))
    n = int(max(max(srcs), max(dsts))) + 1
    return build_graph(n, srcs, dsts, tss, amts)


def write_edge_csv(g: TransactionGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("src,dst,timestamp,amount\n")
        for i in range(g.num_edges):
            a = g.amount[i]
            row = f"{g.src[i]},{g.dst[i]},{g.timestamp[i]}"
            f.write(row + (f",{float(a)!r}\n" if not np.isnan(a) else "\n"))


def attach_features_labels(g: TransactionGraph, features_path, labels_path) -> TransactionGraph:
    """Attach node features (one row per node, id order) and {0,1} labels."""
    feats = np.loadtxt(features_path, delimiter=",", dtype=np.float64, ndmin=2)
    if feats.shape[0] != g.n:
        raise ValidationError(
            f"feature row count mismatch: expected {g.n}, got {feats.shape[0]}")
    labels = np.full(g.n, UNLABELED, dtype=np.int8)
    with open(labels_path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if lineno == 1 and not parts[0].strip().lstrip("-").isdigit():
                continue
            if len(parts) != 2:
                raise ParseError(f"labels line {lineno}: expected node_id,label")
            v = _parse_int(parts[0], "node_id", lineno)
            if not (0 <= v < g.n):
                raise ValidationError(f"labels line {lineno}: node {v} out of range")
            raw = parts[1].strip()
            if raw == "" or raw == "-1":
                continue  # missing marker
            y = _parse_int(raw, "label", lineno)
            if y not in (0, 1):
                raise ValidationError(f"labels line {lineno}: label must be 0 or 1, got {y}")
            labels[v] = y
    return TransactionGraph(n=g.n, src=g.src.copy(), dst=g.dst.copy(),
                            timestamp=g.timestamp.copy(), amount=g.amount.copy(),
                            features=feats, labels=labels)


def set_features_labels(g: TransactionGraph, features: np.ndarray,
                        labels: np.ndarray) -> TransactionGraph:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int8)
    if features.shape[0] != g.n or labels.shape[0] != g.n:
        raise ValidationError("features/labels row count must equal node count")
    bad = (labels != UNLABELED) & (labels != 0) & (labels != 1)
    if bad.any():
        raise ValidationError("labels must be 0, 1 or the missing marker")
    return TransactionGraph(n=g.n, src=g.src.copy(), dst=g.dst.copy(),
                            timestamp=g.timestamp.copy(), amount=g.amount.copy(),
                            features=features, labels=labels)


def normalized_adjacency(g: TransactionGraph) -> sp.csr_matrix:
    """Symmetric-normalized (A+I) over the direction-collapsed simple graph."""
    pairs = set(zip(g.src.tolist(), g.dst.tolist()))
    rows, cols = [], []
    for u, v in pairs:
        rows.extend((u, v))
        cols.extend((v, u))
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(g.n, g.n))
    a = (a > 0).astype(np.float64)  # collapse parallel edges
    a_tilde = a + sp.identity(g.n, format="coo")
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    dmat = sp.diags(d_inv_sqrt)
    return (dmat @ a_tilde @ dmat).tocsr()


def temporal_subgraph(g: TransactionGraph, tau) -> TransactionGraph:
    """Restrict to edges with timestamp <= tau; node set is unchanged."""
    if tau < 0:
        raise ValidationError(f"tau must be non-negative, got {tau}")
    keep = g.timestamp <= tau
    return TransactionGraph(
        n=g.n, src=g.src[keep].copy(), dst=g.dst[keep].copy(),
        timestamp=g.timestamp[keep].copy(), amount=g.amount[keep].copy(),
        features=g.features, labels=g.labels)


def make_splits(g: TransactionGraph, k: int, train_fraction: float,
                seed: int) -> list[SplitSpec]:
    """k class-stratified train/test splits over labeled nodes, seeded."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not (0.0 < train_fraction < 1.0):
        raise ValidationError("train_fraction must be in (0, 1)")
    labeled = g.labeled_nodes()
    classes = [labeled[g.labels[labeled] == c] for c in (0, 1)]
    if any(len(c) < 2 for c in classes):
        raise ValidationError("need at least two labeled nodes of each class")
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(k):
        train_parts, test_parts = [], []
        for ids in classes:
            perm = rng.permutation(ids)
            n_train = int(round(train_fraction * len(ids)))
            n_train = min(max(n_train, 1), len(ids) - 1)
            train_parts.append(perm[:n_train])
            test_parts.append(perm[n_train:])
        splits.append(SplitSpec(
            seed=seed,
            train_ids=np.sort(np.concatenate(train_parts)),
            test_ids=np.sort(np.concatenate(test_parts))))
    return splits


def sample_seed_bfs(g: TransactionGraph, n_target: int, seed: int) -> np.ndarray:
    """Generic BFS node sampler from a random labeled seed (utility, not a
    reproduction of any published subsetting scheme)."""
    rng = np.random.default_rng(seed)
    labeled = g.labeled_nodes()
    start = int(rng.choice(labeled if len(labeled) else np.arange(g.n)))
    seen = {start}
    frontier = [start]
    while frontier and len(seen) < n_target:
        nxt = []
        for v in frontier:
            for i in g.incident(v):
                for u in (int(g.src[i]), int(g.dst[i])):
                    if u not in seen:
                        seen.add(u)
                        nxt.append(u)
                        if len(seen) >= n_target:
                            break
                if len(seen) >= n_target:
                    break
            if len(seen) >= n_target:
                break
        frontier = nxt
    return np.array(sorted(seen), dtype=np.int64)


# ---------------------------------------------------------------------------
# binary cache

_CACHE_MAGIC = b"TXGC"
_CACHE_VERSION = 1


def save_cache(g: TransactionGraph, path) -> None:
    flags = (1 if g.features is not None else 0) | (2 if g.labels is not None else 0)
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<B", _CACHE_VERSION))
        f.write(struct.pack("<QQB", g.n, g.num_edges, flags))
        for arr, dt in ((g.src, "<i8"), (g.dst, "<i8"), (g.timestamp, "<i8"),
                        (g.amount, "<f8")):
            f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
        if g.features is not None:
            f.write(struct.pack("<I", g.features.shape[1]))
            f.write(np.ascontiguousarray(g.features, dtype="<f8").tobytes())
        if g.labels is not None:
            f.write(np.ascontiguousarray(g.labels, dtype="<i1").tobytes())


def load_cache(path) -> TransactionGraph:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CACHE_MAGIC:
            raise ValidationError(f"not a graph cache: bad magic {magic!r}")
        (version,) = struct.unpack("<B", f.read(1))
        if version != _CACHE_VERSION:
            raise ValidationError(f"unsupported graph cache version {version}")
        n, m, flags = struct.unpack("<QQB", f.read(17))
        src = np.frombuffer(f.read(8 * m), dtype="<i8").copy()
        dst = np.frombuffer(f.read(8 * m), dtype="<i8").copy()
        ts = np.frombuffer(f.read(8 * m), dtype="<i8").copy()
        amount = np.frombuffer(f.read(8 * m), dtype="<f8").copy()
        features = labels = None
        if flags & 1:
            (d,) = struct.unpack("<I", f.read(4))
            features = np.frombuffer(f.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
        if flags & 2:
            labels = np.frombuffer(f.read(n), dtype="<i1").copy()
        return TransactionGraph(n=n, src=src, dst=dst, timestamp=ts, amount=amount,
                                features=features, labels=labels)


def save_id_map(id_map: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({str(k): int(v) for k, v in id_map.items()}, f, sort_keys=True, indent=0)
        f.write("\n")


def graph_summary(g: TransactionGraph) -> dict:
    labeled = g.labeled_nodes()
    n_fraud = int((g.labels[labeled] == 1).sum()) if len(labeled) else 0
    mean_deg = (2.0 * g.num_edges / g.n) if g.n else 0.0
    return {
        "nodes": int(g.n),
        "edges": int(g.num_edges),
        "tau_max": None if g.tau_max is None else int(g.tau_max),
        "mean_degree": round(mean_deg, 4),
        "num_features": g.num_features,
        "labeled": int(len(labeled)),
        "fraud": n_fraud,
        "normal": int(len(labeled) - n_fraud),
    }
