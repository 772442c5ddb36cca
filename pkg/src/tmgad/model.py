"""Model head: adaptive windows, dual motif attention, classifier.

The head runs per focal node on top of the backbone embeddings. Each motif
instance is augmented with a learned per-type supernode row and pooled by
softmax attention over its four members; instances of a type are averaged
under recency weights sigmoid(delta_v - (t_max^u - t_v)), which is the only
path by which the window learner receives gradient; present types are then
combined by sparsemax attention. Nodes without motif instances contribute a
zero motif embedding, so absence itself is visible to the classifier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import diffcore as dc
from .backbone import GCNConfig, gcn_forward, glorot, init_gcn_weights
from .motif import MotifIndex

WEIGHT_FLOOR = 1e-300  # keeps the recency-weight denominator positive when
                       # every sigmoid underflows; gradients are unaffected

ABLATIONS = ("gcn_only", "tm_fixed", "tm_ada", "tm_ada_intra", "tm_ada_inter", "full")


@dataclass
class HeadOptions:
    use_motifs: bool = True
    adaptive: bool = True
    use_intra: bool = True
    use_inter: bool = True
    delta_fixed: float | None = None

    @staticmethod
    def from_ablation(name: str, delta_fixed: float | None = None) -> "HeadOptions":
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
        if name == "gcn_only":
            return HeadOptions(use_motifs=False, adaptive=False,
                               use_intra=False, use_inter=False)
        if name == "tm_fixed":
            if delta_fixed is None:
                raise ValueError("tm_fixed needs delta_fixed")
            return HeadOptions(adaptive=False, use_intra=False, use_inter=False,
                               delta_fixed=delta_fixed)
        if name == "tm_ada":
            return HeadOptions(use_intra=False, use_inter=False)
        if name == "tm_ada_intra":
            return HeadOptions(use_inter=False)
        if name == "tm_ada_inter":
            return HeadOptions(use_intra=False)
        return HeadOptions()


@dataclass
class ModelState:
    """Every learnable tensor, grouped by component."""

    gcn: list
    win_w1: dc.Tensor
    win_b1: dc.Tensor
    win_w2: dc.Tensor
    win_b2: dc.Tensor
    supernodes: dc.Tensor     # catalog_size x d
    w_intra: dc.Tensor        # d x 1
    w_inter: dc.Tensor        # catalog_size x d
    clf_w1: dc.Tensor
    clf_b1: dc.Tensor
    clf_w2: dc.Tensor
    clf_b2: dc.Tensor

    def parameters(self) -> list:
        return list(self.gcn) + [
            self.win_w1, self.win_b1, self.win_w2, self.win_b2,
            self.supernodes, self.w_intra, self.w_inter,
            self.clf_w1, self.clf_b1, self.clf_w2, self.clf_b2,
        ]

    def named(self) -> dict:
        out = {f"gcn.{i}": w for i, w in enumerate(self.gcn)}
        out.update({
            "win.w1": self.win_w1, "win.b1": self.win_b1,
            "win.w2": self.win_w2, "win.b2": self.win_b2,
            "supernodes": self.supernodes,
            "w_intra": self.w_intra, "w_inter": self.w_inter,
            "clf.w1": self.clf_w1, "clf.b1": self.clf_b1,
            "clf.w2": self.clf_w2, "clf.b2": self.clf_b2,
        })
        return out

    @property
    def embed_dim(self) -> int:
        return self.gcn[-1].shape[1]


WINDOW_BIAS_INIT = -2.0  # start windows near 0.12 * tau: short windows are the
                         # motif-relevant regime and gradients can widen them


def init_model(rng: np.random.Generator, in_dim: int, gcn_cfg: GCNConfig,
               catalog_size: int, window_hidden: int = 8,
               clf_hidden: int = 16) -> ModelState:
    d = gcn_cfg.out_dim
    return ModelState(
        gcn=init_gcn_weights(rng, in_dim, gcn_cfg),
        win_w1=dc.parameter(glorot(rng, d, window_hidden)),
        win_b1=dc.parameter(np.zeros((1, window_hidden))),
        win_w2=dc.parameter(glorot(rng, window_hidden, 1)),
        win_b2=dc.parameter(np.full((1, 1), WINDOW_BIAS_INIT)),
        supernodes=dc.parameter(rng.normal(0.0, 0.1, size=(catalog_size, d))),
        w_intra=dc.parameter(glorot(rng, d, 1)),
        w_inter=dc.parameter(rng.normal(0.0, 0.1, size=(catalog_size, d))),
        clf_w1=dc.parameter(glorot(rng, 2 * d, clf_hidden)),
        clf_b1=dc.parameter(np.zeros((1, clf_hidden))),
        clf_w2=dc.parameter(glorot(rng, clf_hidden, 1)),
        clf_b2=dc.parameter(np.zeros((1, 1))),
    )


# ---------------------------------------------------------------------------
# component operations


def window_logits(h: dc.Tensor, state: ModelState) -> dc.Tensor:
    hidden = dc.tanh(dc.add_bias(dc.matmul(h, state.win_w1), state.win_b1))
    return dc.add_bias(dc.matmul(hidden, state.win_w2), state.win_b2)


def adaptive_windows(h: dc.Tensor, state: ModelState, tau_max: float) -> dc.Tensor:
    """Per-row window length tau_max * sigmoid(f(h)); always in (0, tau_max)."""
    if tau_max <= 0:
        raise ValueError("tau_max must be positive")
    return dc.scale(dc.sigmoid(window_logits(h, state)), tau_max)


def adaptive_window(h_v, state: ModelState, tau_max: float) -> float:
    """Scalar window for one embedding row (convenience over adaptive_windows)."""
    h = h_v if isinstance(h_v, dc.Tensor) else dc.tensor(np.asarray(h_v).reshape(1, -1))
    return adaptive_windows(h, state, tau_max).item()


def instance_weight(delta_v: float, tau_instance_max: float, t_v: float) -> float:
    """Recency weight sigmoid(delta_v - (tau_instance_max - t_v))."""
    return float(expit(delta_v - (tau_instance_max - t_v)))


def intra_instance_embedding(instance, h: dc.Tensor, supernodes: dc.Tensor,
                             w_intra: dc.Tensor) -> dc.Tensor:
    """Attention pool over [supernode, focal, other, other] for one instance."""
    members = dc.concat_rows([
        dc.select_rows(supernodes, [instance.type_id]),
        dc.select_rows(h, list(instance.nodes)),
    ])
    scores = dc.tanh(dc.matmul(members, w_intra))
    alpha = dc.softmax_vec(scores)
    return dc.matmul(dc.transpose(alpha), members)


def type_embedding(instance_embs: dc.Tensor, weights: dc.Tensor) -> dc.Tensor:
    """Recency-weighted average of instance embeddings (normalized)."""
    return dc.weighted_sum(instance_embs, dc.clip_min(weights, WEIGHT_FLOOR))


def inter_embedding(type_embs: dc.Tensor, type_ids, w_inter: dc.Tensor) -> dc.Tensor:
    """Sparsemax attention over the types present at a node."""
    w_sel = dc.select_rows(w_inter, list(type_ids))
    scores = dc.tanh(dc.rowwise_dot(type_embs, w_sel))
    beta = dc.sparsemax_vec(scores)
    return dc.matmul(dc.transpose(beta), type_embs)


def classifier_logits(z: dc.Tensor, state: ModelState) -> dc.Tensor:
    hidden = dc.relu(dc.add_bias(dc.matmul(z, state.clf_w1), state.clf_b1))
    return dc.add_bias(dc.matmul(hidden, state.clf_w2), state.clf_b2)


# ---------------------------------------------------------------------------
# per-node head and batched forward


def _recency_weights(m: int, gaps: np.ndarray, delta_v, opts: HeadOptions):
    if opts.adaptive:
        stretched = dc.matmul(dc.tensor(np.ones((m, 1))), delta_v)  # m x 1
        return dc.clip_min(dc.sigmoid(dc.add_const(stretched, -gaps)), WEIGHT_FLOOR)
    return dc.tensor(np.maximum(expit(opts.delta_fixed - gaps), WEIGHT_FLOOR))


def motif_embedding_for_node(v: int, combined: dc.Tensor, n_nodes: int,
                             index: MotifIndex, state: ModelState,
                             opts: HeadOptions, delta_v=None) -> dc.Tensor | None:
    """Motif half of the node embedding, or None when v has no instances.

    `combined` stacks the backbone embeddings (rows 0..n-1) on top of the
    supernode table (rows n..n+catalog_size-1) so one gather fetches every
    member row. Instances are laid out type-major so the per-instance
    attention, the recency weighting and the per-type normalized averages all
    run as single segment ops over the node's whole instance list.
    """
    by_type = index.instances_at(v)
    if not by_type:
        return None
    start = index.window_starts[v]
    tids = sorted(by_type)
    sizes = [len(by_type[t]) for t in tids]
    insts = [inst for t in tids for inst in by_type[t]]
    if opts.use_intra:
        flat = []
        for inst in insts:
            flat.append(n_nodes + inst.type_id)
            flat.extend(inst.nodes)
        members = dc.select_rows(combined, flat)                   # 4m x d
        scores = dc.tanh(dc.matmul(members, state.w_intra))
        alpha = dc.softmax_blocks(scores, 4)
        inst_embs = dc.sum_blocks(dc.mul_col(members, alpha), 4)   # m x d
    else:
        flat = [x for inst in insts for x in inst.nodes]
        inst_embs = dc.scale(dc.sum_blocks(dc.select_rows(combined, flat), 3), 1.0 / 3.0)
    gaps = np.array([[float(inst.t_max - start)] for inst in insts])
    weights = _recency_weights(len(insts), gaps, delta_v, opts)
    type_embs = dc.div_col(dc.segment_sum_rows(dc.mul_col(inst_embs, weights), sizes),
                           dc.segment_sum_rows(weights, sizes))    # k x d
    if opts.use_inter:
        return inter_embedding(type_embs, tids, state.w_inter)
    return dc.mean_rows(type_embs)


def forward_nodes(x, a_hat, state: ModelState, index: MotifIndex | None,
                  nodes, opts: HeadOptions, tau_max: float, *,
                  training: bool = False, dropout: float = 0.0,
                  rng: np.random.Generator | None = None):
    """Batched forward pass for the listed nodes.

    Returns (logits len(nodes) x 1, deltas n x 1 tensor or None, h).
    """
    if opts.use_motifs and index is None:
        raise ValueError("motif-using head options need a built MotifIndex")
    h = gcn_forward(x, a_hat, state.gcn, training=training, dropout=dropout, rng=rng)
    n = h.shape[0]
    deltas = adaptive_windows(h, state, tau_max) if opts.adaptive else None
    d = state.embed_dim
    zero_row = dc.tensor(np.zeros((1, d)))
    if opts.use_motifs:
        combined = dc.concat_rows([h, state.supernodes])
        parts = []
        for v in nodes:
            delta_v = dc.select_rows(deltas, [v]) if opts.adaptive else None
            emb = motif_embedding_for_node(v, combined, n, index, state, opts, delta_v)
            parts.append(zero_row if emb is None else emb)
        ztilde = dc.concat_rows(parts) if len(parts) > 1 else parts[0]
    else:
        ztilde = dc.tensor(np.zeros((len(nodes), d)))
    z = dc.concat_cols([dc.select_rows(h, list(nodes)), ztilde])
    logits = classifier_logits(z, state)
    return logits, deltas, h


def node_forward(v: int, h: dc.Tensor, index: MotifIndex | None,
                 state: ModelState, opts: HeadOptions, tau_max: float):
    """Single-node head on precomputed embeddings: returns (z_v, y_hat).

    Nodes with no motif instances use a zero motif embedding; prediction is
    still defined.
    """
    n = h.shape[0]
    d = state.embed_dim
    emb = None
    if opts.use_motifs:
        delta_v = None
        if opts.adaptive:
            delta_v = dc.scale(dc.sigmoid(window_logits(dc.select_rows(h, [v]), state)), tau_max)
        combined = dc.concat_rows([h, state.supernodes])
        emb = motif_embedding_for_node(v, combined, n, index, state, opts, delta_v)
    ztilde = emb if emb is not None else dc.tensor(np.zeros((1, d)))
    z = dc.concat_cols([dc.select_rows(h, [v]), ztilde])
    y_hat = float(expit(classifier_logits(z, state).item()))
    return z, y_hat


def delta_snapshot(x, a_hat, state: ModelState, tau_max: float) -> np.ndarray:
    """Per-node window lengths under current parameters (no tape kept)."""
    h = gcn_forward(x, a_hat, state.gcn, training=False)
    return adaptive_windows(h, state, tau_max).data[:, 0].copy()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state: ModelState, meta: dict) -> None:
    dc.save_tensors(path, state.named())
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")


def load_checkpoint(path, state: ModelState) -> dict:
    dc.restore_tensors(state.named(), dc.load_tensors(path))
    with open(str(path) + ".json", "r", encoding="utf-8") as f:
        return json.load(f)
