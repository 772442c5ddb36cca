"""Command-line entry point: ingest, motifs, train, eval, bench.

Runs are driven by a JSON config (sections: data, model, train, analysis,
output); flags override config values for sweeps. All outputs land under the
output directory. Exit codes: 0 success, 1 internal error, 2 input or
validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import model as model_mod
from . import motif as motif_mod
from . import train as train_mod
from . import txgraph
from .backbone import GCNConfig

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2


class ConfigError(Exception):
    pass


_SCHEMA = {
    "data": {"edges", "features", "labels", "cache", "format", "time_unit"},
    "model": {"layers", "hidden_dim", "out_dim", "dropout", "catalog_mode",
              "window_hidden", "clf_hidden"},
    "train": {"epochs", "learning_rate", "optimizer", "refresh_interval", "seed",
              "ablation", "delta_fixed", "window_slack", "instance_cap",
              "pos_weight", "splits", "train_fraction"},
    "analysis": {"delta_grid"},
    "output": {"directory"},
}


def load_config(path) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    for section, body in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        unknown = set(body) - _SCHEMA[section]
        if unknown:
            raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    cfg.setdefault("data", {})
    cfg.setdefault("model", {})
    cfg.setdefault("train", {})
    cfg.setdefault("analysis", {})
    cfg.setdefault("output", {})
    base = path.parent
    for key in ("edges", "features", "labels", "cache"):
        if key in cfg["data"]:
            cfg["data"][key] = str((base / cfg["data"][key]).resolve())
    if "directory" in cfg["output"]:
        cfg["output"]["directory"] = str((base / cfg["output"]["directory"]).resolve())
    return cfg


def _out_dir(cfg, args) -> Path:
    d = args.output or cfg["output"].get("directory") or "tmgad_out"
    out = Path(d)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _gcn_config(cfg) -> GCNConfig:
    m = cfg["model"]
    return GCNConfig(layers=m.get("layers", 2), hidden_dim=m.get("hidden_dim", 16),
                     out_dim=m.get("out_dim", 16), dropout=m.get("dropout", 0.1))


def _train_config(cfg, seed_override=None) -> train_mod.TrainConfig:
    t = cfg["train"]
    return train_mod.TrainConfig(
        epochs=t.get("epochs", 150),
        learning_rate=t.get("learning_rate", 1e-3),
        optimizer=t.get("optimizer", "adam"),
        refresh_interval=t.get("refresh_interval", 5),
        seed=seed_override if seed_override is not None else t.get("seed", 0),
        ablation=t.get("ablation", "full"),
        delta_fixed=t.get("delta_fixed"),
        catalog_mode=cfg["model"].get("catalog_mode", motif_mod.FOCAL_ROOTED),
        window_slack=t.get("window_slack", 1.5),
        instance_cap=t.get("instance_cap", 512),
        pos_weight=t.get("pos_weight"),
        window_hidden=cfg["model"].get("window_hidden", 8),
        clf_hidden=cfg["model"].get("clf_hidden", 16),
    )


def _load_graph(cfg) -> txgraph.TransactionGraph:
    data = cfg["data"]
    cache = data.get("cache")
    if cache and Path(cache).exists():
        return txgraph.load_cache(cache)
    if "edges" not in data:
        raise ConfigError("data section needs 'edges' (or an existing 'cache')")
    g = txgraph.load_edge_list(data["edges"], data.get("format", "csv"))
    if "features" in data or "labels" in data:
        if "features" not in data or "labels" not in data:
            raise ConfigError("features and labels must be provided together")
        for key in ("features", "labels"):
            if not Path(data[key]).exists():
                raise txgraph.ValidationError(f"missing {key} file: {data[key]}")
        g = txgraph.attach_features_labels(g, data["features"], data["labels"])
    return g


# ---------------------------------------------------------------------------
# subcommands


def _remap_external_ids(edges_path: Path, out: Path):
    """Map arbitrary id tokens (hex addresses etc.) to dense integers.

    Returns (path to an integer-id CSV, mapping dict). Files that already use
    dense-friendly integer ids pass through untouched with an identity map.
    """
    rows = []
    tokens = set()
    all_int = True
    with open(edges_path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts[0].lower() in ("src", "source"):
                continue
            if len(parts) < 3:
                raise txgraph.ParseError(f"line {lineno}: expected at least 3 columns")
            rows.append(parts)
            tokens.update(parts[:2])
            if not (parts[0].lstrip("-").isdigit() and parts[1].lstrip("-").isdigit()):
                all_int = False
    if all_int:
        return edges_path, None
    mapping = {tok: i for i, tok in enumerate(sorted(tokens))}
    remapped = out / "edges_dense.csv"
    with open(remapped, "w", encoding="utf-8") as f:
        f.write("src,dst,timestamp,amount\n")
        for parts in rows:
            rest = ",".join(parts[2:4])
            f.write(f"{mapping[parts[0]]},{mapping[parts[1]]},{rest}\n")
    return remapped, mapping


def cmd_ingest(cfg, args) -> int:
    out = _out_dir(cfg, args)
    data = cfg["data"]
    if "edges" not in data:
        raise ConfigError("ingest needs data.edges")
    edges_path = Path(data["edges"])
    if not edges_path.exists():
        raise txgraph.ValidationError(f"missing edges file: {edges_path}")
    edges_file, id_map = _remap_external_ids(edges_path, out)
    g = txgraph.load_edge_list(edges_file, data.get("format", "csv"))
    unit = data.get("time_unit")
    if unit:
        # rescale dataset-native time so the model sees a desk-scale horizon
        ts = (g.timestamp - (g.timestamp.min() if g.num_edges else 0)) // int(unit)
        g = txgraph.build_graph(g.n, g.src, g.dst, ts, g.amount)
    if "features" in data or "labels" in data:
        if "features" not in data or "labels" not in data:
            raise ConfigError("features and labels must be provided together")
        for key in ("features", "labels"):
            if not Path(data[key]).exists():
                raise txgraph.ValidationError(f"missing {key} file: {data[key]}")
        g = txgraph.attach_features_labels(g, data["features"], data["labels"])
    cache_path = out / "graph.cache"
    txgraph.save_cache(g, cache_path)
    if id_map is None:
        id_map = {str(i): i for i in range(g.n)}
    txgraph.save_id_map(id_map, out / "id_map.json")
    summary = txgraph.graph_summary(g)
    with open(out / "ingest_summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    print(json.dumps(summary, sort_keys=True))
    print(f"cache written to {cache_path}")
    return EXIT_OK


def cmd_motifs(cfg, args) -> int:
    out = _out_dir(cfg, args)
    g = _load_graph(cfg)
    if g.labels is None:
        raise txgraph.ValidationError("motif analysis needs labels")
    if g.tau_max is None:
        raise txgraph.ValidationError("graph has no edges")
    grid = args.delta_grid or cfg["analysis"].get("delta_grid")
    if not grid:
        raise ConfigError("empty delta grid: set analysis.delta_grid or --delta-grid")
    grid = [float(d) for d in grid]
    tau = float(g.tau_max)
    clamped = []
    for d in grid:
        if d > tau:
            print(f"warning: delta {d} exceeds tau_max {tau}; clamping", file=sys.stderr)
            d = tau
        clamped.append(d)
    catalog = motif_mod.build_catalog(cfg["model"].get("catalog_mode", motif_mod.FOCAL_ROOTED))
    labeled = g.labeled_nodes()
    window_starts = None
    if args.anchor_offset:
        # experimentation hook: shift every window away from the node's
        # earliest timestamp
        from .txgraph import NO_TIMESTAMP
        window_starts = {int(v): (int(g.t_earliest[v]) + args.anchor_offset
                                  if g.t_earliest[v] != NO_TIMESTAMP else 0)
                         for v in labeled}
    indexes = {}
    for d in clamped:
        indexes[d] = motif_mod.build_index(
            g, np.full(g.n, d), catalog, nodes=labeled,
            window_starts=window_starts,
            cap=cfg["train"].get("instance_cap", 512), jobs=args.jobs)
        print(f"delta={d}: {indexes[d].total_instances()} instances")
    table = motif_mod.motif_histogram(indexes, g.labels)
    for i, d in enumerate(clamped):
        sub = {k: v for k, v in table.items() if k[0] == d}
        motif_mod.write_histogram_csv(sub, [d], catalog.size, out / f"histogram_delta_{i}.csv")
    anomalies = labeled[g.labels[labeled] == 1]
    corr = motif_mod.motif_cross_correlation(indexes[clamped[-1]], anomalies)
    motif_mod.write_correlation_csv(corr, out / "anomaly_correlation.csv")
    print(f"wrote {len(clamped)} histogram files and anomaly_correlation.csv to {out}")
    return EXIT_OK


def _run_splits(cfg, args, g):
    t = cfg["train"]
    k = t.get("splits", 3)
    fraction = t.get("train_fraction", 0.8)
    seed = args.seed if args.seed is not None else t.get("seed", 0)
    splits = txgraph.make_splits(g, k, fraction, seed)
    return splits, seed


def cmd_train(cfg, args) -> int:
    out = _out_dir(cfg, args)
    g = _load_graph(cfg)
    gcn_cfg = _gcn_config(cfg)
    splits, seed = _run_splits(cfg, args, g)
    per_split = []
    for i, split in enumerate(splits):
        tcfg = _train_config(cfg, seed_override=seed + i)
        state, report = train_mod.train(g, tcfg, gcn_cfg, split)
        meta = {
            "split_index": i,
            "catalog_mode": tcfg.catalog_mode,
            "catalog_size": report.config["catalog_size"],
            "refresh_interval": tcfg.refresh_interval,
            "window_slack": tcfg.window_slack,
            "train_ids": split.train_ids.tolist(),
            "test_ids": split.test_ids.tolist(),
            "extraction_windows": None if report.extraction_windows is None
            else report.extraction_windows.tolist(),
            "delta_final": None if report.delta_final is None
            else report.delta_final.tolist(),
            "config": report.config,
        }
        model_mod.save_checkpoint(out / f"checkpoint_{i}.bin", state, meta)
        with open(out / f"loss_curve_{i}.csv", "w", encoding="utf-8") as f:
            f.write("epoch,loss,delta_min,delta_mean,delta_max\n")
            for e, loss in enumerate(report.loss_curve):
                if e < len(report.delta_stats):
                    stats = ",".join(repr(x) for x in report.delta_stats[e])
                else:
                    stats = ",,"
                f.write(f"{e},{loss!r},{stats}\n")
        if report.delta_final is not None:
            with open(out / f"delta_by_class_{i}.csv", "w", encoding="utf-8") as f:
                f.write("node,label,delta\n")
                for v in g.labeled_nodes():
                    f.write(f"{v},{g.labels[v]},{report.delta_final[v]!r}\n")
        per_split.append(report)
        print(f"split {i}: auc={report.auc:.4f} auprc={report.auprc:.4f} "
              f"accuracy={report.accuracy:.4f}")
    mean = {
        "auc": float(np.mean([r.auc for r in per_split])),
        "auprc": float(np.mean([r.auprc for r in per_split])),
        "accuracy": float(np.mean([r.accuracy for r in per_split])),
    }
    report_doc = {
        "mean": mean,
        "per_split": [r.to_dict() for r in per_split],
        "splits": len(splits),
        "seed": seed,
    }
    with open(out / "train_report.json", "w", encoding="utf-8") as f:
        json.dump(report_doc, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"mean over {len(splits)} splits: auc={mean['auc']:.4f} "
          f"auprc={mean['auprc']:.4f}")
    return EXIT_OK


def cmd_eval(cfg, args) -> int:
    out = _out_dir(cfg, args)
    g = _load_graph(cfg)
    gcn_cfg = _gcn_config(cfg)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise txgraph.ValidationError(f"missing checkpoint: {ckpt}")
    catalog_mode = cfg["model"].get("catalog_mode", motif_mod.FOCAL_ROOTED)
    catalog = motif_mod.build_catalog(catalog_mode)
    with open(str(ckpt) + ".json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    if meta["catalog_mode"] != catalog_mode or meta["catalog_size"] != catalog.size:
        raise txgraph.ValidationError(
            f"checkpoint catalog ({meta['catalog_mode']}, {meta['catalog_size']}) does not "
            f"match config ({catalog_mode}, {catalog.size})")
    tcfg = _train_config(cfg)
    rng = np.random.default_rng(0)
    state = model_mod.init_model(rng, g.num_features, gcn_cfg, catalog.size,
                                 window_hidden=tcfg.window_hidden,
                                 clf_hidden=tcfg.clf_hidden)
    model_mod.load_checkpoint(ckpt, state)
    opts = model_mod.HeadOptions.from_ablation(tcfg.ablation, tcfg.delta_fixed)
    a_hat = txgraph.normalized_adjacency(g)
    index = None
    if opts.use_motifs:
        windows = np.array(meta["extraction_windows"])
        index = motif_mod.build_index(g, windows, catalog, nodes=g.labeled_nodes(),
                                      cap=tcfg.instance_cap)
    which = args.split or "test"
    ids = np.array(meta["test_ids" if which == "test" else "train_ids"])
    logits, _, _ = model_mod.forward_nodes(
        g.features, a_hat, state, index, ids, opts, float(g.tau_max), training=False)
    from scipy.special import expit

    scores = expit(logits.data[:, 0])
    y = g.labels[ids].astype(float)
    doc = {
        "split": which,
        "auc": train_mod.auc(scores, y),
        "auprc": train_mod.auprc(scores, y),
        "accuracy": train_mod.accuracy(scores, y),
        "checkpoint": str(ckpt),
    }
    with open(out / "eval_report.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_bench(cfg, args) -> int:
    out = _out_dir(cfg, args)
    sizes = [int(s) for s in (args.sizes or [1000, 2000, 4000])]
    repeats = args.repeats
    catalog = motif_mod.build_catalog(cfg["model"].get("catalog_mode", motif_mod.FOCAL_ROOTED))
    rows = []
    for n in sizes:
        g = train_mod.synth_burst_graph(n, 0.05, burst_len=10,
                                        seed=cfg["train"].get("seed", 0))
        windows = np.full(g.n, float(g.tau_max) / 8.0)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            idx = motif_mod.build_index(g, windows, catalog, nodes=np.arange(g.n),
                                        cap=512, jobs=args.jobs)
            times.append(time.perf_counter() - t0)
        rows.append((n, g.num_edges, idx.total_instances(),
                     min(times), float(np.mean(times)), float(np.std(times))))
        print(f"n={n}: edges={rows[-1][1]} instances={rows[-1][2]} "
              f"best={rows[-1][3]:.3f}s mean={rows[-1][4]:.3f}s")
    xs = np.log([r[0] for r in rows])
    ys = np.log([r[3] for r in rows])
    slope = float(np.polyfit(xs, ys, 1)[0])
    with open(out / "bench.csv", "w", encoding="utf-8") as f:
        f.write("nodes,edges,instances,best_seconds,mean_seconds,std_seconds\n")
        for r in rows:
            f.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in r) + "\n")
        f.write(f"# loglog_slope,{slope!r}\n")
    print(f"log-log slope: {slope:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _error_json(code: int, message: str, context: str) -> None:
    print(json.dumps({"code": code, "message": message, "context": context},
                     sort_keys=True), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tmgad",
                                description="temporal-motif transaction-graph anomaly detection")
    p.add_argument("--config", required=True, help="path to the run's JSON config")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--jobs", type=int, default=1, help="worker cap for enumeration")
    p.add_argument("--output", default=None, help="override output.directory")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", help="validate raw CSVs and write the graph cache")
    pm = sub.add_parser("motifs", help="motif histograms and anomaly correlation")
    pm.add_argument("--delta-grid", type=float, nargs="+", default=None)
    pm.add_argument("--anchor-offset", type=int, default=0,
                    help="shift window starts this far past each node's first activity")
    sub.add_parser("train", help="train over k stratified splits and report means")
    pe = sub.add_parser("eval", help="re-score a checkpoint on a named split")
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--split", choices=["train", "test"], default="test")
    pb = sub.add_parser("bench", help="enumeration wall-time scaling")
    pb.add_argument("--sizes", type=int, nargs="+", default=None)
    pb.add_argument("--repeats", type=int, default=3)
    return p


_COMMANDS = {
    "ingest": cmd_ingest,
    "motifs": cmd_motifs,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, txgraph.GraphError, motif_mod.MotifError,
            train_mod.MetricsError, ValueError) as e:
        _error_json(EXIT_INPUT, str(e), args.command)
        return EXIT_INPUT
    except (dc.DiffError, train_mod.TrainError) as e:
        _error_json(EXIT_INTERNAL, str(e), args.command)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
