"""Command-line driver.

Subcommands:
    simdata      draw a synthetic dataset and write features.csv / edges.txt
    build-graph  assemble an affinity graph from meta-data and features CSVs
    train        cross-validate one architecture on a dataset
    sweep        grid-sweep filter orders (pairs heatmap or single-k boxplot)
    compare      five-way sequential-vs-inception comparison

Every subcommand takes --config (path or packaged preset name), --seed,
--out, and --threads; flags override CHEBGCN_* environment variables, which
override the config file. The effective config is echoed into the output
directory as effective-config.yaml, so any run can be repeated from its own
output.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import config as cfgmod
from .affinity import (
    AffinityError,
    MetaElement,
    SimilarityKernel,
    binarize_edges,
    build_affinity,
)
from .config import ConfigError
from .experiments import (
    SweepSpec,
    compare_models,
    config_fingerprint,
    heatmap_sweep,
    run_cv,
    single_k_sweep,
    write_boxplot_csv,
    write_compare_csv,
    write_cv_csv,
    write_summary_json,
    write_sweep_csv,
    COMPARE_MODELS,
)
from .graph import GraphInvariantError, PopulationGraph
from .io import FileFormatError, load_graph, read_features_csv, read_meta_csv, save_graph
from .simdata import generate


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _edge_count(graph: PopulationGraph) -> int:
    adj = graph.adjacency
    nnz = adj.nnz if sp.issparse(adj) else int(np.count_nonzero(adj))
    return nnz // 2


def _require_file(path, field):
    if not path:
        raise ConfigError(f"{field} is required for this command")
    if not Path(path).is_file():
        raise ConfigError(f"{field}: no such file: {path}")


def _dataset_graph(cfg: dict) -> PopulationGraph:
    ds = cfg["dataset"]
    if ds["source"] == "sim":
        return generate(cfgmod.to_sim_config(cfg))
    _require_file(ds["features"], "dataset.features")
    _require_file(ds["edges"], "dataset.edges")
    return load_graph(ds["features"], ds["edges"])


def _prepare_out(cfg: dict) -> Path:
    out = Path(cfg["experiment"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective-config.yaml").write_text(cfgmod.effective_yaml(cfg))
    return out


def _check_graph(graph: PopulationGraph) -> None:
    if _edge_count(graph) == 0:
        _warn("graph has no edges; every node is isolated")


def cmd_simdata(cfg: dict) -> int:
    graph = generate(cfgmod.to_sim_config(cfg))
    out = _prepare_out(cfg)
    save_graph(graph, out / "features.csv", out / "edges.txt")
    _check_graph(graph)
    print(f"wrote {out / 'features.csv'} and {out / 'edges.txt'}: "
          f"{graph.n_nodes} nodes, {_edge_count(graph)} edges")
    return 0


def cmd_build_graph(cfg: dict) -> int:
    aff = cfg["affinity"]
    _require_file(aff["meta"], "affinity.meta")
    _require_file(aff["features"], "affinity.features")
    features, labels, train, test = read_features_csv(aff["features"])
    columns = read_meta_csv(aff["meta"])
    names = aff["elements"] if aff["elements"] is not None else list(columns)
    elements = []
    for name in names:
        if name not in columns:
            raise ConfigError(f"affinity.elements: no column {name!r} in {aff['meta']}")
        values, missing = columns[name]
        if values.shape[0] != features.shape[0]:
            raise ConfigError(
                f"meta-data covers {values.shape[0]} nodes but features cover {features.shape[0]}"
            )
        elements.append(MetaElement(
            name=name,
            values=values,
            beta=float(aff["betas"].get(name, 0.0)),
            missing=missing if missing.any() else None,
        ))
    kernel = SimilarityKernel(distance=aff["distance"], sigma=aff["sigma"])
    adjacency = build_affinity(
        elements, features, kernel=kernel,
        mode=aff["mode"], element=aff["element"], strict=aff["strict"],
    )
    graph = PopulationGraph(
        adjacency=adjacency, features=features, labels=labels,
        train_mask=train, test_mask=test,
    )
    out = _prepare_out(cfg)
    save_graph(graph, out / "features.csv", out / "edges.txt")
    _check_graph(graph)
    isolated = int(np.sum(graph.degrees() == 0))
    if isolated:
        _warn(f"{isolated} nodes are isolated under the current thresholds")
    for el in elements:
        gate = binarize_edges(el, strict=aff["strict"])
        print(f"element {el.name}: {int(gate.sum()) // 2} edges (beta={el.beta})")
    print(f"wrote {out / 'features.csv'} and {out / 'edges.txt'}: "
          f"{graph.n_nodes} nodes, {_edge_count(graph)} edges "
          f"({aff['mode']} over {len(elements)} elements)")
    return 0


def cmd_train(cfg: dict) -> int:
    graph = _dataset_graph(cfg)
    _check_graph(graph)
    arch = cfgmod.to_arch_spec(cfg)
    train_cfg = cfgmod.to_train_config(cfg)
    result = run_cv(graph, arch, train_cfg)
    out = _prepare_out(cfg)
    write_cv_csv(out / "cv.csv", result)
    write_summary_json(out / "summary.json", {
        "command": "train",
        "config_fingerprint": config_fingerprint(cfg),
        "result": result.to_dict(),
    })
    n_ok = len(result.accuracies)
    line = f"accuracy {result.mean_accuracy:.2f} +/- {result.sd_accuracy:.2f} over {n_ok} folds"
    if result.failed_folds:
        line += f" ({len(result.failed_folds)} diverged)"
    print(line)
    return 0


def cmd_sweep(cfg: dict) -> int:
    graph = _dataset_graph(cfg)
    _check_graph(graph)
    exp = cfg["experiment"]
    train_cfg = cfgmod.to_train_config(cfg)
    out = _prepare_out(cfg)
    lo, hi = exp["k_range"]
    if exp["sweep_mode"] == "pairs":
        spec = SweepSpec(k_min=lo, k_max=hi, width=exp["width"], train=train_cfg)
        sweep = heatmap_sweep(graph, spec, threads=exp["threads"])
        write_sweep_csv(out / "sweep.csv", sweep)
        write_summary_json(out / "summary.json", {
            "command": "sweep",
            "config_fingerprint": config_fingerprint(cfg),
            "best": list(sweep.best),
            "cells": {f"{k1},{k2}": r.to_dict() for (k1, k2), r in sorted(sweep.grid.items())},
        })
        best = sweep.grid[sweep.best]
        print(f"swept {len(sweep.grid)} cells; best (k1, k2) = {sweep.best} "
              f"at {best.mean_accuracy:.2f} +/- {best.sd_accuracy:.2f}")
    else:
        results = single_k_sweep(graph, lo, hi, exp["width"], train_cfg)
        write_boxplot_csv(out / "boxplot.csv", results)
        write_summary_json(out / "summary.json", {
            "command": "sweep",
            "config_fingerprint": config_fingerprint(cfg),
            "cells": {str(k): r.to_dict() for k, r in sorted(results.items())},
        })
        for k in sorted(results):
            r = results[k]
            print(f"k = {k:2d}: {r.mean_accuracy:6.2f} +/- {r.sd_accuracy:.2f}")
    return 0


def cmd_compare(cfg: dict) -> int:
    graph = _dataset_graph(cfg)
    _check_graph(graph)
    exp = cfg["experiment"]
    train_cfg = cfgmod.to_train_config(cfg)
    comparison = compare_models(graph, exp["k1"], exp["k2"], train_cfg, width=exp["width"])
    out = _prepare_out(cfg)
    write_compare_csv(out / "compare.csv", comparison)
    write_summary_json(out / "summary.json", {
        "command": "compare",
        "config_fingerprint": config_fingerprint(cfg),
        "k1": comparison.k1,
        "k2": comparison.k2,
        "convergence_ratios": comparison.convergence_ratios,
        "models": {name: r.to_dict() for name, r in comparison.results.items()},
    })
    for name in COMPARE_MODELS:
        r = comparison.results[name]
        epochs = float(np.mean(r.epochs)) if r.epochs else float("nan")
        print(f"{name:20s} {r.mean_accuracy:6.2f} +/- {r.sd_accuracy:5.2f} "
              f"(mean epochs {epochs:.1f})")
    for agg, ratio in comparison.convergence_ratios.items():
        print(f"convergence speed-up vs sequential baseline ({agg}): {ratio:.2f}x")
    return 0


COMMANDS = {
    "simdata": cmd_simdata,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chebgcn",
        description="Spectral graph convolution experiments on population graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simdata": "generate a synthetic dataset",
        "build-graph": "build an affinity graph from meta-data and features",
        "train": "cross-validate one architecture",
        "sweep": "sweep filter orders over a grid",
        "compare": "compare sequential baselines against multi-branch modules",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="config file path or packaged preset name")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--out", help="override experiment.out")
        p.add_argument("--threads", type=int, help="override experiment.threads")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = cfgmod.resolve_config(
            config=args.config, seed=args.seed, out=args.out, threads=args.threads
        )
        return COMMANDS[args.command](cfg)
    except (ConfigError, FileFormatError, AffinityError, GraphInvariantError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
