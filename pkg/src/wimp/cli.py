"""Command-line entry points: data generation, training, evaluation,
polyline proposal, prediction, what-if queries, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .autodiff import load_checkpoint, save_checkpoint
from .counterfactual import counterfactual_predict, edit_from_dict
from .evaluation import aggregate_metrics, bt_filter
from .geometry import Polyline
from .lane_graph import load_map, propose_polylines
from .model import ModelConfig, forward, predict_diverse, preset
from .scenario import (
    GeneratorParams,
    generate_dataset,
    load_maps,
    load_scenario,
    load_split,
)
from .service import _serialize_candidates, _serialize_prediction, create_app
from .training import DESK_TRAIN_CONFIG, PAPER_TRAIN_CONFIG, rank_mixtures, train


def _parse_mix(text: str) -> dict[str, float]:
    mix = {}
    for part in text.split(","):
        name, _, frac = part.partition("=")
        mix[name.strip()] = float(frac)
    return mix


def _load_ckpt(path):
    store, extra = load_checkpoint(path)
    cfg = ModelConfig.from_extra(extra)
    ranks = extra.get("mixture_ranks")
    ranks = [int(r) for r in ranks] if ranks is not None else list(range(cfg.mixtures))
    return store, cfg, ranks


def cmd_generate_data(args) -> int:
    params = GeneratorParams(n_scenarios=args.n, seed=args.seed, mix=_parse_mix(args.mix))
    manifest = generate_dataset(params, args.out)
    print(json.dumps({"out": args.out, "n_scenarios": len(manifest["scenarios"])}))
    return 0


def cmd_train(args) -> int:
    cfg = preset(args.preset)
    cfg = replace(cfg, use_map=not args.no_map, use_social=not args.no_social)
    tc = DESK_TRAIN_CONFIG if args.preset == "desk" else PAPER_TRAIN_CONFIG
    tc = replace(tc, seed=args.seed)
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    if args.lr is not None:
        tc = replace(tc, lr=args.lr)
    train_scns = load_split(args.data, "train")
    val_scns = load_split(args.data, "val")
    graphs = load_maps(args.data)
    def progress(rec):
        print(json.dumps(rec), file=sys.stderr)
    store, logs = train(train_scns, val_scns, graphs, cfg, tc,
                        log_path=args.log, progress=progress if args.verbose else None)
    ranks = rank_mixtures(store, cfg, val_scns, graphs)
    extra = cfg.to_extra()
    extra["mixture_ranks"] = np.array(ranks, dtype=np.float64)
    save_checkpoint(store, args.out, extra)
    best = min((r["val_minFDE"] for r in logs if r["val_minFDE"] is not None), default=None)
    print(json.dumps({"checkpoint": args.out, "epochs_run": len(logs), "best_val_minFDE": best}))
    return 0


def cmd_eval(args) -> int:
    store, cfg, ranks = _load_ckpt(args.ckpt)
    scenarios = load_split(args.data, args.split)
    graphs = load_maps(args.data)
    subset = "all"
    if args.subset == "bt":
        scenarios = bt_filter(scenarios)
        subset = "bt"
    pairs = []
    for scn in scenarios:
        preds = predict_diverse(scn, graphs[scn.map_id], store, cfg, args.k, mixture_ranks=ranks)
        pairs.append((preds, scn.focal.future))
    report = aggregate_metrics(pairs, args.k, subset)
    print(report.to_json())
    return 0


def cmd_propose(args) -> int:
    graph = load_map(args.map)
    scn = load_scenario(args.scenario)
    candidates = propose_polylines(graph, Polyline(scn.focal.observed), args.k)
    print(json.dumps(_serialize_candidates(candidates), indent=2))
    return 0


def cmd_predict(args) -> int:
    store, cfg, ranks = _load_ckpt(args.ckpt)
    graph = load_map(args.map)
    scn = load_scenario(args.scenario)
    pred = forward(scn, graph, store, cfg, mixture_ranks=ranks)
    print(json.dumps(_serialize_prediction(pred, args.k), indent=2))
    return 0


def cmd_whatif(args) -> int:
    store, cfg, ranks = _load_ckpt(args.ckpt)
    graph = load_map(args.map)
    scn = load_scenario(args.scenario)
    with open(args.edits) as f:
        edits = [edit_from_dict(e) for e in json.load(f)]
    result = counterfactual_predict(scn, edits, graph, store, cfg, mixture_ranks=ranks)
    print(json.dumps({
        "baseline": _serialize_prediction(result["baseline"]),
        "edited": _serialize_prediction(result["edited"]),
        "deltas": result["deltas"],
    }, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    app = create_app(args.ckpt, args.data, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wimp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mix", default="straight=0.3,left=0.2,right=0.2,lane=0.1,follow=0.2")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--out", required=True)
    p.add_argument("--no-map", action="store_true")
    p.add_argument("--no-social", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--log", default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--subset", choices=("all", "bt"), default="all")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("propose", help="rank conditioning polylines for a scenario")
    p.add_argument("--map", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--k", type=int, default=6)
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("predict", help="forecast a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--k", type=int, default=6)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("whatif", help="paired baseline/edited forecast")
    p.add_argument("--scenario", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--edits", required=True)
    p.set_defaults(func=cmd_whatif)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - machine-readable error contract
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
