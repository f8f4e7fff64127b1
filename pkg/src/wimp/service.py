"""Read-only HTTP inference service: scenario browsing, polyline proposals,
and what-if predictions with attention traces."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .autodiff import load_checkpoint
from .counterfactual import (
    DuplicateInjectedId,
    FocalRemoval,
    UnknownActor,
    UnknownEditOp,
    counterfactual_predict,
    edit_from_dict,
)
from .lane_graph import propose_polylines
from .model import MissingFocalActor, ModelConfig, PredictionSet, conditioning_polyline
from .geometry import Polyline
from .scenario import SchemaViolation, load_maps, load_split, scenario_from_dict


class ServiceState:
    """Immutable after startup: weights, config, ranks, scenarios, maps."""

    def __init__(self, ckpt_path, data_dir):
        store, extra = load_checkpoint(ckpt_path)
        self.store = store
        self.cfg = ModelConfig.from_extra(extra)
        ranks = extra.get("mixture_ranks")
        self.ranks = [int(r) for r in ranks] if ranks is not None else list(range(self.cfg.mixtures))
        self.scenarios = {s.id: s for s in load_split(data_dir)}
        self.graphs = load_maps(data_dir)


def _serialize_candidates(candidates):
    return [
        {
            "lane_ids": list(c.lane_ids),
            "points": c.points.points.tolist(),
            "pip_score": int(c.pip_score),
            "alignment_score": float(c.alignment_score),
        }
        for c in candidates
    ]


def _serialize_prediction(pred: PredictionSet, k: int | None = None) -> dict:
    ranks = pred.mixture_ranks if k is None else pred.mixture_ranks[:k]
    return {
        "trajectories": [pred.trajectories[m].tolist() for m in ranks],
        "mixture_ranks": list(ranks),
        "poly_traces": [pred.poly_traces[m] for m in ranks] if pred.poly_traces else [],
        "social_attention": pred.social_attention,
    }


def create_app(ckpt_path, data_dir, static_dir=None) -> FastAPI:
    state = ServiceState(ckpt_path, data_dir)
    app = FastAPI(title="trajectory what-if service")

    @app.exception_handler(SchemaViolation)
    async def schema_error(request: Request, exc: SchemaViolation):
        return JSONResponse(status_code=400, content={"error": "SchemaViolation", "detail": str(exc)})

    for err in (UnknownActor, DuplicateInjectedId, FocalRemoval, UnknownEditOp, MissingFocalActor):
        @app.exception_handler(err)
        async def edit_error(request: Request, exc: Exception):
            return JSONResponse(status_code=422, content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/api/health")
    def health():
        return {"status": "ok", "model_config": {k: v for k, v in state.cfg.__dict__.items()}}

    @app.get("/api/scenarios")
    def list_scenarios():
        return [
            {"id": s.id, "map_id": s.map_id, "n_actors": len(s.actors)}
            for s in state.scenarios.values()
        ]

    def _get_scenario(scenario_id: str):
        if scenario_id not in state.scenarios:
            raise HTTPException(status_code=404, detail=f"unknown scenario {scenario_id!r}")
        return state.scenarios[scenario_id]

    def _get_graph(map_id: str):
        if map_id not in state.graphs:
            raise HTTPException(status_code=404, detail=f"unknown map {map_id!r}")
        return state.graphs[map_id]

    @app.get("/api/scenarios/{scenario_id}")
    def scenario_detail(scenario_id: str):
        scn = _get_scenario(scenario_id)
        return {"scenario": scn.to_dict(), "map": _get_graph(scn.map_id).to_dict()}

    @app.get("/api/scenarios/{scenario_id}/polylines")
    def scenario_polylines(scenario_id: str, k: int = 6):
        scn = _get_scenario(scenario_id)
        graph = _get_graph(scn.map_id)
        obs = scn.focal.observed
        keep = [obs[0]]
        for p in obs[1:]:
            if np.linalg.norm(p - keep[-1]) > 1e-9:
                keep.append(p)
        if len(keep) < 2:
            keep = [obs[-1] - [0.05, 0], obs[-1] + [0.05, 0]]
        candidates = propose_polylines(graph, Polyline(np.array(keep)), k)
        return _serialize_candidates(candidates)

    @app.post("/api/predict")
    def predict(body: dict):
        if "scenario" in body:
            scn = scenario_from_dict(body["scenario"])
        elif "scenario_id" in body:
            scn = _get_scenario(str(body["scenario_id"]))
        else:
            raise HTTPException(status_code=400, detail="body needs scenario or scenario_id")
        graph = _get_graph(scn.map_id)
        k = int(body.get("k", state.cfg.mixtures))
        if not 1 <= k <= state.cfg.mixtures:
            raise HTTPException(status_code=400, detail=f"k must be in [1, {state.cfg.mixtures}]")
        edits = [edit_from_dict(e) for e in body.get("edits", [])]
        override = body.get("polyline_override")
        if override is not None:
            override = np.asarray(override, dtype=np.float64)
        result = counterfactual_predict(
            scn, edits, graph, state.store, state.cfg,
            polyline_override=override, mixture_ranks=state.ranks,
        )
        edited = result["edited"]
        return {
            "baseline": _serialize_prediction(result["baseline"], k),
            "edited": _serialize_prediction(edited, k),
            "deltas": result["deltas"],
            "traces": {
                "polyline_attention": [edited.poly_traces[m] for m in edited.mixture_ranks[:k]],
                "graph_attention": edited.social_attention,
            },
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
