"""The forecasting network: shared recurrent encoder with polyline
attention, a polyline-blind kinematic stream feeding the waypoint
predictor, residual multi-head graph attention over actors, and an
M-mixture autoregressive decoder with per-mixture linear heads."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape, Var
from .geometry import Polyline, normalization_frame_or_identity
from .lane_graph import LaneGraph, propose_polylines
from .scenario import Scenario


# coordinates are meters in the focal frame; scaled to ~unit range before
# entering any learned layer
INPUT_SCALE = 0.1


class MissingFocalActor(ValueError):
    pass


class MissingPolyline(ValueError):
    pass


class EmptyPolyline(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 32
    encoder_layers: int = 2
    decoder_layers: int = 2
    attention_heads: int = 2
    mixtures: int = 6
    waypoint_horizon: int = 15
    obs_len: int = 10
    pred_len: int = 15
    dropout_rate: float = 0.1
    dropout_layers: int = 1
    use_map: bool = True
    use_social: bool = True

    def __post_init__(self):
        for name in ("hidden_size", "encoder_layers", "decoder_layers",
                     "attention_heads", "mixtures", "waypoint_horizon",
                     "obs_len", "pred_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.dropout_layers >= self.encoder_layers:
            raise ValueError("dropout_layers must be < encoder_layers")
        if self.waypoint_horizon > self.pred_len:
            raise ValueError("waypoint_horizon must be <= pred_len")

    def to_extra(self) -> dict:
        out = {}
        for name, val in self.__dict__.items():
            out[f"config/{name}"] = np.array(float(val))
        return out

    @staticmethod
    def from_extra(extra: dict) -> "ModelConfig":
        kwargs = {}
        for key, arr in extra.items():
            if not key.startswith("config/"):
                continue
            name = key[len("config/"):]
            if name in ("dropout_rate",):
                kwargs[name] = float(arr)
            elif name in ("use_map", "use_social"):
                kwargs[name] = bool(float(arr))
            else:
                kwargs[name] = int(float(arr))
        return ModelConfig(**kwargs)


DESK_CONFIG = ModelConfig()
PAPER_CONFIG = ModelConfig(
    hidden_size=512,
    encoder_layers=4,
    decoder_layers=4,
    attention_heads=4,
    mixtures=6,
    waypoint_horizon=30,
    obs_len=20,
    pred_len=30,
    dropout_rate=0.5,
    dropout_layers=3,
)


def preset(name: str) -> ModelConfig:
    if name == "desk":
        return DESK_CONFIG
    if name == "paper":
        return PAPER_CONFIG
    raise ValueError(f"unknown preset {name!r}")


def init_weights(cfg: ModelConfig, seed: int = 0) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    h = cfg.hidden_size

    def mat(name, rows, cols):
        store.add(name, rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols)))

    def vec(name, n):
        store.add(name, np.zeros(n))

    def lstm_stack(prefix, layers, input_size):
        for layer in range(layers):
            inp = input_size if layer == 0 else h
            mat(f"{prefix}.l{layer}.W_ih", 4 * h, inp)
            mat(f"{prefix}.l{layer}.W_hh", 4 * h, h)
            vec(f"{prefix}.l{layer}.b", 4 * h)

    enc_in = 2 + (h if cfg.use_map else 0)
    lstm_stack("enc", cfg.encoder_layers, enc_in)
    lstm_stack("kin", 1, 2)
    mat("wp.W", 2, 2 + h)
    vec("wp.b", 2)
    if cfg.use_map:
        for side in ("encpoly", "decpoly"):
            mat(f"{side}.embed", h, 2)
            for m in ("Q", "K", "V"):
                mat(f"{side}.{m}", h, h)
    if cfg.use_social:
        for d in range(cfg.attention_heads):
            mat(f"gat.h{d}.W", h, h)
            store.add(f"gat.h{d}.a", rng.normal(0.0, 1.0 / np.sqrt(2 * h), size=(2 * h,)))
    dec_in = 2 + (h if cfg.use_map else 0) + (h if cfg.use_social else 0)
    lstm_stack("dec", cfg.decoder_layers, dec_in)
    for m in range(cfg.mixtures):
        mat(f"pred.m{m}.W", 2, h)
        vec(f"pred.m{m}.b", 2)
    return store


@dataclass
class PolylineAttentionTrace:
    current_index: int
    goal_index: int
    weights: np.ndarray
    context: np.ndarray

    def to_dict(self) -> dict:
        return {
            "current_index": self.current_index,
            "goal_index": self.goal_index,
            "weights": self.weights.tolist(),
        }


@dataclass
class PredictionSet:
    trajectories: np.ndarray  # (M, pred_len, 2) world frame
    mixture_ranks: list[int]
    poly_traces: list = field(default_factory=list)  # per mixture: list of traces per step
    social_attention: dict = field(default_factory=dict)  # actor_id -> per-head weight

    def top_ranked(self) -> np.ndarray:
        return self.trajectories[self.mixture_ranks[0]]


@dataclass
class PreparedScene:
    frame: object
    actor_ids: list[str]  # focal first
    observed: list[np.ndarray]  # normalized (T_obs, 2) per actor
    polylines: list[np.ndarray | None]  # normalized polyline points per actor
    future: np.ndarray | None  # normalized focal future


def conditioning_polyline(graph: LaneGraph, observed: np.ndarray) -> np.ndarray:
    """Top-1 proposed polyline for an observed history (world frame).
    Degenerate (stationary) histories fall back to a two-point query at the
    actor's position so candidate search still applies."""
    pts = np.asarray(observed, dtype=np.float64)
    keep = [pts[0]]
    for p in pts[1:]:
        if np.linalg.norm(p - keep[-1]) > 1e-9:
            keep.append(p)
    if len(keep) < 2:
        keep = [pts[-1] - np.array([0.05, 0.0]), pts[-1] + np.array([0.05, 0.0])]
    query = Polyline(np.array(keep))
    return propose_polylines(graph, query, k=1)[0].points.points


def prepare_scene(
    scenario: Scenario,
    graph: LaneGraph,
    cfg: ModelConfig,
    polyline_override: np.ndarray | None = None,
    use_oracle_polyline: bool = False,
) -> PreparedScene:
    """Normalize a scenario to the focal frame and attach per-actor
    conditioning polylines (world-frame inputs, normalized outputs)."""
    if scenario.focal_id not in scenario.actors:
        raise MissingFocalActor(scenario.focal_id)
    focal_obs = scenario.focal.observed
    frame = normalization_frame_or_identity(focal_obs, len(focal_obs) - 1)
    actor_ids = [scenario.focal_id] + sorted(a for a in scenario.actors if a != scenario.focal_id)
    observed, polylines = [], []
    for aid in actor_ids:
        actor = scenario.actors[aid]
        observed.append(frame.apply(actor.observed))
        if not cfg.use_map:
            polylines.append(None)
            continue
        if aid == scenario.focal_id and polyline_override is not None:
            poly = np.asarray(polyline_override, dtype=np.float64)
        elif aid == scenario.focal_id and use_oracle_polyline and actor.future is not None:
            full = np.vstack([actor.observed, actor.future])
            poly = conditioning_polyline(graph, full)
        else:
            poly = conditioning_polyline(graph, actor.observed)
        if poly is None or len(poly) == 0:
            raise MissingPolyline(aid)
        polylines.append(frame.apply(poly))
    future = None
    if scenario.focal.future is not None:
        future = frame.apply(scenario.focal.future)
    return PreparedScene(frame, actor_ids, observed, polylines, future)


def _lstm_stack_step(tape, watched, prefix, layers, x, hs, cs, cfg, rng):
    """One step through a stacked LSTM; returns (top output, new hs, new cs).
    Dropout applies to the outputs of the first dropout_layers layers."""
    new_hs, new_cs = [], []
    inp = x
    for layer in range(layers):
        h, c = ad.lstm_cell(
            tape,
            inp,
            hs[layer],
            cs[layer],
            watched[f"{prefix}.l{layer}.W_ih"],
            watched[f"{prefix}.l{layer}.W_hh"],
            watched[f"{prefix}.l{layer}.b"],
        )
        new_hs.append(h)
        new_cs.append(c)
        inp = h
        if rng is not None and layer < cfg.dropout_layers:
            inp = ad.dropout(tape, inp, cfg.dropout_rate, rng)
    return inp, new_hs, new_cs


def _waypoint(tape, watched, x_var, x_scaled, kin_h):
    """Waypoint head: displacement from the current position, linear over
    [scaled x, kinematic hidden]."""
    inp = ad.concat(tape, [x_scaled, kin_h])
    delta = ad.add(tape, ad.matmul(tape, watched["wp.W"], inp), watched["wp.b"])
    return ad.add(tape, x_var, delta)


def _polyline_attention(tape, watched, side, poly_pts, poly_embeds, x_value, h_prev, waypoint_value):
    """Soft attention over the inclusive index range between the current
    index (nearest point to x) and goal index (nearest point to the
    hallucinated waypoint). Returns (context Var, trace)."""
    if len(poly_pts) == 0:
        raise EmptyPolyline("conditioning polyline has no points")
    a_idx = int(np.argmin(np.linalg.norm(poly_pts - x_value, axis=1)))
    b_idx = int(np.argmin(np.linalg.norm(poly_pts - waypoint_value, axis=1)))
    lo, hi = min(a_idx, b_idx), max(a_idx, b_idx)
    seg = ad.take(tape, poly_embeds, slice(lo, hi + 1))  # (R, H) embedded points
    q = ad.matmul(tape, watched[f"{side}.Q"], h_prev)  # (H,)
    keys = ad.matmul(tape, seg, _transpose(tape, watched[f"{side}.K"]))  # (R, H)
    logits = ad.matmul(tape, keys, q)  # logit_r = (Q h) . (K c_r)
    weights = ad.softmax(tape, logits)
    values = ad.matmul(tape, seg, _transpose(tape, watched[f"{side}.V"]))  # (R, H)
    context = ad.matmul(tape, _transpose(tape, values), weights)  # sum_r v_r (V c_r)
    trace = PolylineAttentionTrace(a_idx, b_idx, weights.value.copy(), context.value.copy())
    return context, trace


def _transpose(tape, a):
    out = Var(a.value.T)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.T)

    return tape.record(out, backward)


def _embed_polyline(tape, watched, side, poly_pts):
    """Embedded polyline points: (P, H) Var = scaled pts @ embed^T."""
    return ad.matmul(
        tape, tape.constant(poly_pts * INPUT_SCALE), _transpose(tape, watched[f"{side}.embed"])
    )


def _graph_attention(tape, watched, cfg, top_hiddens):
    """Residual multi-head graph attention over top-layer hidden states.
    Returns (fused list, alpha dict head -> (N, N-1) weights by actor)."""
    n = len(top_hiddens)
    heads = cfg.attention_heads
    alphas = {}
    if n == 1:
        fused = [ad.elu(tape, top_hiddens[0])]
        return fused, alphas
    messages = [None] * n
    for d in range(heads):
        w = watched[f"gat.h{d}.W"]
        a_vec = watched[f"gat.h{d}.a"]
        u = [ad.matmul(tape, w, h) for h in top_hiddens]
        alphas[d] = []
        for i in range(n):
            logits = []
            others = [j for j in range(n) if j != i]
            for j in others:
                pair = ad.concat(tape, [u[i], u[j]])
                logits.append(ad.dot(tape, a_vec, pair))
            logit_vec = ad.concat(tape, [_as_1d(tape, l) for l in logits])
            att = ad.softmax(tape, logit_vec)
            alphas[d].append(att.value.copy())
            stacked = _stack_rows(tape, [u[j] for j in others])  # (N-1, H)
            msg = ad.matmul(tape, _transpose(tape, stacked), att)  # (H,)
            messages[i] = msg if messages[i] is None else ad.add(tape, messages[i], msg)
    fused = []
    for i in range(n):
        mean_msg = ad.scale(tape, messages[i], 1.0 / heads)
        fused.append(ad.elu(tape, ad.add(tape, top_hiddens[i], mean_msg)))
    return fused, alphas


def _as_1d(tape, scalar_var):
    out = Var(scalar_var.value.reshape(1))

    def backward(g):
        if scalar_var.requires_grad:
            scalar_var.accumulate(g.reshape(scalar_var.value.shape))

    return tape.record(out, backward)


def _stack_rows(tape, vars_):
    out = Var(np.stack([v.value for v in vars_]))

    def backward(g):
        for i, v in enumerate(vars_):
            if v.requires_grad:
                v.accumulate(g[i])

    return tape.record(out, backward)


def _zeros_state(tape, layers, h):
    return (
        [tape.constant(np.zeros(h)) for _ in range(layers)],
        [tape.constant(np.zeros(h)) for _ in range(layers)],
    )


def encode_actors(tape, watched, cfg, prepared, rng=None, x_vars=None):
    """Run the shared encoder over all actors; returns per-actor encoder
    state, kinematic state, and waypoint predictions per step (focal only
    keeps its full waypoint list for the auxiliary loss)."""
    h = cfg.hidden_size
    states = []
    for n, obs in enumerate(prepared.observed):
        poly_embeds = None
        if cfg.use_map:
            poly_embeds = _embed_polyline(tape, watched, "encpoly", prepared.polylines[n])
        hs, cs = _zeros_state(tape, cfg.encoder_layers, h)
        khs, kcs = _zeros_state(tape, 1, h)
        top = tape.constant(np.zeros(h))
        waypoints = []
        for t in range(len(obs)):
            if x_vars is not None and n in x_vars and t in x_vars[n]:
                x = x_vars[n][t]
            else:
                x = tape.constant(obs[t])
            xs = ad.scale(tape, x, INPUT_SCALE)
            wp = _waypoint(tape, watched, x, xs, khs[0])
            waypoints.append(wp)
            if cfg.use_map:
                s_ctx, _ = _polyline_attention(
                    tape, watched, "encpoly", prepared.polylines[n], poly_embeds,
                    x.value, top, wp.value,
                )
                enc_in = ad.concat(tape, [xs, s_ctx])
            else:
                enc_in = xs
            top, hs, cs = _lstm_stack_step(tape, watched, "enc", cfg.encoder_layers, enc_in, hs, cs, cfg, rng)
            _, khs, kcs = _lstm_stack_step(tape, watched, "kin", 1, xs, khs, kcs, cfg, None)
        states.append({"hs": hs, "cs": cs, "kin": (khs, kcs), "waypoints": waypoints})
    return states


def decode_mixture(tape, watched, cfg, prepared, fused_hs, focal_cs, kin_state, mixture,
                   social_ctx=None, rng=None):
    """Autoregressive rollout for one mixture head in the normalized frame.
    The social context (the attention residual added to the focal encoder
    state) is re-fed at every step so it cannot wash out of the recurrent
    state over the horizon. Returns (list of (2,) point Vars, list of
    attention traces)."""
    h = cfg.hidden_size
    hs = list(fused_hs)
    cs = list(focal_cs)
    khs, kcs = kin_state
    poly = prepared.polylines[0]
    poly_embeds = _embed_polyline(tape, watched, "decpoly", poly) if cfg.use_map else None
    y = tape.constant(prepared.observed[0][-1])
    points, traces = [], []
    for _ in range(cfg.pred_len):
        ys = ad.scale(tape, y, INPUT_SCALE)
        parts = [ys]
        if cfg.use_map:
            wp = _waypoint(tape, watched, y, ys, khs[0])
            s_ctx, trace = _polyline_attention(
                tape, watched, "decpoly", poly, poly_embeds, y.value, hs[-1], wp.value,
            )
            traces.append(trace)
            parts.append(s_ctx)
        if social_ctx is not None:
            parts.append(social_ctx)
        dec_in = parts[0] if len(parts) == 1 else ad.concat(tape, parts)
        top, hs, cs = _lstm_stack_step(tape, watched, "dec", cfg.decoder_layers, dec_in, hs, cs, cfg, rng)
        step = ad.add(tape, ad.matmul(tape, watched[f"pred.m{mixture}.W"], top), watched[f"pred.m{mixture}.b"])
        y = ad.add(tape, y, step)
        points.append(y)
        _, khs, kcs = _lstm_stack_step(tape, watched, "kin", 1, ad.scale(tape, y, INPUT_SCALE), khs, kcs, cfg, None)
    return points, traces


def forward_on_tape(tape, watched, cfg, prepared, rng=None, x_vars=None):
    """Full forward in the normalized frame. Returns a dict with per-mixture
    point Vars, traces, social attention, and focal waypoint Vars."""
    states = encode_actors(tape, watched, cfg, prepared, rng=rng, x_vars=x_vars)
    tops = [st["hs"][-1] for st in states]
    if cfg.use_social:
        fused_tops, alphas = _graph_attention(tape, watched, cfg, tops)
        social_ctx = ad.sub(tape, fused_tops[0], tops[0])
    else:
        fused_tops, alphas = tops, {}
        social_ctx = None
    focal = states[0]
    fused_hs = list(focal["hs"][:-1]) + [fused_tops[0]]
    mixtures, traces = [], []
    for m in range(cfg.mixtures):
        pts, tr = decode_mixture(
            tape, watched, cfg, prepared, fused_hs, focal["cs"], focal["kin"], m,
            social_ctx=social_ctx, rng=rng,
        )
        mixtures.append(pts)
        traces.append(tr)
    return {
        "mixtures": mixtures,
        "poly_traces": traces,
        "alphas": alphas,
        "focal_waypoints": focal["waypoints"],
    }


def waypoint_aux_loss(tape, cfg, prepared, waypoints):
    """Self-supervised L1 loss for the waypoint head: at each observed step
    t, the target is the ground-truth position waypoint_horizon steps ahead
    (observed + future timeline), when available."""
    if prepared.future is None:
        return None
    timeline = np.vstack([prepared.observed[0], prepared.future])
    losses = []
    for t, wp in enumerate(waypoints):
        target_idx = t + cfg.waypoint_horizon
        if target_idx >= len(timeline):
            target_idx = len(timeline) - 1
        losses.append(ad.l1_distance(tape, wp, tape.constant(timeline[target_idx])))
    if not losses:
        return None
    total = losses[0]
    for l in losses[1:]:
        total = ad.add(tape, total, l)
    return ad.scale(tape, total, 1.0 / len(losses))


def forward(
    scenario: Scenario,
    graph: LaneGraph,
    store: ParameterStore,
    cfg: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    polyline_override: np.ndarray | None = None,
    use_oracle_polyline: bool = False,
    mixture_ranks: list[int] | None = None,
) -> PredictionSet:
    """Forecast the focal actor: normalize, encode, fuse, decode M mixtures,
    denormalize back to the world frame."""
    prepared = prepare_scene(
        scenario, graph, cfg,
        polyline_override=polyline_override,
        use_oracle_polyline=use_oracle_polyline,
    )
    tape = Tape()
    watched = {name: tape.constant(value) for name, value in store.params.items()}
    drop_rng = rng if mode == "train" else None
    out = forward_on_tape(tape, watched, cfg, prepared, rng=drop_rng)
    trajs = np.array([[p.value for p in pts] for pts in out["mixtures"]])
    world = np.array([prepared.frame.invert(t) for t in trajs])
    ranks = mixture_ranks if mixture_ranks is not None else list(range(cfg.mixtures))
    social = {}
    for d, per_actor in out["alphas"].items():
        for i, aid in enumerate(prepared.actor_ids):
            others = [a for j, a in enumerate(prepared.actor_ids) if j != i]
            if aid == prepared.actor_ids[0]:
                social[f"head{d}"] = dict(zip(others, per_actor[i].tolist()))
    return PredictionSet(
        trajectories=world,
        mixture_ranks=list(ranks),
        poly_traces=[[tr.to_dict() for tr in trs] for trs in out["poly_traces"]],
        social_attention=social,
    )


def predict_diverse(
    scenario: Scenario,
    graph: LaneGraph,
    store: ParameterStore,
    cfg: ModelConfig,
    k: int,
    mixture_ranks: list[int] | None = None,
) -> np.ndarray:
    """K diverse predictions: propose up to k polylines from the observed
    history and take mixture heads (in rank order) round-robin across the
    conditioning polylines. Without map input this reduces to the top-k
    ranked mixtures of a single forward."""
    ranks = mixture_ranks if mixture_ranks is not None else list(range(cfg.mixtures))
    if not cfg.use_map:
        pred = forward(scenario, graph, store, cfg, mixture_ranks=ranks)
        return pred.trajectories[ranks][:k]
    focal_obs = scenario.focal.observed
    keep = [focal_obs[0]]
    for p in focal_obs[1:]:
        if np.linalg.norm(p - keep[-1]) > 1e-9:
            keep.append(p)
    if len(keep) < 2:
        keep = [focal_obs[-1] - [0.05, 0], focal_obs[-1] + [0.05, 0]]
    proposals = propose_polylines(graph, Polyline(np.array(keep)), k)
    preds = [
        forward(scenario, graph, store, cfg, polyline_override=c.points.points, mixture_ranks=ranks)
        for c in proposals
    ]
    chosen = []
    depth = 0
    while len(chosen) < k and depth < cfg.mixtures:
        for pred in preds:
            if len(chosen) >= k:
                break
            chosen.append(pred.trajectories[ranks[depth]])
        depth += 1
    return np.array(chosen[:k])
