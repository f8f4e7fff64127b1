import type {
  CandidatePolylineDto,
  MapDto,
  Point,
  PredictResponse,
  ScenarioDto,
} from "./types.js";
import type { Viewport } from "./view.js";
import { worldToScreen } from "./view.js";

export interface PolylineCmd {
  kind: "polyline";
  points: Point[]; // screen space
  stroke: string;
  width: number;
  dash: number[];
  opacity: number;
  tag: string;
}

export interface PolygonCmd {
  kind: "polygon";
  points: Point[];
  fill: string;
  opacity: number;
  tag: string;
}

export interface DotCmd {
  kind: "dot";
  at: Point;
  radius: number;
  fill: string;
  opacity: number;
  tag: string;
}

export type DrawCommand = PolylineCmd | PolygonCmd | DotCmd;

export const PALETTE = {
  lane: "#2a2f38",
  centerline: "#4a5260",
  history: "#e8c531", // yellow
  groundTruth: "#d94f4f", // red
  baseline: "#3f8efc",
  counterfactual: "#26c4a8",
  otherActor: "#9aa4b2",
  injected: "#c678dd",
  polyline: "#f0f4f8",
} as const;

export interface SceneForDrawing {
  scenario: ScenarioDto;
  map: MapDto;
  prediction?: PredictResponse | null;
  candidates?: CandidatePolylineDto[];
  /** lane ids of the currently chosen conditioning polyline, if any */
  highlightedLanes?: Set<string>;
}

function toScreen(vp: Viewport, pts: Point[]): Point[] {
  return pts.map((p) => worldToScreen(vp, p));
}

function trajectoryCmds(
  vp: Viewport,
  trajectories: Point[][],
  stroke: string,
  dash: number[],
  tag: string,
): DrawCommand[] {
  const cmds: DrawCommand[] = [];
  trajectories.forEach((traj, i) => {
    const pts = toScreen(vp, traj);
    cmds.push({
      kind: "polyline",
      points: pts,
      stroke,
      width: i === 0 ? 2.5 : 1.5,
      dash,
      opacity: i === 0 ? 1.0 : 0.6,
      tag: `${tag}.${i}`,
    });
    if (pts.length > 0) {
      cmds.push({
        kind: "dot",
        at: pts[pts.length - 1],
        radius: 3,
        fill: stroke,
        opacity: i === 0 ? 1.0 : 0.6,
        tag: `${tag}.${i}.end`,
      });
    }
  });
  return cmds;
}

/** Mean social attention paid to each non-focal actor by the focal actor,
 * averaged over heads, used to scale actor opacity. */
export function socialOpacity(
  attention: Record<string, Record<string, number>> | undefined,
  actorId: string,
): number {
  if (!attention) return 0.8;
  let total = 0;
  let heads = 0;
  for (const weights of Object.values(attention)) {
    if (actorId in weights) {
      total += weights[actorId];
      heads += 1;
    }
  }
  if (heads === 0) return 0.8;
  return 0.35 + 0.65 * Math.min(1, total / heads);
}

/** Pure scene-to-draw-commands compiler: identical inputs always yield an
 * identical command list, which a canvas (or test) executor replays. */
export function buildDrawList(scene: SceneForDrawing, vp: Viewport): DrawCommand[] {
  const cmds: DrawCommand[] = [];
  const { scenario, map } = scene;

  for (const seg of map.segments) {
    cmds.push({
      kind: "polygon",
      points: toScreen(vp, seg.polygon),
      fill: PALETTE.lane,
      opacity: 1.0,
      tag: `lane.${seg.id}`,
    });
  }
  for (const seg of map.segments) {
    const highlighted = scene.highlightedLanes?.has(seg.id) ?? false;
    cmds.push({
      kind: "polyline",
      points: toScreen(vp, seg.centerline),
      stroke: highlighted ? PALETTE.polyline : PALETTE.centerline,
      width: highlighted ? 2 : 1,
      dash: highlighted ? [] : [4, 4],
      opacity: 1.0,
      tag: `center.${seg.id}`,
    });
  }

  if (scene.candidates) {
    scene.candidates.forEach((cand, i) => {
      cmds.push({
        kind: "polyline",
        points: toScreen(vp, cand.points),
        stroke: PALETTE.polyline,
        width: 1,
        dash: [2, 6],
        opacity: 0.5,
        tag: `candidate.${i}`,
      });
    });
  }

  const social = scene.prediction?.traces.graph_attention;
  for (const [id, actor] of Object.entries(scenario.actors)) {
    const focal = id === scenario.focal_id;
    const opacity = focal ? 1.0 : socialOpacity(social, id);
    cmds.push({
      kind: "polyline",
      points: toScreen(vp, actor.observed),
      stroke: focal ? PALETTE.history : PALETTE.otherActor,
      width: focal ? 2.5 : 1.5,
      dash: [],
      opacity,
      tag: `history.${id}`,
    });
    const last = actor.observed[actor.observed.length - 1];
    cmds.push({
      kind: "dot",
      at: worldToScreen(vp, last),
      radius: focal ? 5 : 4,
      fill: focal ? PALETTE.history : PALETTE.otherActor,
      opacity,
      tag: `pos.${id}`,
    });
    if (focal && actor.future && actor.future.length > 0) {
      cmds.push({
        kind: "polyline",
        points: toScreen(vp, [last, ...actor.future]),
        stroke: PALETTE.groundTruth,
        width: 2,
        dash: [],
        opacity: 1.0,
        tag: `truth.${id}`,
      });
    }
  }

  const pred = scene.prediction;
  if (pred) {
    cmds.push(
      ...trajectoryCmds(vp, pred.baseline.trajectories, PALETTE.baseline, [], "baseline"),
    );
    cmds.push(
      ...trajectoryCmds(
        vp,
        pred.edited.trajectories,
        PALETTE.counterfactual,
        [6, 4],
        "edited",
      ),
    );
  }
  return cmds;
}

/** Replays a draw-command list onto a 2D canvas context. */
export function renderDrawList(ctx: CanvasRenderingContext2D, cmds: DrawCommand[]): void {
  for (const cmd of cmds) {
    ctx.globalAlpha = cmd.opacity;
    if (cmd.kind === "polygon") {
      ctx.fillStyle = cmd.fill;
      ctx.beginPath();
      cmd.points.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
      ctx.closePath();
      ctx.fill();
    } else if (cmd.kind === "polyline") {
      ctx.strokeStyle = cmd.stroke;
      ctx.lineWidth = cmd.width;
      ctx.setLineDash(cmd.dash);
      ctx.beginPath();
      cmd.points.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
      ctx.stroke();
      ctx.setLineDash([]);
    } else {
      ctx.fillStyle = cmd.fill;
      ctx.beginPath();
      ctx.arc(cmd.at[0], cmd.at[1], cmd.radius, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
  ctx.globalAlpha = 1.0;
}
