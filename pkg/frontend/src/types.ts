export type Point = [number, number];

export interface ActorDto {
  observed: Point[];
  future?: Point[];
}

export interface ScenarioDto {
  id: string;
  map_id: string;
  focal_id: string;
  actors: Record<string, ActorDto>;
  meta?: Record<string, unknown>;
}

export interface LaneSegmentDto {
  id: string;
  centerline: Point[];
  polygon: Point[];
  successors: string[];
  predecessors: string[];
}

export interface MapDto {
  segments: LaneSegmentDto[];
}

export interface ScenarioDetail {
  scenario: ScenarioDto;
  map: MapDto;
}

export interface ScenarioSummary {
  id: string;
  map_id: string;
  n_actors: number;
}

export interface CandidatePolylineDto {
  lane_ids: string[];
  points: Point[];
  pip_score: number;
  alignment_score: number;
}

export interface PolylineAttentionTrace {
  current_index: number;
  goal_index: number;
  weights: number[];
}

export interface PredictionSetDto {
  trajectories: Point[][];
  mixture_ranks: number[];
  poly_traces: PolylineAttentionTrace[][];
  social_attention: Record<string, Record<string, number>>;
}

export interface TopRankedDeltas {
  endpoint_displacement: number;
  terminal_speed_baseline: number;
  terminal_speed_edited: number;
}

export interface Deltas {
  endpoint_displacement: number[];
  terminal_speed_baseline: number[];
  terminal_speed_edited: number[];
  terminal_speed_delta: number[];
  top_ranked: TopRankedDeltas;
}

export interface PredictTraces {
  polyline_attention: PolylineAttentionTrace[][];
  graph_attention: Record<string, Record<string, number>>;
}

export interface PredictResponse {
  baseline: PredictionSetDto;
  edited: PredictionSetDto;
  deltas: Deltas;
  traces: PredictTraces;
}

export type SceneEdit =
  | { op: "replace_polyline"; polyline: Point[] }
  | { op: "inject_actor"; id: string; trajectory: Point[] }
  | { op: "remove_actor"; id: string }
  | { op: "halt_actor"; id: string; at_index: number };

export interface PredictRequest {
  scenario_id?: string;
  scenario?: ScenarioDto;
  k: number;
  edits: SceneEdit[];
  polyline_override?: Point[];
}
