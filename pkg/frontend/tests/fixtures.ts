import type {
  CandidatePolylineDto,
  MapDto,
  Point,
  PredictResponse,
  PredictionSetDto,
  ScenarioDto,
} from "../src/types.js";

export function straightScenario(): ScenarioDto {
  const obs = (x0: number, y: number): Point[] =>
    Array.from({ length: 10 }, (_, i) => [x0 + i, y]);
  return {
    id: "scn_test_0",
    map_id: "corridor",
    focal_id: "focal",
    actors: {
      focal: {
        observed: obs(0, 0),
        future: Array.from({ length: 15 }, (_, i) => [10 + i, 0]),
      },
      lead: { observed: obs(8, 0) },
    },
  };
}

export function corridorMap(): MapDto {
  return {
    segments: [
      {
        id: "c1",
        centerline: [
          [-20, 0],
          [30, 0],
        ],
        polygon: [
          [-20, -2],
          [30, -2],
          [30, 2],
          [-20, 2],
        ],
        successors: ["c2"],
        predecessors: [],
      },
      {
        id: "c2",
        centerline: [
          [30, 0],
          [80, 0],
        ],
        polygon: [
          [30, -2],
          [80, -2],
          [80, 2],
          [30, 2],
        ],
        successors: [],
        predecessors: ["c1"],
      },
    ],
  };
}

export function candidates(): CandidatePolylineDto[] {
  return [
    {
      lane_ids: ["c1", "c2"],
      points: [
        [-20, 0],
        [30, 0],
        [80, 0],
      ],
      pip_score: 10,
      alignment_score: 0.99,
    },
  ];
}

function predictionSet(k: number, offset: number): PredictionSetDto {
  const trajectories: Point[][] = [];
  for (let m = 0; m < k; m++) {
    trajectories.push(
      Array.from({ length: 15 }, (_, i): Point => [10 + i, offset + 0.1 * m]),
    );
  }
  return {
    trajectories,
    mixture_ranks: Array.from({ length: k }, (_, i) => i),
    poly_traces: [],
    social_attention: { head0: { lead: 0.7 }, head1: { lead: 0.9 } },
  };
}

export function predictResponse(k: number): PredictResponse {
  const baseline = predictionSet(k, 0);
  const edited = predictionSet(k, 0.5);
  return {
    baseline,
    edited,
    deltas: {
      endpoint_displacement: Array(k).fill(0.5),
      terminal_speed_baseline: Array(k).fill(10),
      terminal_speed_edited: Array(k).fill(9.5),
      terminal_speed_delta: Array(k).fill(-0.5),
      top_ranked: {
        endpoint_displacement: 0.5,
        terminal_speed_baseline: 10,
        terminal_speed_edited: 9.5,
      },
    },
    traces: {
      polyline_attention: [],
      graph_attention: edited.social_attention,
    },
  };
}
