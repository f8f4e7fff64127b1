import type { Point, PredictRequest, SceneEdit, ScenarioDto } from "./types.js";

function heading(tail: Point, tip: Point): [number, number] {
  const dx = tip[0] - tail[0];
  const dy = tip[1] - tail[1];
  const n = Math.hypot(dx, dy);
  return n > 1e-9 ? [dx / n, dy / n] : [1, 0];
}

/** Client-side what-if state for one scenario: an ordered edit list built
 * from UI gestures, an optional conditioning-polyline override, and the
 * prediction count k. Undo pops the newest edit. */
export class UiSession {
  private edits: SceneEdit[] = [];
  private polylineOverride: Point[] | null = null;
  k = 6;

  constructor(readonly scenario: ScenarioDto) {}

  get editList(): readonly SceneEdit[] {
    return this.edits;
  }

  get override(): Point[] | null {
    return this.polylineOverride;
  }

  /** Inject a stationary vehicle: a full observation window of one repeated
   * point, so the model sees an actor that has never moved. */
  placeStoppedVehicle(id: string, at: Point): void {
    if (id === this.scenario.focal_id || id in this.scenario.actors) {
      throw new Error(`actor id already in use: ${id}`);
    }
    const tObs = this.scenario.actors[this.scenario.focal_id].observed.length;
    const trajectory: Point[] = Array.from({ length: tObs }, () => [at[0], at[1]]);
    this.edits.push({ op: "inject_actor", id, trajectory });
  }

  /** Place a stopped vehicle a given distance ahead of the focal actor,
   * along its current heading. */
  placeStoppedVehicleAhead(id: string, aheadM: number): void {
    const obs = this.scenario.actors[this.scenario.focal_id].observed;
    const last = obs[obs.length - 1];
    const prev = obs[Math.max(0, obs.length - 2)];
    const [hx, hy] = heading(prev, last);
    this.placeStoppedVehicle(id, [last[0] + hx * aheadM, last[1] + hy * aheadM]);
  }

  removeActor(id: string): void {
    if (id === this.scenario.focal_id) {
      throw new Error("cannot remove the focal actor");
    }
    this.edits.push({ op: "remove_actor", id });
  }

  /** Freeze an actor in place from the given observation index onward. */
  haltActor(id: string, atIndex: number): void {
    const tObs = this.scenario.actors[this.scenario.focal_id].observed.length;
    if (atIndex < 0 || atIndex >= tObs) {
      throw new Error(`halt index out of range: ${atIndex}`);
    }
    this.edits.push({ op: "halt_actor", id, at_index: atIndex });
  }

  /** Condition the edited forecast on a chosen candidate polyline. */
  pickPolyline(points: Point[]): void {
    this.polylineOverride = points.map((p) => [p[0], p[1]]);
  }

  clearPolyline(): void {
    this.polylineOverride = null;
  }

  undo(): SceneEdit | undefined {
    return this.edits.pop();
  }

  reset(): void {
    this.edits = [];
    this.polylineOverride = null;
  }

  toPredictRequest(): PredictRequest {
    const req: PredictRequest = {
      scenario_id: this.scenario.id,
      k: this.k,
      edits: this.edits.map((e) => ({ ...e })),
    };
    if (this.polylineOverride !== null) {
      req.polyline_override = this.polylineOverride.map((p) => [p[0], p[1]]);
    }
    return req;
  }
}
