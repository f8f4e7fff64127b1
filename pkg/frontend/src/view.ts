import type { MapDto, Point, ScenarioDto } from "./types.js";

export interface Viewport {
  /** pixels per world metre (isotropic) */
  scale: number;
  /** world coordinate mapped to the canvas centre */
  centerX: number;
  centerY: number;
  widthPx: number;
  heightPx: number;
}

export interface Bounds {
  minX: number;
  minY: number;
  maxX: number;
  maxY: number;
}

export function boundsOf(points: Iterable<Point>): Bounds | null {
  let b: Bounds | null = null;
  for (const [x, y] of points) {
    if (b === null) {
      b = { minX: x, minY: y, maxX: x, maxY: y };
    } else {
      b.minX = Math.min(b.minX, x);
      b.minY = Math.min(b.minY, y);
      b.maxX = Math.max(b.maxX, x);
      b.maxY = Math.max(b.maxY, y);
    }
  }
  return b;
}

export function sceneBounds(scenario: ScenarioDto, map: MapDto): Bounds | null {
  const pts: Point[] = [];
  for (const seg of map.segments) pts.push(...seg.polygon, ...seg.centerline);
  for (const actor of Object.values(scenario.actors)) {
    pts.push(...actor.observed, ...(actor.future ?? []));
  }
  return boundsOf(pts);
}

/** Isotropic world-to-screen fit: the bounds plus a margin (metres) fill the
 * canvas without distortion; y is flipped so world +y points up. */
export function fitViewport(
  bounds: Bounds,
  widthPx: number,
  heightPx: number,
  marginM = 10,
): Viewport {
  const spanX = bounds.maxX - bounds.minX + 2 * marginM;
  const spanY = bounds.maxY - bounds.minY + 2 * marginM;
  const scale = Math.min(widthPx / spanX, heightPx / spanY);
  return {
    scale,
    centerX: (bounds.minX + bounds.maxX) / 2,
    centerY: (bounds.minY + bounds.maxY) / 2,
    widthPx,
    heightPx,
  };
}

export function worldToScreen(vp: Viewport, p: Point): Point {
  return [
    vp.widthPx / 2 + (p[0] - vp.centerX) * vp.scale,
    vp.heightPx / 2 - (p[1] - vp.centerY) * vp.scale,
  ];
}

export function screenToWorld(vp: Viewport, p: Point): Point {
  return [
    vp.centerX + (p[0] - vp.widthPx / 2) / vp.scale,
    vp.centerY - (p[1] - vp.heightPx / 2) / vp.scale,
  ];
}
