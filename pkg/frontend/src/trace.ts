/**
 * Pose-trace rendering: a bounded ring of received positions, viewport
 * fitting, and the canvas drawing for the reference / live-estimate
 * overlay. Rendering only consumes positions that arrived in StateUpdates;
 * the client never dead-reckons its own poses.
 *
 * Drawing targets a minimal structural slice of CanvasRenderingContext2D
 * so component tests can run against a recording stub.
 */

export interface TracePoint {
  x: number;
  y: number;
}

export const TRACE_CAPACITY = 10_000;

/** Fixed-capacity ring; push drops the oldest point once full. */
export class TraceBuffer {
  private readonly xy: Float64Array;
  private head = 0; // next write slot
  private count = 0;

  constructor(readonly capacity: number = TRACE_CAPACITY) {
    if (!Number.isInteger(capacity) || capacity < 2) {
      throw new RangeError(`trace capacity must be an integer >= 2, got ${capacity}`);
    }
    this.xy = new Float64Array(2 * capacity);
  }

  get length(): number {
    return this.count;
  }

  push(x: number, y: number): void {
    this.xy[2 * this.head] = x;
    this.xy[2 * this.head + 1] = y;
    this.head = (this.head + 1) % this.capacity;
    if (this.count < this.capacity) this.count += 1;
  }

  /** i = 0 is the oldest retained point. */
  at(i: number): TracePoint {
    if (i < 0 || i >= this.count) {
      throw new RangeError(`trace index ${i} out of range 0..${this.count - 1}`);
    }
    const start = (this.head - this.count + this.capacity) % this.capacity;
    const k = (start + i) % this.capacity;
    return { x: this.xy[2 * k], y: this.xy[2 * k + 1] };
  }

  points(): TracePoint[] {
    const out: TracePoint[] = new Array(this.count);
    for (let i = 0; i < this.count; i += 1) out[i] = this.at(i);
    return out;
  }

  clear(): void {
    this.head = 0;
    this.count = 0;
  }
}

// -- viewport ----------------------------------------------------------------

export interface Viewport {
  scale: number; // px per metre
  cx: number;    // world centre
  cy: number;
  width: number;
  height: number;
}

/** Fit all points with a margin, preserving aspect ratio (y up on screen). */
export function fitViewport(
  layers: Iterable<TracePoint>[],
  width: number,
  height: number,
  marginPx = 24,
): Viewport {
  let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
  for (const layer of layers) {
    for (const p of layer) {
      if (p.x < minX) minX = p.x;
      if (p.x > maxX) maxX = p.x;
      if (p.y < minY) minY = p.y;
      if (p.y > maxY) maxY = p.y;
    }
  }
  if (minX > maxX) {
    // nothing to show yet: a 1 m box about the origin
    minX = -0.5; maxX = 0.5; minY = -0.5; maxY = 0.5;
  }
  const spanX = Math.max(maxX - minX, 0.05);
  const spanY = Math.max(maxY - minY, 0.05);
  const scale = Math.min(
    (width - 2 * marginPx) / spanX,
    (height - 2 * marginPx) / spanY,
  );
  return {
    scale,
    cx: (minX + maxX) / 2,
    cy: (minY + maxY) / 2,
    width,
    height,
  };
}

export function project(vp: Viewport, p: TracePoint): [number, number] {
  return [
    vp.width / 2 + (p.x - vp.cx) * vp.scale,
    vp.height / 2 - (p.y - vp.cy) * vp.scale,
  ];
}

// -- drawing -----------------------------------------------------------------

export interface LayerStyle {
  stroke: string;
  lineWidth: number;
  dash: number[];
}

// the two trace layers must stay visually distinct; axes use neither style
export const REFERENCE_STYLE: LayerStyle = {
  stroke: "#3b6fd4",
  lineWidth: 2.5,
  dash: [],
};
export const ESTIMATE_STYLE: LayerStyle = {
  stroke: "#e0633c",
  lineWidth: 1.5,
  dash: [6, 4],
};
export const AXES_STYLE: LayerStyle = {
  stroke: "#d0d0d0",
  lineWidth: 1,
  dash: [2, 4],
};

/** The context slice the renderer needs; CanvasRenderingContext2D satisfies it. */
export interface Canvas2DLike {
  strokeStyle: string | unknown;
  lineWidth: number;
  font: string;
  fillStyle: string | unknown;
  clearRect(x: number, y: number, w: number, h: number): void;
  setLineDash(segments: number[]): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
}

function strokePolyline(
  ctx: Canvas2DLike,
  vp: Viewport,
  points: TracePoint[],
  style: LayerStyle,
): void {
  if (points.length < 2) return;
  ctx.strokeStyle = style.stroke;
  ctx.lineWidth = style.lineWidth;
  ctx.setLineDash(style.dash);
  ctx.beginPath();
  const [x0, y0] = project(vp, points[0]);
  ctx.moveTo(x0, y0);
  for (let i = 1; i < points.length; i += 1) {
    const [x, y] = project(vp, points[i]);
    ctx.lineTo(x, y);
  }
  ctx.stroke();
}

function strokeAxes(ctx: Canvas2DLike, vp: Viewport): void {
  ctx.strokeStyle = AXES_STYLE.stroke;
  ctx.lineWidth = AXES_STYLE.lineWidth;
  ctx.setLineDash(AXES_STYLE.dash);
  const [ox, oy] = project(vp, { x: 0, y: 0 });
  ctx.beginPath();
  ctx.moveTo(0, oy);
  ctx.lineTo(vp.width, oy);
  ctx.stroke();
  ctx.beginPath();
  ctx.moveTo(ox, 0);
  ctx.lineTo(ox, vp.height);
  ctx.stroke();
}

export interface Scene {
  reference: TracePoint[] | null;
  trace: TraceBuffer;
  banner: string | null;       // connection loss and similar alerts
  readout: string | null;      // mode / velocity-uncertainty line
}

/**
 * Draw the full overlay: axes, then the reference layer, then the live
 * estimate layer on top, plus the text readouts.
 */
export function renderScene(
  ctx: Canvas2DLike,
  scene: Scene,
  width: number,
  height: number,
): Viewport {
  ctx.clearRect(0, 0, width, height);
  const layers: Iterable<TracePoint>[] = [scene.trace.points()];
  if (scene.reference !== null) layers.push(scene.reference);
  const vp = fitViewport(layers, width, height);

  strokeAxes(ctx, vp);
  if (scene.reference !== null) {
    strokePolyline(ctx, vp, scene.reference, REFERENCE_STYLE);
  }
  strokePolyline(ctx, vp, scene.trace.points(), ESTIMATE_STYLE);

  ctx.font = "13px sans-serif";
  if (scene.readout !== null) {
    ctx.fillStyle = "#222222";
    ctx.fillText(scene.readout, 8, height - 10);
  }
  if (scene.banner !== null) {
    ctx.fillStyle = "#b03020";
    ctx.fillText(scene.banner, 8, 18);
  }
  return vp;
}
