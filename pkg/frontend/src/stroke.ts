/** Brush stroke rasterization: the captured mask is the union of radius-r
 * disks swept along the pointer path (i.e. capsules between consecutive
 * points), on the image's pixel grid. */

export interface Point {
  x: number;
  y: number;
}

function segmentDistSq(px: number, py: number, a: Point, b: Point): number {
  const vx = b.x - a.x;
  const vy = b.y - a.y;
  const wx = px - a.x;
  const wy = py - a.y;
  const vv = vx * vx + vy * vy;
  const t = vv === 0 ? 0 : Math.max(0, Math.min(1, (wx * vx + wy * vy) / vv));
  const dx = px - (a.x + t * vx);
  const dy = py - (a.y + t * vy);
  return dx * dx + dy * dy;
}

export function rasterizeStroke(path: Point[], radius: number, width: number, height: number): Uint8Array {
  const mask = new Uint8Array(width * height);
  if (path.length === 0) return mask;
  const segments: Array<[Point, Point]> = [];
  if (path.length === 1) {
    segments.push([path[0], path[0]]);
  } else {
    for (let i = 1; i < path.length; i++) segments.push([path[i - 1], path[i]]);
  }
  const r2 = radius * radius;
  for (const [a, b] of segments) {
    const x0 = Math.max(0, Math.floor(Math.min(a.x, b.x) - radius));
    const x1 = Math.min(width - 1, Math.ceil(Math.max(a.x, b.x) + radius));
    const y0 = Math.max(0, Math.floor(Math.min(a.y, b.y) - radius));
    const y1 = Math.min(height - 1, Math.ceil(Math.max(a.y, b.y) + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        if (segmentDistSq(x, y, a, b) <= r2) mask[y * width + x] = 1;
      }
    }
  }
  return mask;
}

/** Latent-grid cells the stroke will select (any-overlap rule), used for the
 * grid-snap preview while painting. */
export function regionFromStroke(mask: Uint8Array, width: number, height: number,
                                 gridW: number, gridH: number): Uint8Array {
  const region = new Uint8Array(gridW * gridH);
  const bw = width / gridW;
  const bh = height / gridH;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (mask[y * width + x]) {
        region[Math.floor(y / bh) * gridW + Math.floor(x / bw)] = 1;
      }
    }
  }
  return region;
}
