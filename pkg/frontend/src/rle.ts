/** Run-length mask wire format shared with the service: per row, flat
 * [start, length, start, length, ...] pairs of set pixels. */

export interface RleMask {
  height: number;
  width: number;
  rows: number[][];
}

export function encodeMaskRle(mask: Uint8Array, width: number, height: number): RleMask {
  if (mask.length !== width * height) {
    throw new Error(`mask length ${mask.length} != ${width}x${height}`);
  }
  const rows: number[][] = [];
  for (let y = 0; y < height; y++) {
    const runs: number[] = [];
    let start = -1;
    for (let x = 0; x <= width; x++) {
      const on = x < width && mask[y * width + x] !== 0;
      if (on && start < 0) start = x;
      if (!on && start >= 0) {
        runs.push(start, x - start);
        start = -1;
      }
    }
    rows.push(runs);
  }
  return { height, width, rows };
}

export function decodeMaskRle(rle: RleMask): Uint8Array {
  const { height, width, rows } = rle;
  if (rows.length !== height) throw new Error(`RLE has ${rows.length} rows, header says ${height}`);
  const mask = new Uint8Array(width * height);
  rows.forEach((runs, y) => {
    if (runs.length % 2) throw new Error(`RLE row ${y} has an odd number of entries`);
    for (let i = 0; i < runs.length; i += 2) {
      const [start, len] = [runs[i], runs[i + 1]];
      if (start < 0 || len < 1 || start + len > width) {
        throw new Error(`RLE run (${start},${len}) outside row of width ${width}`);
      }
      mask.fill(1, y * width + start, y * width + start + len);
    }
  });
  return mask;
}
