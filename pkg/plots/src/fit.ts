/** Ordinary least squares on log2/log2 data, mirroring the producer's fit
 * so the annotated slope agrees with slopes.json digit for digit. */

export interface LoglogFit {
  slope: number;
  slopeSe: number;
  r2: number;
  intercept: number;
}

export function fitLoglog(x: number[], y: number[]): LoglogFit {
  if (x.length < 2) {
    throw new Error("need at least two points to fit a slope");
  }
  const lx = x.map((v) => Math.log2(v));
  const ly = y.map((v) => Math.log2(v));
  const n = lx.length;
  const mx = lx.reduce((a, b) => a + b, 0) / n;
  const my = ly.reduce((a, b) => a + b, 0) / n;
  let sxx = 0;
  let sxy = 0;
  for (let i = 0; i < n; i++) {
    sxx += (lx[i] - mx) ** 2;
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  const slope = sxy / sxx;
  const intercept = my - slope * mx;
  let ssRes = 0;
  let ssTot = 0;
  for (let i = 0; i < n; i++) {
    ssRes += (ly[i] - (slope * lx[i] + intercept)) ** 2;
    ssTot += (ly[i] - my) ** 2;
  }
  const dof = Math.max(n - 2, 1);
  return {
    slope,
    slopeSe: sxx > 0 ? Math.sqrt(ssRes / dof / sxx) : NaN,
    r2: ssTot > 0 ? 1 - ssRes / ssTot : 1,
    intercept,
  };
}
