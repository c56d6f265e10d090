/**
 * Slice preparation in front of the frozen 2D backbone.
 *
 * Pipeline per axial slice:
 *   1. min-max scale to [0, 1] over nonzero voxels (background stays 0);
 *   2. replicate the grayscale plane to 3 channels;
 *   3. bicubic resize to targetSide x targetSide (Catmull-Rom, a = -0.5);
 *   4. standardize each channel with the backbone's pretraining
 *      statistics (ImageNet means and standard deviations).
 *
 * Output is CHW float32, the layout the backbone interface consumes.
 */

export const CHANNEL_MEAN = [0.485, 0.456, 0.406];
export const CHANNEL_STD = [0.229, 0.224, 0.225];

/** Fraction of voxels in the slice that are nonzero. */
export function nonzeroFraction(slice: Float64Array): number {
  let count = 0;
  for (let i = 0; i < slice.length; i++) {
    if (slice[i] !== 0) count += 1;
  }
  return slice.length ? count / slice.length : 0;
}

/** Min-max scale over nonzero voxels; zeros (background) stay zero. */
export function minMaxNonzero(slice: Float64Array): Float64Array {
  let lo = Infinity;
  let hi = -Infinity;
  for (let i = 0; i < slice.length; i++) {
    const v = slice[i];
    if (v !== 0) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
  }
  const scaled = new Float64Array(slice.length);
  if (!(hi > lo)) {
    return scaled; // all-zero or constant slice: nothing to scale
  }
  const range = hi - lo;
  for (let i = 0; i < slice.length; i++) {
    const v = slice[i];
    scaled[i] = v === 0 ? 0 : (v - lo) / range;
  }
  return scaled;
}

function cubicWeight(t: number): number {
  // Catmull-Rom spline (a = -0.5), the common bicubic kernel.
  const a = -0.5;
  const x = Math.abs(t);
  if (x < 1) return (a + 2) * x * x * x - (a + 3) * x * x + 1;
  if (x < 2) return a * x * x * x - 5 * a * x * x + 8 * a * x - 4 * a;
  return 0;
}

/** Bicubic resize of a height x width plane to side x side. */
export function resizeBicubic(
  plane: Float64Array,
  width: number,
  height: number,
  side: number
): Float64Array {
  const out = new Float64Array(side * side);
  const scaleX = width / side;
  const scaleY = height / side;
  const clamp = (v: number, max: number) => (v < 0 ? 0 : v > max ? max : v);
  for (let oy = 0; oy < side; oy++) {
    const sy = (oy + 0.5) * scaleY - 0.5;
    const y0 = Math.floor(sy);
    for (let ox = 0; ox < side; ox++) {
      const sx = (ox + 0.5) * scaleX - 0.5;
      const x0 = Math.floor(sx);
      let accum = 0;
      let weightSum = 0;
      for (let dy = -1; dy <= 2; dy++) {
        const yy = clamp(y0 + dy, height - 1);
        const wy = cubicWeight(sy - (y0 + dy));
        if (wy === 0) continue;
        for (let dx = -1; dx <= 2; dx++) {
          const xx = clamp(x0 + dx, width - 1);
          const wx = cubicWeight(sx - (x0 + dx));
          if (wx === 0) continue;
          const w = wx * wy;
          accum += w * plane[yy * width + xx];
          weightSum += w;
        }
      }
      out[oy * side + ox] = weightSum !== 0 ? accum / weightSum : 0;
    }
  }
  return out;
}

/**
 * Full pipeline: raw slice -> standardized CHW float32 model input.
 */
export function sliceToModelInput(
  slice: Float64Array,
  width: number,
  height: number,
  targetSide: number
): Float32Array {
  const scaled = minMaxNonzero(slice);
  const resized = resizeBicubic(scaled, width, height, targetSide);
  const pixels = targetSide * targetSide;
  const chw = new Float32Array(3 * pixels);
  for (let channel = 0; channel < 3; channel++) {
    const mean = CHANNEL_MEAN[channel];
    const std = CHANNEL_STD[channel];
    const base = channel * pixels;
    for (let i = 0; i < pixels; i++) {
      chw[base + i] = Math.fround((resized[i] - mean) / std);
    }
  }
  return chw;
}
