/**
 * Frozen 2D backbones mapping a standardized CHW slice to a d=384 vector.
 *
 * The backbone is consumed, never trained.  The built-in
 * "projection-384" reference backbone is a frozen, seeded random
 * projection over the slice's 14x14 patch grid: deterministic across
 * runs and platforms, d=384, with distinct "cls" and "mean" output
 * variants.  Real pretrained ViT weights plug in behind the same
 * interface via a weights file; loading an unavailable backbone raises
 * BackboneLoadError.
 */

import { existsSync } from "node:fs";

export const EMBED_DIM = 384;
export const PATCH_SIZE = 14;

export class BackboneLoadError extends Error {}

export type TokenKind = "cls" | "mean";

export interface Backbone {
  readonly dim: number;
  readonly name: string;
  /** chw is 3 x side x side float32; side must be a multiple of 14. */
  embed(chw: Float32Array, side: number, token: TokenKind): Float32Array;
}

/** Deterministic 32-bit PRNG (mulberry32) for frozen weight generation. */
function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function frozenMatrix(rows: number, cols: number, seed: number): Float32Array {
  const rand = mulberry32(seed);
  const matrix = new Float32Array(rows * cols);
  const scale = Math.sqrt(1.0 / cols);
  for (let i = 0; i < matrix.length; i++) {
    // Uniform in +-sqrt(3/cols): zero mean, variance 1/cols.
    matrix[i] = Math.fround((rand() * 2 - 1) * scale * Math.sqrt(3));
  }
  return matrix;
}

/**
 * Reference backbone: mean-pool each channel over the 14x14 patch grid
 * (side/14 x side/14 patches), then apply a frozen linear projection to
 * 384 dimensions with a tanh squash.  "cls" and "mean" use independent
 * frozen projections, standing in for the class-token and
 * mean-of-patch-tokens readouts of a transformer.
 */
export class SeededProjectionBackbone implements Backbone {
  readonly dim = EMBED_DIM;
  readonly name = "projection-384";
  private projections = new Map<string, Float32Array>();

  private projection(token: TokenKind, features: number): Float32Array {
    const key = `${token}:${features}`;
    let matrix = this.projections.get(key);
    if (!matrix) {
      const seed = token === "cls" ? 0x5eed_c15 : 0x5eed_3a9;
      matrix = frozenMatrix(EMBED_DIM, features, seed ^ features);
      this.projections.set(key, matrix);
    }
    return matrix;
  }

  embed(chw: Float32Array, side: number, token: TokenKind): Float32Array {
    if (side % PATCH_SIZE !== 0) {
      throw new Error(`side ${side} is not a multiple of ${PATCH_SIZE}`);
    }
    if (chw.length !== 3 * side * side) {
      throw new Error(`input length ${chw.length} != 3*${side}*${side}`);
    }
    const grid = side / PATCH_SIZE;
    const features = new Float64Array(3 * grid * grid);
    const pixels = side * side;
    for (let channel = 0; channel < 3; channel++) {
      for (let gy = 0; gy < grid; gy++) {
        for (let gx = 0; gx < grid; gx++) {
          let sum = 0;
          for (let py = 0; py < PATCH_SIZE; py++) {
            const row = (gy * PATCH_SIZE + py) * side + gx * PATCH_SIZE;
            for (let px = 0; px < PATCH_SIZE; px++) {
              sum += chw[channel * pixels + row + px];
            }
          }
          features[channel * grid * grid + gy * grid + gx] =
            sum / (PATCH_SIZE * PATCH_SIZE);
        }
      }
    }
    const matrix = this.projection(token, features.length);
    const output = new Float32Array(EMBED_DIM);
    for (let row = 0; row < EMBED_DIM; row++) {
      let accum = 0;
      const base = row * features.length;
      for (let col = 0; col < features.length; col++) {
        accum += matrix[base + col] * features[col];
      }
      output[row] = Math.fround(Math.tanh(accum));
    }
    return output;
  }
}

/**
 * Resolve a backbone identifier: the built-in name, or a path to a
 * weights file for a real pretrained model (not bundled here).
 */
export function loadBackbone(identifier: string): Backbone {
  if (identifier === "projection-384") {
    return new SeededProjectionBackbone();
  }
  if (!existsSync(identifier)) {
    throw new BackboneLoadError(
      `backbone load failure: no weights file at ${identifier}`
    );
  }
  throw new BackboneLoadError(
    `backbone load failure: weights format of ${identifier} is not supported; ` +
      `use the built-in "projection-384" or plug a loader in here`
  );
}
