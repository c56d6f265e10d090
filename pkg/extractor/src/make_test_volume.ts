/**
 * Synthetic NIfTI-1 volume writer for tests and conformance checks.
 *
 * Usage: node dist/make_test_volume.js <out.nii> <nx> <ny> <nz> <kind>
 * where kind is "gradient" (smooth deterministic intensities with a
 * zero background border), "zeros" (all-zero volume), or "noise"
 * (deterministic pseudo-random intensities).
 */

import { writeFileSync } from "node:fs";

const HEADER_BYTES = 348;
const VOX_OFFSET = 352;

export function encodeNifti(
  nx: number,
  ny: number,
  nz: number,
  voxels: Float32Array
): Buffer {
  if (voxels.length !== nx * ny * nz) {
    throw new Error(`voxel count ${voxels.length} != ${nx}*${ny}*${nz}`);
  }
  const buffer = Buffer.alloc(VOX_OFFSET + voxels.length * 4);
  buffer.writeInt32LE(HEADER_BYTES, 0); // sizeof_hdr
  // dim[8] at offset 40: rank then extents.
  buffer.writeInt16LE(3, 40);
  buffer.writeInt16LE(nx, 42);
  buffer.writeInt16LE(ny, 44);
  buffer.writeInt16LE(nz, 46);
  for (let d = 4; d < 8; d++) buffer.writeInt16LE(1, 40 + 2 * d);
  buffer.writeInt16LE(16, 70); // datatype: float32
  buffer.writeInt16LE(32, 72); // bitpix
  // pixdim[8] at offset 76: unit spacing.
  for (let d = 0; d < 8; d++) buffer.writeFloatLE(d < 4 ? 1 : 0, 76 + 4 * d);
  buffer.writeFloatLE(VOX_OFFSET, 108); // vox_offset
  buffer.writeFloatLE(1, 112); // scl_slope
  buffer.writeFloatLE(0, 116); // scl_inter
  buffer.write("n+1\0", 344, "ascii"); // magic
  for (let i = 0; i < voxels.length; i++) {
    buffer.writeFloatLE(voxels[i], VOX_OFFSET + i * 4);
  }
  return buffer;
}

export function makeVoxels(
  nx: number,
  ny: number,
  nz: number,
  kind: "gradient" | "zeros" | "noise"
): Float32Array {
  const voxels = new Float32Array(nx * ny * nz);
  if (kind === "zeros") {
    return voxels;
  }
  let state = 0x12345678 >>> 0;
  const nextRandom = () => {
    // xorshift32: deterministic across runs and platforms.
    state ^= state << 13;
    state >>>= 0;
    state ^= state >> 17;
    state ^= state << 5;
    state >>>= 0;
    return state / 4294967296;
  };
  const border = 4;
  for (let z = 0; z < nz; z++) {
    for (let y = 0; y < ny; y++) {
      for (let x = 0; x < nx; x++) {
        const inside =
          x >= border && x < nx - border && y >= border && y < ny - border;
        if (!inside) continue; // zero background, like a stripped scan
        const index = x + nx * (y + ny * z);
        if (kind === "gradient") {
          voxels[index] = Math.fround(
            100 + 50 * Math.sin(x / 7) + 30 * Math.cos(y / 5) + 10 * z
          );
        } else {
          voxels[index] = Math.fround(nextRandom() * 255);
        }
      }
    }
  }
  return voxels;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split("/").pop()!);

if (invokedDirectly) {
  const [outPath, nxArg, nyArg, nzArg, kindArg] = process.argv.slice(2);
  if (!outPath || !nxArg || !nyArg || !nzArg || !kindArg) {
    console.error(
      "usage: make_test_volume.js <out.nii> <nx> <ny> <nz> <gradient|zeros|noise>"
    );
    process.exit(2);
  }
  const nx = parseInt(nxArg, 10);
  const ny = parseInt(nyArg, 10);
  const nz = parseInt(nzArg, 10);
  const kind = kindArg as "gradient" | "zeros" | "noise";
  writeFileSync(outPath, encodeNifti(nx, ny, nz, makeVoxels(nx, ny, nz, kind)));
  console.log(`wrote ${outPath} (${nx}x${ny}x${nz}, ${kind})`);
}
