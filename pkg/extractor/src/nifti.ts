/**
 * NIfTI-1 volume loading on top of nifti-reader-js.
 *
 * Volumes are assumed preprocessed upstream (registered to a template,
 * skull stripped); this module only decodes voxels.  Axial slices are
 * xy-planes indexed by z, returned in ascending-z (inferior to superior
 * for standard RAS-oriented files) order.
 */

import { gunzipSync } from "node:zlib";
import * as nifti from "nifti-reader-js";

export class VolumeReadError extends Error {}

export interface Volume {
  nx: number;
  ny: number;
  nz: number;
  /** Voxels in NIfTI order: index = x + nx * (y + ny * z). */
  voxels: Float64Array;
}

function toTypedArray(header: nifti.NIFTI1 | nifti.NIFTI2, image: ArrayBuffer) {
  switch (header.datatypeCode) {
    case 2:
      return new Uint8Array(image);
    case 4:
      return new Int16Array(image);
    case 8:
      return new Int32Array(image);
    case 16:
      return new Float32Array(image);
    case 64:
      return new Float64Array(image);
    case 256:
      return new Int8Array(image);
    case 512:
      return new Uint16Array(image);
    default:
      throw new VolumeReadError(`unsupported NIfTI datatype code ${header.datatypeCode}`);
  }
}

function toArrayBuffer(buffer: Buffer): ArrayBuffer {
  const out = new ArrayBuffer(buffer.byteLength);
  new Uint8Array(out).set(buffer);
  return out;
}

export function parseVolume(raw: Buffer): Volume {
  let data = toArrayBuffer(raw);
  if (nifti.isCompressed(data)) {
    data = toArrayBuffer(gunzipSync(Buffer.from(data)));
  }
  if (!nifti.isNIFTI(data)) {
    throw new VolumeReadError("not a NIfTI file");
  }
  const header = nifti.readHeader(data);
  if (header === null) {
    throw new VolumeReadError("unreadable NIfTI header");
  }
  const [rank, nx, ny, nz] = [
    header.dims[0],
    header.dims[1],
    header.dims[2],
    header.dims[3],
  ];
  if (rank < 3 || nx < 1 || ny < 1 || nz < 1) {
    throw new VolumeReadError(`expected a 3-D volume, got dims ${header.dims.slice(0, 4)}`);
  }
  const typed = toTypedArray(header, nifti.readImage(header, data));
  const count = nx * ny * nz;
  if (typed.length < count) {
    throw new VolumeReadError(
      `image has ${typed.length} voxels, header promises ${count}`
    );
  }
  // Apply the NIfTI intensity scaling when declared.
  const slope = header.scl_slope !== 0 ? header.scl_slope : 1;
  const intercept = header.scl_slope !== 0 ? header.scl_inter : 0;
  const voxels = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    voxels[i] = typed[i] * slope + intercept;
  }
  return { nx, ny, nz, voxels };
}

/** Copy axial slice z (xy-plane, row-major y then x) out of the volume. */
export function axialSlice(volume: Volume, z: number): Float64Array {
  const { nx, ny } = volume;
  const slice = new Float64Array(nx * ny);
  const base = z * nx * ny;
  for (let i = 0; i < nx * ny; i++) {
    slice[i] = volume.voxels[base + i];
  }
  return slice;
}
