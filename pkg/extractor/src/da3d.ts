/**
 * Bit-exact `.da3d` bag serialization.
 *
 * Layout (unsigned 32-bit little-endian integers):
 *   offset 0   magic "DA3D"
 *   offset 4   version = 1
 *   offset 8   d  (embedding dimension)
 *   offset 12  N  (slice count, >= 1)
 *   offset 16  N*d IEEE-754 float32 little-endian, row-major
 *
 * Labels and subject ids live only in the manifest (JSONL with keys
 * id/path/label), matching the training engine's reader.
 */

export const MAGIC = 0x44334144; // "DA3D" read as little-endian u32
export const VERSION = 1;
export const HEADER_BYTES = 16;

export interface Bag {
  /** Row-major N x d matrix. */
  rows: Float32Array;
  sliceCount: number;
  dim: number;
}

export function encodeBag(bag: Bag): Buffer {
  const { rows, sliceCount, dim } = bag;
  if (sliceCount < 1 || dim < 1) {
    throw new Error(`bag must have N >= 1 and d >= 1, got N=${sliceCount} d=${dim}`);
  }
  if (rows.length !== sliceCount * dim) {
    throw new Error(`matrix length ${rows.length} != N*d = ${sliceCount * dim}`);
  }
  for (let i = 0; i < rows.length; i++) {
    if (!Number.isFinite(rows[i])) {
      throw new Error(`non-finite value in slice row ${Math.floor(i / dim)}`);
    }
  }
  const buffer = Buffer.alloc(HEADER_BYTES + rows.length * 4);
  buffer.write("DA3D", 0, "ascii");
  buffer.writeUInt32LE(VERSION, 4);
  buffer.writeUInt32LE(dim, 8);
  buffer.writeUInt32LE(sliceCount, 12);
  for (let i = 0; i < rows.length; i++) {
    buffer.writeFloatLE(rows[i], HEADER_BYTES + i * 4);
  }
  return buffer;
}

export function decodeBag(buffer: Buffer): Bag {
  if (buffer.length < HEADER_BYTES) {
    throw new Error(`header is ${buffer.length} bytes, expected ${HEADER_BYTES}`);
  }
  if (buffer.toString("ascii", 0, 4) !== "DA3D") {
    throw new Error("bad magic");
  }
  const version = buffer.readUInt32LE(4);
  if (version !== VERSION) {
    throw new Error(`unsupported version ${version}`);
  }
  const dim = buffer.readUInt32LE(8);
  const sliceCount = buffer.readUInt32LE(12);
  const expected = HEADER_BYTES + sliceCount * dim * 4;
  if (buffer.length !== expected) {
    throw new Error(`file is ${buffer.length} bytes, expected ${expected}`);
  }
  const rows = new Float32Array(sliceCount * dim);
  for (let i = 0; i < rows.length; i++) {
    rows[i] = buffer.readFloatLE(HEADER_BYTES + i * 4);
  }
  return { rows, sliceCount, dim };
}

export interface ManifestEntry {
  id: string;
  path: string;
  label: string;
}

export function encodeManifest(entries: ManifestEntry[]): string {
  return entries
    .map((entry) =>
      JSON.stringify({ id: entry.id, path: entry.path, label: entry.label })
    )
    .join("\n")
    .concat(entries.length ? "\n" : "");
}
