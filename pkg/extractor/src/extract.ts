/**
 * Volume -> `.da3d` extraction and directory batch runs.
 *
 * Per volume: decode, take axial slices in ascending-z order, drop
 * slices whose nonzero-voxel fraction falls below the inclusion
 * threshold, run the preprocessing pipeline and the frozen backbone on
 * each retained slice, and serialize the N x 384 matrix.
 *
 * Batch runs keep an extract_index.json of source-content hashes so
 * re-runs skip volumes whose input and settings are unchanged.
 */

import { createHash } from "node:crypto";
import {
  existsSync,
  mkdirSync,
  readFileSync,
  readdirSync,
  writeFileSync,
} from "node:fs";
import { basename, join } from "node:path";

import { Bag, ManifestEntry, encodeBag, encodeManifest } from "./da3d.js";
import { TokenKind, loadBackbone } from "./backbone.js";
import { axialSlice, parseVolume } from "./nifti.js";
import { nonzeroFraction, sliceToModelInput } from "./preprocess.js";

export interface ExtractionSpec {
  /** Input image side after resize; must be a multiple of 14. */
  targetSide: number;
  /** Minimum nonzero-voxel fraction for a slice to be retained, in [0, 1). */
  threshold: number;
  /** Backbone identifier: built-in name or weights path. */
  backbone: string;
  /** Which backbone readout to store per slice. */
  token: TokenKind;
}

export const DEFAULT_SPEC: ExtractionSpec = {
  targetSide: 224,
  threshold: 0,
  backbone: "projection-384",
  token: "cls",
};

export class SpecError extends Error {}

export function validateSpec(spec: ExtractionSpec): void {
  if (spec.targetSide < 14 || spec.targetSide % 14 !== 0) {
    throw new SpecError(`targetSide ${spec.targetSide} must be a positive multiple of 14`);
  }
  if (!(spec.threshold >= 0 && spec.threshold < 1)) {
    throw new SpecError(`threshold ${spec.threshold} must lie in [0, 1)`);
  }
  if (spec.token !== "cls" && spec.token !== "mean") {
    throw new SpecError(`token must be "cls" or "mean", got ${spec.token}`);
  }
}

export class AllSlicesFilteredError extends Error {}

/** Extract one volume buffer into a bag matrix. */
export function extractVolume(spec: ExtractionSpec, raw: Buffer): Bag {
  validateSpec(spec);
  const backbone = loadBackbone(spec.backbone);
  const volume = parseVolume(raw);
  const retained: Float32Array[] = [];
  for (let z = 0; z < volume.nz; z++) {
    const slice = axialSlice(volume, z);
    if (nonzeroFraction(slice) < spec.threshold) continue;
    const input = sliceToModelInput(slice, volume.nx, volume.ny, spec.targetSide);
    retained.push(backbone.embed(input, spec.targetSide, spec.token));
  }
  if (retained.length === 0) {
    throw new AllSlicesFilteredError(
      `threshold ${spec.threshold} filtered out all ${volume.nz} slices`
    );
  }
  const dim = backbone.dim;
  const rows = new Float32Array(retained.length * dim);
  retained.forEach((row, index) => rows.set(row, index * dim));
  return { rows, sliceCount: retained.length, dim };
}

export function extractFile(spec: ExtractionSpec, volumePath: string): Bag {
  return extractVolume(spec, readFileSync(volumePath));
}

// ---------------------------------------------------------------------------
// Batch extraction
// ---------------------------------------------------------------------------
export interface BatchResult {
  entries: ManifestEntry[];
  failures: { id: string; error: string }[];
  skipped: string[];
}

export function volumeId(fileName: string): string {
  return basename(fileName).replace(/\.nii(\.gz)?$/i, "");
}

export function listVolumes(inDir: string): string[] {
  return readdirSync(inDir)
    .filter((name) => /\.nii(\.gz)?$/i.test(name))
    .sort();
}

function specHash(spec: ExtractionSpec): string {
  return createHash("sha256")
    .update(JSON.stringify([spec.targetSide, spec.threshold, spec.backbone, spec.token]))
    .digest("hex");
}

interface IndexRecord {
  sourceSha256: string;
  specHash: string;
  output: string;
}

function loadIndex(path: string): Record<string, IndexRecord> {
  if (!existsSync(path)) return {};
  try {
    return JSON.parse(readFileSync(path, "utf-8"));
  } catch {
    return {};
  }
}

/** One bag extraction outcome from a (possibly pooled) runner. */
export type ExtractOutcome = { bag: Bag } | { error: string };

export type Runner = (paths: string[]) => Promise<ExtractOutcome[]>;

/** Serial in-process runner; the worker pool provides a parallel one. */
export function inlineRunner(spec: ExtractionSpec): Runner {
  return async (paths) =>
    paths.map((path) => {
      try {
        return { bag: extractFile(spec, path) };
      } catch (error) {
        return { error: (error as Error).message };
      }
    });
}

/**
 * Extract every volume in `inDir` into `outDir`.  `labels` maps volume
 * ids to label strings; a missing label is a per-file failure (logged
 * and skipped).  Volumes whose source hash and settings match the
 * extract_index.json from a previous run are skipped.  The runner may
 * execute extractions in parallel; outputs, the index, and the manifest
 * are written serially here in a fixed order.
 */
export async function batchExtract(
  spec: ExtractionSpec,
  inDir: string,
  outDir: string,
  labels: Record<string, string>,
  runner: Runner = inlineRunner(spec)
): Promise<BatchResult> {
  validateSpec(spec);
  mkdirSync(outDir, { recursive: true });
  const indexPath = join(outDir, "extract_index.json");
  const index = loadIndex(indexPath);
  const hashOfSpec = specHash(spec);

  const entries: ManifestEntry[] = [];
  const failures: { id: string; error: string }[] = [];
  const skipped: string[] = [];
  const pending: { id: string; path: string; label: string; sha: string }[] = [];

  for (const fileName of listVolumes(inDir)) {
    const id = volumeId(fileName);
    const sourcePath = join(inDir, fileName);
    const label = labels[id];
    if (label === undefined) {
      failures.push({ id, error: `no label for volume id ${id}` });
      continue;
    }
    const sourceSha = createHash("sha256")
      .update(readFileSync(sourcePath))
      .digest("hex");
    const previous = index[id];
    if (
      previous &&
      previous.sourceSha256 === sourceSha &&
      previous.specHash === hashOfSpec &&
      existsSync(join(outDir, previous.output))
    ) {
      skipped.push(id);
      entries.push({ id, path: previous.output, label });
      continue;
    }
    pending.push({ id, path: sourcePath, label, sha: sourceSha });
  }

  const outcomes = await runner(pending.map((item) => item.path));
  pending.forEach((item, position) => {
    const outcome = outcomes[position];
    if ("error" in outcome) {
      failures.push({ id: item.id, error: outcome.error });
      return;
    }
    const outputName = `${item.id}.da3d`;
    writeFileSync(join(outDir, outputName), encodeBag(outcome.bag));
    index[item.id] = { sourceSha256: item.sha, specHash: hashOfSpec, output: outputName };
    entries.push({ id: item.id, path: outputName, label: item.label });
  });

  entries.sort((a, b) => (a.id < b.id ? -1 : a.id > b.id ? 1 : 0));
  const sortedIndex: Record<string, IndexRecord> = {};
  for (const key of Object.keys(index).sort()) {
    sortedIndex[key] = index[key];
  }
  writeFileSync(indexPath, JSON.stringify(sortedIndex, null, 2) + "\n");
  writeFileSync(join(outDir, "manifest.jsonl"), encodeManifest(entries));
  return { entries, failures, skipped };
}
