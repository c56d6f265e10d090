import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { pathToFileURL } from "node:url";
import { describe, expect, it } from "vitest";

import { decodeBag } from "../src/da3d.js";
import {
  AllSlicesFilteredError,
  DEFAULT_SPEC,
  SpecError,
  batchExtract,
  extractVolume,
  validateSpec,
} from "../src/extract.js";
import { pooledRunner } from "../src/pool.js";
import { VolumeReadError, parseVolume } from "../src/nifti.js";
import { encodeNifti, makeVoxels } from "../src/make_test_volume.js";

const WORKER_URL = pathToFileURL(join(__dirname, "..", "dist", "worker.js"));

function volume(kind: "gradient" | "zeros" | "noise", nz = 16): Buffer {
  return encodeNifti(64, 64, nz, makeVoxels(64, 64, nz, kind));
}

function scratch(): string {
  return mkdtempSync(join(tmpdir(), "extractor-test-"));
}

describe("spec validation", () => {
  it("rejects threshold 1.0 and non-multiple-of-14 sides", () => {
    expect(() => validateSpec({ ...DEFAULT_SPEC, threshold: 1.0 })).toThrow(SpecError);
    expect(() => validateSpec({ ...DEFAULT_SPEC, targetSide: 100 })).toThrow(SpecError);
    expect(() => validateSpec({ ...DEFAULT_SPEC, token: "cls" })).not.toThrow();
  });
});

describe("nifti parsing", () => {
  it("reads synthetic volumes and rejects garbage", () => {
    const parsed = parseVolume(volume("gradient"));
    expect([parsed.nx, parsed.ny, parsed.nz]).toEqual([64, 64, 16]);
    expect(() => parseVolume(Buffer.from("definitely not nifti"))).toThrow(
      VolumeReadError
    );
  });

  it("reads gzipped volumes identically", async () => {
    const { gzipSync } = await import("node:zlib");
    const raw = volume("gradient");
    const a = parseVolume(raw);
    const b = parseVolume(gzipSync(raw));
    expect(Buffer.from(a.voxels.buffer).equals(Buffer.from(b.voxels.buffer))).toBe(true);
  });
});

describe("extractVolume", () => {
  it("emits d=384 with one row per retained slice", () => {
    const bag = extractVolume(DEFAULT_SPEC, volume("gradient"));
    expect(bag.dim).toBe(384);
    expect(bag.sliceCount).toBe(16);
  });

  it("is bitwise deterministic across runs", () => {
    const first = extractVolume(DEFAULT_SPEC, volume("gradient"));
    const second = extractVolume(DEFAULT_SPEC, volume("gradient"));
    expect(
      Buffer.from(first.rows.buffer).equals(Buffer.from(second.rows.buffer))
    ).toBe(true);
  });

  it("gives identical rows for identical slices (all-zero volume)", () => {
    const bag = extractVolume(DEFAULT_SPEC, volume("zeros"));
    const dim = bag.dim;
    const firstRow = bag.rows.subarray(0, dim);
    for (let slice = 1; slice < bag.sliceCount; slice++) {
      const row = bag.rows.subarray(slice * dim, (slice + 1) * dim);
      expect(Buffer.from(row).equals(Buffer.from(firstRow))).toBe(true);
    }
  });

  it("drops slices under the inclusion threshold", () => {
    // A zeros volume has nonzero fraction 0 everywhere: any positive
    // threshold filters every slice.
    expect(() =>
      extractVolume({ ...DEFAULT_SPEC, threshold: 0.5 }, volume("zeros"))
    ).toThrow(AllSlicesFilteredError);
    const kept = extractVolume({ ...DEFAULT_SPEC, threshold: 0.5 }, volume("gradient"));
    expect(kept.sliceCount).toBe(16); // interior is dense
  });

  it("cls and mean tokens give different embeddings", () => {
    const cls = extractVolume({ ...DEFAULT_SPEC, token: "cls" }, volume("gradient"));
    const mean = extractVolume({ ...DEFAULT_SPEC, token: "mean" }, volume("gradient"));
    expect(Buffer.from(cls.rows.buffer).equals(Buffer.from(mean.rows.buffer))).toBe(
      false
    );
  });
});

describe("batchExtract", () => {
  function writeVolumes(dir: string) {
    writeFileSync(join(dir, "a.nii"), volume("gradient"));
    writeFileSync(join(dir, "b.nii"), volume("noise"));
  }

  it("writes one bag per volume plus a manifest", async () => {
    const inDir = scratch();
    const outDir = scratch();
    writeVolumes(inDir);
    const result = await batchExtract(DEFAULT_SPEC, inDir, outDir, {
      a: "hc",
      b: "ad",
    });
    expect(result.failures).toHaveLength(0);
    expect(result.entries.map((e) => e.id)).toEqual(["a", "b"]);
    const bag = decodeBag(readFileSync(join(outDir, "a.da3d")));
    expect(bag.dim).toBe(384);
    const manifest = readFileSync(join(outDir, "manifest.jsonl"), "utf-8");
    expect(manifest.trimEnd().split("\n")).toHaveLength(2);
  });

  it("returns an empty manifest for an empty directory", async () => {
    const result = await batchExtract(DEFAULT_SPEC, scratch(), scratch(), {});
    expect(result.entries).toHaveLength(0);
    expect(result.failures).toHaveLength(0);
  });

  it("records per-file failures and keeps going", async () => {
    const inDir = scratch();
    const outDir = scratch();
    writeVolumes(inDir);
    writeFileSync(join(inDir, "broken.nii"), Buffer.from("garbage"));
    const result = await batchExtract(DEFAULT_SPEC, inDir, outDir, {
      a: "hc",
      b: "ad",
      broken: "hc",
    });
    expect(result.entries.map((e) => e.id)).toEqual(["a", "b"]);
    expect(result.failures).toHaveLength(1);
    expect(result.failures[0].id).toBe("broken");
  });

  it("fails volumes without a label", async () => {
    const inDir = scratch();
    const outDir = scratch();
    writeVolumes(inDir);
    const result = await batchExtract(DEFAULT_SPEC, inDir, outDir, { a: "hc" });
    expect(result.failures.map((f) => f.id)).toEqual(["b"]);
  });

  it("skips unchanged volumes on re-run", async () => {
    const inDir = scratch();
    const outDir = scratch();
    writeVolumes(inDir);
    const labels = { a: "hc", b: "ad" };
    await batchExtract(DEFAULT_SPEC, inDir, outDir, labels);
    const before = readFileSync(join(outDir, "a.da3d"));
    const rerun = await batchExtract(DEFAULT_SPEC, inDir, outDir, labels);
    expect(rerun.skipped.sort()).toEqual(["a", "b"]);
    expect(readFileSync(join(outDir, "a.da3d")).equals(before)).toBe(true);
    // The manifest still lists every volume.
    expect(rerun.entries).toHaveLength(2);
  });

  it("produces identical output through the worker pool", async () => {
    const inDir = scratch();
    writeVolumes(inDir);
    const labels = { a: "hc", b: "ad" };
    const serialDir = scratch();
    const pooledDir = scratch();
    await batchExtract(DEFAULT_SPEC, inDir, serialDir, labels);
    const runner = pooledRunner(DEFAULT_SPEC, 2, WORKER_URL);
    const result = await batchExtract(DEFAULT_SPEC, inDir, pooledDir, labels, runner);
    expect(result.failures).toHaveLength(0);
    for (const name of ["a.da3d", "b.da3d", "manifest.jsonl"]) {
      expect(
        readFileSync(join(serialDir, name)).equals(readFileSync(join(pooledDir, name)))
      ).toBe(true);
    }
  });
});
