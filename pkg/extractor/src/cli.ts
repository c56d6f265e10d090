/**
 * Extraction command line.
 *
 *   extract --in <dir> --out <dir> --labels <sidecar.json>
 *           [--threshold f] [--token cls|mean] [--side n]
 *           [--backbone name|path] [--workers n]
 *
 * The labels sidecar is a JSON object mapping volume ids (file name
 * without .nii/.nii.gz) to label strings.  Exit codes: 0 success
 * (including an empty input directory, with a warning), 1 if any
 * volume failed, 2 for usage or settings errors.
 */

import { existsSync, readFileSync } from "node:fs";

import { BackboneLoadError } from "./backbone.js";
import { DEFAULT_SPEC, SpecError, batchExtract } from "./extract.js";
import { pooledRunner } from "./pool.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) {
      throw new SpecError(`malformed arguments near ${key}`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

async function runExtract(argv: string[]): Promise<number> {
  const flags = parseFlags(argv);
  const known = new Set([
    "in", "out", "labels", "threshold", "token", "side", "backbone", "workers",
  ]);
  for (const key of flags.keys()) {
    if (!known.has(key)) throw new SpecError(`unknown flag --${key}`);
  }
  for (const required of ["in", "out", "labels"]) {
    if (!flags.has(required)) throw new SpecError(`missing required flag --${required}`);
  }

  const spec = {
    ...DEFAULT_SPEC,
    threshold: flags.has("threshold") ? Number(flags.get("threshold")) : DEFAULT_SPEC.threshold,
    token: (flags.get("token") ?? DEFAULT_SPEC.token) as "cls" | "mean",
    targetSide: flags.has("side") ? Number(flags.get("side")) : DEFAULT_SPEC.targetSide,
    backbone: flags.get("backbone") ?? DEFAULT_SPEC.backbone,
  };
  if (Number.isNaN(spec.threshold) || Number.isNaN(spec.targetSide)) {
    throw new SpecError("numeric flag did not parse");
  }

  const inDir = flags.get("in")!;
  if (!existsSync(inDir)) {
    throw new Error(`input directory not found: ${inDir}`);
  }
  const labelsPath = flags.get("labels")!;
  const labels = JSON.parse(readFileSync(labelsPath, "utf-8")) as Record<string, string>;

  const workers = flags.has("workers") ? Number(flags.get("workers")) : 1;
  const runner = pooledRunner(spec, workers, new URL("./worker.js", import.meta.url));

  const result = await batchExtract(spec, inDir, flags.get("out")!, labels, runner);
  for (const failure of result.failures) {
    console.error(`FAIL ${failure.id}: ${failure.error}`);
  }
  for (const id of result.skipped) {
    console.error(`skip ${id} (unchanged)`);
  }
  if (result.entries.length === 0 && result.failures.length === 0) {
    console.error("warning: no volumes found in input directory");
  }
  console.log(
    `extracted ${result.entries.length - result.skipped.length}, ` +
      `skipped ${result.skipped.length}, failed ${result.failures.length}`
  );
  return result.failures.length > 0 ? 1 : 0;
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === "extract") {
      return await runExtract(rest);
    }
    console.error("usage: cli.js extract --in <dir> --out <dir> --labels <json> [flags]");
    return 2;
  } catch (error) {
    if (error instanceof SpecError || error instanceof BackboneLoadError) {
      console.error(`error: ${(error as Error).message}`);
      return 2;
    }
    console.error(`error: ${(error as Error).message}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split("/").pop()!);

if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
