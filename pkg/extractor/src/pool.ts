/**
 * Worker pool for per-volume extraction.
 *
 * Each worker owns its own backbone instance (workers are separate
 * threads with separate module state).  Results are merged by task
 * index, so output order never depends on completion order or the
 * worker count.
 */

import { Worker } from "node:worker_threads";

import { Bag } from "./da3d.js";
import { ExtractOutcome, ExtractionSpec, Runner, inlineRunner } from "./extract.js";

interface WorkerReply {
  index: number;
  error?: string;
  rows?: Float32Array;
  sliceCount?: number;
  dim?: number;
}

export function pooledRunner(
  spec: ExtractionSpec,
  workerCount: number,
  workerUrl: URL
): Runner {
  if (workerCount <= 1) {
    return inlineRunner(spec);
  }
  return (paths: string[]) =>
    new Promise<ExtractOutcome[]>((resolve, reject) => {
      if (paths.length === 0) {
        resolve([]);
        return;
      }
      const results = new Array<ExtractOutcome>(paths.length);
      let nextTask = 0;
      let completed = 0;
      const workers: Worker[] = [];

      const shutdown = () => workers.forEach((worker) => void worker.terminate());

      const assign = (worker: Worker) => {
        if (nextTask >= paths.length) {
          void worker.terminate();
          return;
        }
        const index = nextTask++;
        worker.postMessage({ index, path: paths[index], spec });
      };

      const size = Math.min(workerCount, paths.length);
      for (let i = 0; i < size; i++) {
        const worker = new Worker(workerUrl);
        workers.push(worker);
        worker.on("message", (reply: WorkerReply) => {
          if (reply.error !== undefined) {
            results[reply.index] = { error: reply.error };
          } else {
            const bag: Bag = {
              rows: reply.rows!,
              sliceCount: reply.sliceCount!,
              dim: reply.dim!,
            };
            results[reply.index] = { bag };
          }
          completed += 1;
          if (completed === paths.length) {
            shutdown();
            resolve(results);
          } else {
            assign(worker);
          }
        });
        worker.on("error", (error) => {
          shutdown();
          reject(error);
        });
        assign(worker);
      }
    });
}
