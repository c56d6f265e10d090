/** Worker-thread entry: extract one volume per message. */

import { parentPort } from "node:worker_threads";

import { ExtractionSpec, extractFile } from "./extract.js";

if (!parentPort) {
  throw new Error("worker.js must run inside a worker thread");
}

parentPort.on(
  "message",
  ({ index, path, spec }: { index: number; path: string; spec: ExtractionSpec }) => {
    try {
      const bag = extractFile(spec, path);
      parentPort!.postMessage(
        { index, rows: bag.rows, sliceCount: bag.sliceCount, dim: bag.dim },
        [bag.rows.buffer as ArrayBuffer]
      );
    } catch (error) {
      parentPort!.postMessage({ index, error: (error as Error).message });
    }
  }
);
