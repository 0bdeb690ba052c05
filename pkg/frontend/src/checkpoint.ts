/**
 * Reader for parameter checkpoints: a JSON manifest listing parameter names
 * and shapes in storage order next to a flat little-endian f32 payload.
 */

import { readFileSync } from "node:fs";

export const MANIFEST_VERSION = 1;

export class CheckpointFormatError extends Error {}

export interface CheckpointParam {
  shape: number[];
  data: Float32Array;
}

/** Load `<prefix>.json` + `<prefix>.bin` into a name -> param map. */
export function loadCheckpoint(prefix: string): Map<string, CheckpointParam> {
  let manifest: { version?: number; params?: { name: string; shape: number[] }[] };
  try {
    manifest = JSON.parse(readFileSync(`${prefix}.json`, "utf-8"));
  } catch (err) {
    throw new CheckpointFormatError(`unreadable manifest ${prefix}.json: ${err}`);
  }
  if (manifest.version !== MANIFEST_VERSION || !Array.isArray(manifest.params)) {
    throw new CheckpointFormatError(`unsupported checkpoint manifest in ${prefix}.json`);
  }
  const raw = readFileSync(`${prefix}.bin`);
  if (raw.length % 4 !== 0) {
    throw new CheckpointFormatError(`payload of ${prefix}.bin is not whole f32 values`);
  }
  const values = new Float32Array(raw.length / 4);
  for (let i = 0; i < values.length; i++) {
    values[i] = raw.readFloatLE(4 * i);
  }
  const out = new Map<string, CheckpointParam>();
  let offset = 0;
  for (const entry of manifest.params) {
    const size = entry.shape.reduce((a, b) => a * b, 1);
    if (offset + size > values.length) {
      throw new CheckpointFormatError(`checkpoint payload too short for ${entry.name}`);
    }
    out.set(entry.name, { shape: entry.shape, data: values.slice(offset, offset + size) });
    offset += size;
  }
  if (offset !== values.length) {
    throw new CheckpointFormatError(`checkpoint payload size mismatch in ${prefix}.bin`);
  }
  return out;
}
