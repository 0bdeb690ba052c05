/**
 * Symbol-stream and i32-tensor binary formats.
 *
 * Header (22 bytes): magic "ROSA", version u16, then B, T, R, M as
 * little-endian u32. Symbol streams carry B*T*R little-endian u16 symbols in
 * (b, t, r) order; i32 tensors reuse the header with a little-endian i32
 * payload whose trailing axes beyond (B, T, R) — e.g. the (M, 2)
 * counterfactual axes — are implied by the payload length.
 */

import { readFileSync, writeFileSync } from "node:fs";

export const STREAM_MAGIC = "ROSA";
export const STREAM_VERSION = 1;
const HEADER_BYTES = 4 + 2 + 4 * 4;

export class StreamFormatError extends Error {}

export interface SymbolStream {
  /** (B, T, R) */
  shape: [number, number, number];
  routeBits: number;
  /** B*T*R symbols in (b, t, r) order */
  data: Uint16Array;
}

export interface I32Tensor {
  /** leading (B, T, R) axes from the header */
  shape: [number, number, number];
  routeBits: number;
  /** full flat payload; length may be a multiple of B*T*R */
  data: Int32Array;
}

function packHeader(shape: [number, number, number], routeBits: number): Buffer {
  const buf = Buffer.alloc(HEADER_BYTES);
  buf.write(STREAM_MAGIC, 0, "ascii");
  buf.writeUInt16LE(STREAM_VERSION, 4);
  buf.writeUInt32LE(shape[0], 6);
  buf.writeUInt32LE(shape[1], 10);
  buf.writeUInt32LE(shape[2], 14);
  buf.writeUInt32LE(routeBits, 18);
  return buf;
}

function unpackHeader(buf: Buffer, path: string) {
  if (buf.length < HEADER_BYTES) {
    throw new StreamFormatError(`truncated header in ${path}`);
  }
  if (buf.toString("ascii", 0, 4) !== STREAM_MAGIC) {
    throw new StreamFormatError(`bad magic in ${path}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== STREAM_VERSION) {
    throw new StreamFormatError(`unsupported stream version ${version} in ${path}`);
  }
  const shape: [number, number, number] = [
    buf.readUInt32LE(6),
    buf.readUInt32LE(10),
    buf.readUInt32LE(14),
  ];
  return { shape, routeBits: buf.readUInt32LE(18) };
}

export function writeSymbolStream(path: string, stream: SymbolStream): void {
  const [b, t, r] = stream.shape;
  if (stream.data.length !== b * t * r) {
    throw new StreamFormatError(
      `payload length ${stream.data.length} does not match shape ${stream.shape}`,
    );
  }
  const limit = 1 << stream.routeBits;
  for (const sym of stream.data) {
    if (sym >= limit) {
      throw new StreamFormatError(`symbol ${sym} exceeds alphabet 2^${stream.routeBits}`);
    }
  }
  const payload = Buffer.from(stream.data.buffer, stream.data.byteOffset, stream.data.byteLength);
  writeFileSync(path, Buffer.concat([packHeader(stream.shape, stream.routeBits), payload]));
}

export function readSymbolStream(path: string): SymbolStream {
  const buf = readFileSync(path);
  const { shape, routeBits } = unpackHeader(buf, path);
  const count = shape[0] * shape[1] * shape[2];
  if (buf.length < HEADER_BYTES + 2 * count) {
    throw new StreamFormatError(`truncated symbol stream ${path}`);
  }
  const data = new Uint16Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = buf.readUInt16LE(HEADER_BYTES + 2 * i);
  }
  const limit = 1 << routeBits;
  for (const sym of data) {
    if (sym >= limit) {
      throw new StreamFormatError(`symbol exceeds alphabet 2^${routeBits} in ${path}`);
    }
  }
  return { shape, routeBits, data };
}

export function writeI32Tensor(path: string, tensor: I32Tensor): void {
  const payload = Buffer.from(tensor.data.buffer, tensor.data.byteOffset, tensor.data.byteLength);
  writeFileSync(path, Buffer.concat([packHeader(tensor.shape, tensor.routeBits), payload]));
}

export function readI32Tensor(path: string): I32Tensor {
  const buf = readFileSync(path);
  const { shape, routeBits } = unpackHeader(buf, path);
  const payloadBytes = buf.length - HEADER_BYTES;
  if (payloadBytes % 4 !== 0) {
    throw new StreamFormatError(`payload of ${path} is not a whole number of i32 values`);
  }
  const data = new Int32Array(payloadBytes / 4);
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readInt32LE(HEADER_BYTES + 4 * i);
  }
  return { shape, routeBits, data };
}
