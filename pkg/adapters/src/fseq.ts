/**
 * Binary feature-sequence files, byte-compatible with the crossfuse reader.
 *
 * Layout, all integers little-endian:
 *
 *   magic "FSEQ" | version u32 | modality u8 | ndim u8 | dims ndim*u32 | dtype u8 | payload
 *
 * dtype 1 is float32, payload row-major, prod(dims)*4 bytes. Visual payloads
 * are [T, 1408], skeletons [T, 24, 3]. Bytes after the payload are an opaque
 * trailer and are ignored on read.
 */
import * as fs from "node:fs";

export const MAGIC = "FSEQ";
export const VERSION = 1;
export const DTYPE_F32 = 1;
export const VISUAL_DIM = 1408;
export const NUM_JOINTS = 24;

export enum Modality {
  Visual = 0,
  Skeleton = 1,
}

export class FseqError extends Error {}
export class DimMismatchError extends FseqError {}
export class InvalidValueError extends FseqError {}
export class TruncatedFileError extends FseqError {}
export class BadMagicError extends FseqError {}

export interface Sequence {
  modality: Modality;
  dims: number[];
  /** row-major, prod(dims) entries */
  data: Float32Array;
}

function prod(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

export function validateSequence(seq: Sequence, label: string): void {
  const { modality, dims, data } = seq;
  if (modality === Modality.Visual) {
    if (dims.length !== 2 || dims[1] !== VISUAL_DIM) {
      throw new DimMismatchError(`${label}: visual dims [${dims}], expected [T, ${VISUAL_DIM}]`);
    }
  } else {
    if (dims.length !== 3 || dims[1] !== NUM_JOINTS || dims[2] !== 3) {
      throw new DimMismatchError(`${label}: skeleton dims [${dims}], expected [T, ${NUM_JOINTS}, 3]`);
    }
  }
  if (data.length !== prod(dims)) {
    throw new DimMismatchError(`${label}: ${data.length} values, dims [${dims}] need ${prod(dims)}`);
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new InvalidValueError(`${label}: non-finite value at flat index ${i}`);
    }
  }
}

export function encodeSequence(seq: Sequence, label: string): Buffer {
  validateSequence(seq, label);
  const { modality, dims, data } = seq;
  const header = Buffer.alloc(4 + 4 + 1 + 1 + 4 * dims.length + 1);
  let off = header.write(MAGIC, 0, "ascii");
  off = header.writeUInt32LE(VERSION, off);
  off = header.writeUInt8(modality, off);
  off = header.writeUInt8(dims.length, off);
  for (const d of dims) {
    off = header.writeUInt32LE(d, off);
  }
  header.writeUInt8(DTYPE_F32, off);
  const payload = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) {
    payload.writeFloatLE(data[i], i * 4);
  }
  return Buffer.concat([header, payload]);
}

export function writeSequence(seq: Sequence, path: string): void {
  fs.writeFileSync(path, encodeSequence(seq, path));
}

export function decodeSequence(raw: Buffer, label: string): Sequence {
  const prefix = 4 + 4 + 1 + 1;
  if (raw.length < prefix) {
    throw new TruncatedFileError(`${label}: ${raw.length} bytes, header needs ${prefix}`);
  }
  if (raw.toString("ascii", 0, 4) !== MAGIC) {
    throw new BadMagicError(`${label}: magic ${JSON.stringify(raw.toString("ascii", 0, 4))}`);
  }
  const version = raw.readUInt32LE(4);
  if (version !== VERSION) {
    throw new FseqError(`${label}: version ${version}, expected ${VERSION}`);
  }
  const modality = raw.readUInt8(8) as Modality;
  if (modality !== Modality.Visual && modality !== Modality.Skeleton) {
    throw new FseqError(`${label}: unknown modality code ${modality}`);
  }
  const ndim = raw.readUInt8(9);
  let off = prefix;
  if (raw.length < off + 4 * ndim + 1) {
    throw new TruncatedFileError(`${label}: header truncated after ndim=${ndim}`);
  }
  const dims: number[] = [];
  for (let i = 0; i < ndim; i++) {
    dims.push(raw.readUInt32LE(off));
    off += 4;
  }
  const dtype = raw.readUInt8(off);
  off += 1;
  if (dtype !== DTYPE_F32) {
    throw new FseqError(`${label}: dtype ${dtype}, expected ${DTYPE_F32}`);
  }
  const n = prod(dims);
  if (raw.length < off + 4 * n) {
    throw new TruncatedFileError(`${label}: payload ${raw.length - off} bytes, dims [${dims}] need ${4 * n}`);
  }
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    data[i] = raw.readFloatLE(off + i * 4);
  }
  const seq = { modality, dims, data };
  validateSequence(seq, label);
  return seq;
}

export function readSequence(path: string): Sequence {
  return decodeSequence(fs.readFileSync(path), path);
}
