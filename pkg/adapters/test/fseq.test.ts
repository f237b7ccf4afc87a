import { describe, it, expect } from "vitest";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import {
  Modality,
  VISUAL_DIM,
  NUM_JOINTS,
  encodeSequence,
  decodeSequence,
  writeSequence,
  readSequence,
  DimMismatchError,
  InvalidValueError,
  BadMagicError,
  TruncatedFileError,
} from "../src/fseq.js";

function tmpFile(name: string): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "fseq-"));
  return path.join(dir, name);
}

function visualSeq(t: number) {
  const data = new Float32Array(t * VISUAL_DIM);
  for (let i = 0; i < data.length; i++) data[i] = Math.sin(i) * 3;
  return { modality: Modality.Visual, dims: [t, VISUAL_DIM], data };
}

describe("fseq round trip", () => {
  it("visual payload comes back bit-identical", () => {
    const p = tmpFile("a_v.fseq");
    const seq = visualSeq(5);
    writeSequence(seq, p);
    const back = readSequence(p);
    expect(back.modality).toBe(Modality.Visual);
    expect(back.dims).toEqual([5, VISUAL_DIM]);
    expect(Buffer.from(back.data.buffer)).toEqual(Buffer.from(seq.data.buffer));
  });

  it("skeleton payload comes back bit-identical", () => {
    const p = tmpFile("a_s.fseq");
    const data = new Float32Array(4 * NUM_JOINTS * 3);
    for (let i = 0; i < data.length; i++) data[i] = (i % 17) - 8.5;
    writeSequence({ modality: Modality.Skeleton, dims: [4, NUM_JOINTS, 3], data }, p);
    const back = readSequence(p);
    expect(back.dims).toEqual([4, NUM_JOINTS, 3]);
    expect(Buffer.from(back.data.buffer)).toEqual(Buffer.from(data.buffer));
  });

  it("bytes after the payload are ignored", () => {
    const seq = visualSeq(2);
    const withTrailer = Buffer.concat([encodeSequence(seq, "x"), Buffer.from("opaque trailer bytes")]);
    const back = decodeSequence(withTrailer, "x");
    expect(Buffer.from(back.data.buffer)).toEqual(Buffer.from(seq.data.buffer));
  });
});

describe("fseq validation", () => {
  it("rejects wrong visual width", () => {
    const data = new Float32Array(3 * 10);
    expect(() => encodeSequence({ modality: Modality.Visual, dims: [3, 10], data }, "x")).toThrow(DimMismatchError);
  });

  it("rejects wrong skeleton layout", () => {
    const data = new Float32Array(3 * 23 * 3);
    expect(() => encodeSequence({ modality: Modality.Skeleton, dims: [3, 23, 3], data }, "x")).toThrow(
      DimMismatchError,
    );
  });

  it("rejects non-finite values", () => {
    const seq = visualSeq(1);
    seq.data[7] = NaN;
    expect(() => encodeSequence(seq, "x")).toThrow(InvalidValueError);
  });

  it("rejects bad magic and truncation", () => {
    const good = encodeSequence(visualSeq(2), "x");
    const bad = Buffer.from(good);
    bad.write("JUNK", 0, "ascii");
    expect(() => decodeSequence(bad, "x")).toThrow(BadMagicError);
    expect(() => decodeSequence(good.subarray(0, good.length - 9), "x")).toThrow(TruncatedFileError);
    expect(() => decodeSequence(good.subarray(0, 6), "x")).toThrow(TruncatedFileError);
  });
});
