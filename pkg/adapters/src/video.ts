/**
 * Frame access for clips. YUV4MPEG2 (.y4m) decodes natively; anything else
 * is handed to ffmpeg when present. Backends only need luma planes.
 */
import * as fs from "node:fs";
import * as path from "node:path";
import { spawnSync } from "node:child_process";

export class DecodeError extends Error {}

export interface FrameClip {
  width: number;
  height: number;
  /** frames per second */
  fps: number;
  /** one luma plane per frame, width*height bytes each */
  frames: Uint8Array[];
}

/** Parse a YUV4MPEG2 stream. Only the luma plane of each frame is kept. */
export function decodeY4m(raw: Buffer, label: string): FrameClip {
  const headerEnd = raw.indexOf(0x0a);
  if (headerEnd < 0 || raw.toString("ascii", 0, 9) !== "YUV4MPEG2") {
    throw new DecodeError(`${label}: not a YUV4MPEG2 stream`);
  }
  const header = raw.toString("ascii", 0, headerEnd);
  let width = 0;
  let height = 0;
  let fps = 0;
  let chroma = "420";
  for (const tok of header.split(" ").slice(1)) {
    if (tok.startsWith("W")) width = parseInt(tok.slice(1), 10);
    else if (tok.startsWith("H")) height = parseInt(tok.slice(1), 10);
    else if (tok.startsWith("F")) {
      const [num, den] = tok.slice(1).split(":").map((s) => parseInt(s, 10));
      fps = num / den;
    } else if (tok.startsWith("C")) chroma = tok.slice(1);
  }
  if (!width || !height || !fps) {
    throw new DecodeError(`${label}: y4m header missing W/H/F: ${JSON.stringify(header)}`);
  }
  const lumaSize = width * height;
  let chromaSize: number;
  if (chroma.startsWith("420")) chromaSize = 2 * ((width / 2) * (height / 2));
  else if (chroma.startsWith("422")) chromaSize = 2 * ((width / 2) * height);
  else if (chroma.startsWith("444")) chromaSize = 2 * lumaSize;
  else if (chroma === "mono") chromaSize = 0;
  else throw new DecodeError(`${label}: unsupported chroma ${chroma}`);

  const frames: Uint8Array[] = [];
  let off = headerEnd + 1;
  while (off < raw.length) {
    const markEnd = raw.indexOf(0x0a, off);
    if (markEnd < 0 || raw.toString("ascii", off, off + 5) !== "FRAME") {
      throw new DecodeError(`${label}: bad frame marker at byte ${off}`);
    }
    off = markEnd + 1;
    if (off + lumaSize + chromaSize > raw.length) {
      throw new DecodeError(`${label}: truncated frame ${frames.length}`);
    }
    frames.push(new Uint8Array(raw.subarray(off, off + lumaSize)));
    off += lumaSize + chromaSize;
  }
  if (frames.length === 0) {
    throw new DecodeError(`${label}: zero frames`);
  }
  return { width, height, fps, frames };
}

function decodeWithFfmpeg(videoPath: string): FrameClip {
  const probe = spawnSync("ffprobe", [
    "-v", "error",
    "-select_streams", "v:0",
    "-show_entries", "stream=width,height,r_frame_rate",
    "-of", "json",
    videoPath,
  ], { encoding: "utf8" });
  if (probe.error || probe.status !== 0) {
    throw new DecodeError(
      `${videoPath}: no native decoder for this container and ffprobe/ffmpeg unavailable or failed`,
    );
  }
  const stream = JSON.parse(probe.stdout).streams?.[0];
  if (!stream) throw new DecodeError(`${videoPath}: no video stream`);
  const width = stream.width as number;
  const height = stream.height as number;
  const [num, den] = (stream.r_frame_rate as string).split("/").map((s) => parseInt(s, 10));
  const run = spawnSync("ffmpeg", [
    "-v", "error",
    "-i", videoPath,
    "-f", "rawvideo",
    "-pix_fmt", "gray",
    "-",
  ], { maxBuffer: 1 << 30 });
  if (run.error || run.status !== 0) {
    throw new DecodeError(`${videoPath}: ffmpeg decode failed`);
  }
  const lumaSize = width * height;
  const frames: Uint8Array[] = [];
  for (let off = 0; off + lumaSize <= run.stdout.length; off += lumaSize) {
    frames.push(new Uint8Array(run.stdout.subarray(off, off + lumaSize)));
  }
  if (frames.length === 0) throw new DecodeError(`${videoPath}: ffmpeg produced zero frames`);
  return { width, height, fps: num / den, frames };
}

export function decodeFrames(videoPath: string): FrameClip {
  if (!fs.existsSync(videoPath)) {
    const err = new Error(`missing video: ${videoPath}`) as NodeJS.ErrnoException;
    err.code = "ENOENT";
    throw err;
  }
  if (path.extname(videoPath).toLowerCase() === ".y4m") {
    return decodeY4m(fs.readFileSync(videoPath), videoPath);
  }
  return decodeWithFfmpeg(videoPath);
}
