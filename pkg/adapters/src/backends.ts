/**
 * Extractor backends. A visual backend turns a clip into one 1408-d vector
 * per frame; a pose backend turns a clip into per-person tracks of 24-joint
 * skeletons with projected boxes.
 *
 * The real backends drive external pretrained systems (V-JEPA 2 for visual,
 * CoMotion for pose) through a runner executable, because the weights and
 * licensed body-model assets cannot ship with this package. Without a
 * configured runner they fail with MissingAssetsError and a setup hint.
 *
 * The stub backends synthesize both outputs deterministically from frame
 * bytes. They exist so the export pipeline, the file format, and the
 * manifest builder can be exercised end to end on any machine.
 */
import * as fs from "node:fs";
import { spawnSync } from "node:child_process";
import { VISUAL_DIM, NUM_JOINTS } from "./fseq.js";
import { FrameClip } from "./video.js";

export class MissingAssetsError extends Error {}
export class BackendError extends Error {}

export interface Bbox {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface PoseDetection {
  /** 24 joints x 3 coords, row-major, camera space; pelvis NOT re-rooted here */
  joints: Float32Array;
  /** projected image-plane box of the person */
  bbox: Bbox;
}

export interface PoseTrack {
  trackId: number;
  /** frame index -> detection; absent frames simply missing */
  detections: Map<number, PoseDetection>;
}

export interface VisualBackend {
  name: string;
  /** one VISUAL_DIM row per frame */
  embedClip(clip: FrameClip): Float32Array[];
}

export interface PoseBackend {
  name: string;
  trackClip(clip: FrameClip): PoseTrack[];
}

// ---- deterministic stub ------------------------------------------------------

/** FNV-1a over bytes, 64-bit via BigInt */
function fnv1a64(bytes: Uint8Array, seed: bigint): bigint {
  let h = 0xcbf29ce484222325n ^ seed;
  for (let i = 0; i < bytes.length; i++) {
    h ^= BigInt(bytes[i]);
    h = (h * 0x100000001b3n) & 0xffffffffffffffffn;
  }
  return h;
}

/** splitmix64 stream from a 64-bit state */
function makeRng(state: bigint): () => number {
  let s = state;
  return () => {
    s = (s + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn;
    let z = s;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn;
    z = z ^ (z >> 31n);
    // top 53 bits -> [0, 1)
    return Number(z >> 11n) / 2 ** 53;
  };
}

function lumaStats(frame: Uint8Array): { mean: number; variance: number } {
  let sum = 0;
  for (let i = 0; i < frame.length; i++) sum += frame[i];
  const mean = sum / frame.length;
  let varSum = 0;
  for (let i = 0; i < frame.length; i++) {
    const d = frame[i] - mean;
    varSum += d * d;
  }
  return { mean, variance: varSum / frame.length };
}

export function stubVisualBackend(seed = 0): VisualBackend {
  return {
    name: "stub-visual",
    embedClip(clip) {
      const rows: Float32Array[] = [];
      for (let t = 0; t < clip.frames.length; t++) {
        const rng = makeRng(fnv1a64(clip.frames[t], BigInt(seed) ^ (BigInt(t) << 32n)));
        const row = new Float32Array(VISUAL_DIM);
        for (let i = 0; i < VISUAL_DIM; i++) row[i] = 2 * rng() - 1;
        rows.push(row);
      }
      return rows;
    },
  };
}

/**
 * Synthesizes person tracks from frame statistics. A frame with zero luma
 * variance has nothing to detect (uniform image); others carry track 0,
 * and even frames also carry a sparser, smaller track 1 so downstream
 * selection has something to choose between.
 */
export function stubPoseBackend(seed = 0): PoseBackend {
  return {
    name: "stub-pose",
    trackClip(clip) {
      const tracks: PoseTrack[] = [
        { trackId: 0, detections: new Map() },
        { trackId: 1, detections: new Map() },
      ];
      for (let t = 0; t < clip.frames.length; t++) {
        const { mean, variance } = lumaStats(clip.frames[t]);
        if (variance === 0) continue;
        const rng = makeRng(fnv1a64(clip.frames[t], (BigInt(seed) ^ 0x5ce1e70n) + BigInt(t)));
        const base = [mean / 32, mean / 64, 2 + mean / 128];
        const joints = new Float32Array(NUM_JOINTS * 3);
        for (let j = 0; j < NUM_JOINTS; j++) {
          joints[3 * j] = base[0] + 0.3 * (rng() - 0.5);
          joints[3 * j + 1] = base[1] + 0.8 * rng();
          joints[3 * j + 2] = base[2] + 0.3 * (rng() - 0.5);
        }
        tracks[0].detections.set(t, {
          joints,
          bbox: { x: clip.width / 4, y: clip.height / 8, w: clip.width / 2, h: (3 * clip.height) / 4 },
        });
        if (t % 2 === 0) {
          const small = new Float32Array(joints);
          for (let i = 0; i < small.length; i++) small[i] += 1.5;
          tracks[1].detections.set(t, {
            joints: small,
            bbox: { x: 0, y: 0, w: clip.width / 8, h: clip.height / 4 },
          });
        }
      }
      return tracks.filter((tr) => tr.detections.size > 0);
    },
  };
}

// ---- runner-backed real extractors -------------------------------------------

function runRunner(runnerPath: string, clip: FrameClip, hint: string): Buffer {
  if (!fs.existsSync(runnerPath)) {
    throw new MissingAssetsError(`${hint}: runner ${runnerPath} does not exist`);
  }
  const header = `${clip.width} ${clip.height} ${clip.frames.length}\n`;
  const input = Buffer.concat([Buffer.from(header, "ascii"), ...clip.frames.map((f) => Buffer.from(f))]);
  const run = spawnSync(runnerPath, [], { input, maxBuffer: 1 << 30 });
  if (run.error) {
    throw new MissingAssetsError(`${hint}: could not execute runner ${runnerPath}: ${run.error.message}`);
  }
  if (run.status !== 0) {
    throw new BackendError(`${hint}: runner exited ${run.status}: ${run.stderr.toString().trim()}`);
  }
  return run.stdout;
}

/**
 * Per-frame embeddings from a pretrained V-JEPA 2 ViT-g encoder.
 *
 * Contract: the runner at $VJEPA2_RUNNER reads `W H T\n` then T raw luma
 * planes on stdin and writes T*1408 float32 (little-endian) on stdout, one
 * 1408-d vector per frame in inference mode. If the public encoder exposes
 * no per-frame CLS token, the runner must pool patch tokens per frame
 * (mean pooling) and say so in its own docs; this adapter only fixes the
 * output width.
 */
export function vjepa2Backend(runnerPath = process.env.VJEPA2_RUNNER): VisualBackend {
  return {
    name: "vjepa2",
    embedClip(clip) {
      if (!runnerPath) {
        throw new MissingAssetsError(
          "visual encoder not configured: set VJEPA2_RUNNER to an executable wrapping the pretrained encoder",
        );
      }
      const out = runRunner(runnerPath, clip, "visual encoder");
      const t = clip.frames.length;
      if (out.length !== t * VISUAL_DIM * 4) {
        throw new BackendError(`visual encoder: runner wrote ${out.length} bytes, expected ${t * VISUAL_DIM * 4}`);
      }
      const rows: Float32Array[] = [];
      for (let i = 0; i < t; i++) {
        const row = new Float32Array(VISUAL_DIM);
        for (let j = 0; j < VISUAL_DIM; j++) row[j] = out.readFloatLE(4 * (i * VISUAL_DIM + j));
        rows.push(row);
      }
      return rows;
    },
  };
}

/**
 * Multi-person 3D tracks from a pretrained CoMotion tracker plus body-model
 * decode. Same stdin contract as the visual runner; stdout is JSON:
 * [{"trackId": n, "detections": {"<frame>": {"joints": [72 floats], "bbox": [x,y,w,h]}}}]
 */
export function comotionBackend(runnerPath = process.env.COMOTION_RUNNER): PoseBackend {
  return {
    name: "comotion",
    trackClip(clip) {
      if (!runnerPath) {
        throw new MissingAssetsError(
          "pose tracker not configured: set COMOTION_RUNNER to an executable wrapping the pretrained tracker",
        );
      }
      const out = runRunner(runnerPath, clip, "pose tracker");
      let parsed: { trackId: number; detections: Record<string, { joints: number[]; bbox: number[] }> }[];
      try {
        parsed = JSON.parse(out.toString("utf8"));
      } catch (e) {
        throw new BackendError(`pose tracker: runner wrote invalid JSON: ${(e as Error).message}`);
      }
      return parsed.map((tr) => {
        const detections = new Map<number, PoseDetection>();
        for (const [frame, det] of Object.entries(tr.detections)) {
          if (det.joints.length !== NUM_JOINTS * 3) {
            throw new BackendError(`pose tracker: track ${tr.trackId} frame ${frame}: ${det.joints.length} joint values`);
          }
          detections.set(parseInt(frame, 10), {
            joints: Float32Array.from(det.joints),
            bbox: { x: det.bbox[0], y: det.bbox[1], w: det.bbox[2], h: det.bbox[3] },
          });
        }
        return { trackId: tr.trackId, detections };
      });
    },
  };
}

export interface BackendPair {
  visual: VisualBackend;
  pose: PoseBackend;
}

export function resolveBackends(kind: string): BackendPair {
  if (kind === "stub") return { visual: stubVisualBackend(), pose: stubPoseBackend() };
  if (kind === "pretrained") return { visual: vjepa2Backend(), pose: comotionBackend() };
  throw new BackendError(`unknown backend kind ${JSON.stringify(kind)} (stub | pretrained)`);
}
