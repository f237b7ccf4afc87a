/**
 * Clip and dataset export into the crossfuse interchange format.
 *
 * exportVisual / exportSkeleton handle one clip each. exportManifest walks a
 * split spec, exports every clip through both backends, writes the JSONL
 * manifest the downstream trainer loads, and records per-clip failures in a
 * sidecar instead of aborting the batch. Re-runs skip clips whose outputs
 * already exist and validate, so a crashed batch resumes where it stopped.
 */
import * as fs from "node:fs";
import * as path from "node:path";
import { z } from "zod";
import { Modality, VISUAL_DIM, NUM_JOINTS, writeSequence, readSequence } from "./fseq.js";
import { decodeFrames } from "./video.js";
import { BackendPair, VisualBackend, PoseBackend, BackendError } from "./backends.js";
import { selectTrack, trackToRows } from "./track.js";

export class SplitSpecError extends Error {}

export interface ExportResult {
  tClip: number;
}

export function exportVisual(videoPath: string, outPath: string, backend: VisualBackend): ExportResult {
  const clip = decodeFrames(videoPath);
  const rows = backend.embedClip(clip);
  if (rows.length !== clip.frames.length) {
    throw new BackendError(`${backend.name}: ${rows.length} rows for ${clip.frames.length} frames`);
  }
  const data = new Float32Array(rows.length * VISUAL_DIM);
  rows.forEach((row, t) => {
    if (row.length !== VISUAL_DIM) {
      throw new BackendError(`${backend.name}: frame ${t} row has ${row.length} values, expected ${VISUAL_DIM}`);
    }
    data.set(row, t * VISUAL_DIM);
  });
  writeSequence({ modality: Modality.Visual, dims: [rows.length, VISUAL_DIM], data }, outPath);
  return { tClip: rows.length };
}

export function exportSkeleton(videoPath: string, outPath: string, backend: PoseBackend): ExportResult {
  const clip = decodeFrames(videoPath);
  const clipId = path.parse(videoPath).name;
  const tracks = backend.trackClip(clip);
  const kept = selectTrack(tracks, clipId);
  const data = trackToRows(kept, clip.frames.length);
  writeSequence({ modality: Modality.Skeleton, dims: [clip.frames.length, NUM_JOINTS, 3], data }, outPath);
  return { tClip: clip.frames.length };
}

// ---- dataset manifest ----------------------------------------------------------

const clipSpecSchema = z.object({
  id: z.string().min(1),
  video: z.string().min(1),
  label: z.string().min(1),
  split: z.enum(["train", "val"]),
});

const splitSpecSchema = z.object({
  classes: z.array(z.string().min(1)).min(1),
  clips: z.array(clipSpecSchema).min(1),
});

export type SplitSpec = z.infer<typeof splitSpecSchema>;

export function loadSplitSpec(specPath: string): SplitSpec {
  const raw = fs.readFileSync(specPath, "utf8");
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch (e) {
    throw new SplitSpecError(`${specPath}: not valid JSON: ${(e as Error).message}`);
  }
  const res = splitSpecSchema.safeParse(parsed);
  if (!res.success) {
    throw new SplitSpecError(`${specPath}: ${res.error.issues[0].path.join(".")}: ${res.error.issues[0].message}`);
  }
  const spec = res.data;
  const classSet = new Set(spec.classes);
  if (classSet.size !== spec.classes.length) {
    throw new SplitSpecError(`${specPath}: duplicate class names`);
  }
  const seen = new Set<string>();
  for (const clip of spec.clips) {
    if (!classSet.has(clip.label)) {
      throw new SplitSpecError(`${specPath}: clip ${clip.id}: unknown label ${JSON.stringify(clip.label)}`);
    }
    if (seen.has(clip.id)) {
      throw new SplitSpecError(`${specPath}: duplicate clip id ${clip.id}`);
    }
    seen.add(clip.id);
  }
  return spec;
}

export interface ClipFailure {
  clipId: string;
  stage: "visual" | "skeleton";
  message: string;
}

export interface ManifestReport {
  manifestPath: string;
  sidecarPath: string;
  exported: number;
  skipped: number;
  failures: ClipFailure[];
}

/** Frame count when the file exists and decodes as the wanted modality, else null. */
function validOutput(p: string, modality: Modality): number | null {
  if (!fs.existsSync(p)) return null;
  try {
    const seq = readSequence(p);
    return seq.modality === modality ? seq.dims[0] : null;
  } catch {
    return null;
  }
}

export function exportManifest(
  datasetRoot: string,
  specPath: string,
  outDir: string,
  backends: BackendPair,
  log: (line: string) => void = () => {},
): ManifestReport {
  const spec = loadSplitSpec(specPath);
  fs.mkdirSync(outDir, { recursive: true });
  const failures: ClipFailure[] = [];
  const records: string[] = [];
  let exported = 0;
  let skipped = 0;

  for (const clip of spec.clips) {
    const videoPath = path.resolve(datasetRoot, clip.video);
    const visualName = `${clip.id}_v.fseq`;
    const skeletonName = `${clip.id}_s.fseq`;
    const visualPath = path.join(outDir, visualName);
    const skeletonPath = path.join(outDir, skeletonName);

    let tClip = validOutput(visualPath, Modality.Visual);
    const tSkel = validOutput(skeletonPath, Modality.Skeleton);
    if (tClip !== null && tClip === tSkel) {
      skipped++;
      log(`skip ${clip.id} (already exported, ${tClip} frames)`);
    } else {
      try {
        tClip = exportVisual(videoPath, visualPath, backends.visual).tClip;
      } catch (e) {
        failures.push({ clipId: clip.id, stage: "visual", message: (e as Error).message });
        log(`fail ${clip.id} visual: ${(e as Error).message}`);
        continue;
      }
      try {
        exportSkeleton(videoPath, skeletonPath, backends.pose);
      } catch (e) {
        failures.push({ clipId: clip.id, stage: "skeleton", message: (e as Error).message });
        log(`fail ${clip.id} skeleton: ${(e as Error).message}`);
        fs.rmSync(visualPath, { force: true });
        continue;
      }
      exported++;
      log(`export ${clip.id} (${tClip} frames)`);
    }

    records.push(
      JSON.stringify({
        clip_id: clip.id,
        label_id: spec.classes.indexOf(clip.label),
        label_name: clip.label,
        split: clip.split,
        t_clip: tClip,
        visual_path: visualName,
        skeleton_path: skeletonName,
      }),
    );
  }

  const header = JSON.stringify({ num_classes: spec.classes.length, class_names: spec.classes });
  const manifestPath = path.join(outDir, "manifest.jsonl");
  fs.writeFileSync(manifestPath, [header, ...records].join("\n") + "\n");
  const sidecarPath = path.join(outDir, "failures.json");
  fs.writeFileSync(sidecarPath, JSON.stringify(failures, null, 2) + "\n");
  return { manifestPath, sidecarPath, exported, skipped, failures };
}
