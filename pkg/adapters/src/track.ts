/**
 * Reduction of multi-person tracker output to the single skeleton stream the
 * downstream format carries. Policy: keep the track detected in the most
 * frames; break ties by the largest mean projected box area, then by the
 * lowest track id so the choice is total. Frames where the kept track is
 * absent become all-zero rows.
 */
import { NUM_JOINTS } from "./fseq.js";
import { PoseTrack } from "./backends.js";

export class NoPersonError extends Error {}

function meanBoxArea(track: PoseTrack): number {
  let sum = 0;
  for (const det of track.detections.values()) sum += det.bbox.w * det.bbox.h;
  return sum / track.detections.size;
}

export function selectTrack(tracks: PoseTrack[], clipId: string): PoseTrack {
  const candidates = tracks.filter((t) => t.detections.size > 0);
  if (candidates.length === 0) {
    throw new NoPersonError(`${clipId}: no person detected in any frame`);
  }
  let best = candidates[0];
  for (const t of candidates.slice(1)) {
    if (t.detections.size !== best.detections.size) {
      if (t.detections.size > best.detections.size) best = t;
    } else if (meanBoxArea(t) !== meanBoxArea(best)) {
      if (meanBoxArea(t) > meanBoxArea(best)) best = t;
    } else if (t.trackId < best.trackId) {
      best = t;
    }
  }
  return best;
}

/** Dense [tClip, 24, 3] rows for one track; absent frames stay zero. */
export function trackToRows(track: PoseTrack, tClip: number): Float32Array {
  const rows = new Float32Array(tClip * NUM_JOINTS * 3);
  for (const [frame, det] of track.detections) {
    if (frame < 0 || frame >= tClip) continue;
    rows.set(det.joints, frame * NUM_JOINTS * 3);
  }
  return rows;
}
