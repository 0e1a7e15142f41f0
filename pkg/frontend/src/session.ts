/**
 * Scripted annotation sessions: the same state machine and preview
 * scheduler the page uses, driven programmatically. Used by the
 * end-to-end harness and by tests with a fake service.
 */

import { PreviewScheduler, type Transport } from "./debounce.js";
import {
  type AnnotatorState,
  type ImageInfo,
  type Side,
  initialState,
  parseRecord,
  previewBody,
  recordLine,
  reduce,
  sameRecord,
} from "./state.js";

export interface ServiceLike {
  listImages(): Promise<ImageInfo[]>;
  preview: Transport;
  putAnnotation(id: string, line: string): Promise<string>;
}

export interface ImagePlan {
  side: Side;
  /** Successive drag positions for the upper handle. */
  topPath: number[];
  /** Successive drag positions for the lower handle. */
  bottomPath: number[];
}

export interface SavedEntry {
  id: string;
  line: string;
}

export interface SessionReport {
  saved: SavedEntry[];
  previewsIssued: number;
}

export interface SessionOptions {
  debounceMs?: number;
  /** Pause between scripted drags, milliseconds. */
  dragGapMs?: number;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

/** Annotate one image: toggle to the planned side, drag, settle, save. */
export async function annotateImage(
  service: ServiceLike,
  state: AnnotatorState,
  info: ImageInfo,
  plan: ImagePlan,
  scheduler: PreviewScheduler,
  dragGapMs = 5,
): Promise<{ state: AnnotatorState; line: string }> {
  state = reduce(state, { kind: "load-image", info });
  while (state.side !== plan.side) {
    state = reduce(state, { kind: "toggle-side" });
  }
  const steps = Math.max(plan.topPath.length, plan.bottomPath.length);
  const [upper, lower] = state.side === "Left" ? (["tl", "bl"] as const) : (["tr", "br"] as const);
  for (let i = 0; i < steps; i++) {
    if (i < plan.topPath.length) {
      state = reduce(state, { kind: "drag", corner: upper, y: plan.topPath[i] });
    }
    if (i < plan.bottomPath.length) {
      state = reduce(state, { kind: "drag", corner: lower, y: plan.bottomPath[i] });
    }
    scheduler.request(previewBody(state));
    if (dragGapMs > 0) await sleep(dragGapMs);
  }
  await scheduler.settle();
  state = reduce(state, { kind: "preview-landed" });

  const line = recordLine(state);
  const echo = await service.putAnnotation(info.id, line);
  // the echo is canonically formatted; values must survive untouched
  if (!sameRecord(parseRecord(echo), parseRecord(line))) {
    throw new Error(`service stored a different record: ${echo} != ${line}`);
  }
  state = reduce(state, { kind: "mark-saved" });
  return { state, line };
}

/** Run over every unannotated image in the sorted listing. */
export async function runSession(
  service: ServiceLike,
  size: number,
  planFor: (info: ImageInfo, index: number) => ImagePlan,
  options: SessionOptions = {},
): Promise<SessionReport> {
  const scheduler = new PreviewScheduler(service.preview, {
    debounceMs: options.debounceMs ?? 100,
  });
  const listing = (await service.listImages())
    .filter((info) => !info.annotated)
    .sort((a, b) => (a.id < b.id ? -1 : a.id > b.id ? 1 : 0));

  let state = initialState(size);
  const saved: SavedEntry[] = [];
  for (let i = 0; i < listing.length; i++) {
    const result = await annotateImage(
      service,
      state,
      listing[i],
      planFor(listing[i], i),
      scheduler,
      options.dragGapMs ?? 5,
    );
    state = result.state;
    saved.push({ id: listing[i].id, line: result.line });
  }
  return { saved, previewsIssued: scheduler.requestsIssued };
}
