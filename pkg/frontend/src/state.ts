/**
 * Annotation state machine.
 *
 * One image at a time; exactly one side (Left or Right) is active and
 * only that side's two handles can move. Handle offsets are vertical
 * pixel displacements at the working resolution, positive pointing
 * down. The reducer is the only way state changes, and it can never
 * produce a displacement the service would reject: inactive corners
 * stay exactly zero and active offsets are clamped strictly inside
 * half the working height.
 */

export type Side = "Left" | "Right";
export type Corner = "tl" | "tr" | "br" | "bl";

/** Corners each side owns: the upper and lower handle, in that order. */
export const SIDE_CORNERS: Record<Side, [Corner, Corner]> = {
  Left: ["tl", "bl"],
  Right: ["tr", "br"],
};

export interface ImageInfo {
  id: string;
  annotated: boolean;
  width: number;
  height: number;
  side?: Side;
  d?: [number, number, number, number];
}

export interface AnnotatorState {
  imageId: string | null;
  /** Original image dimensions, needed to build a record line. */
  imageWidth: number;
  imageHeight: number;
  /** Working resolution (square) the service warps at. */
  size: number;
  side: Side;
  /** Active side's upper handle offset in working pixels. */
  top: number;
  /** Active side's lower handle offset in working pixels. */
  bottom: number;
  previewFresh: boolean;
  saved: boolean;
  reviewMode: boolean;
}

export type Action =
  | { kind: "load-image"; info: ImageInfo }
  | { kind: "toggle-side" }
  | { kind: "drag"; corner: Corner; y: number }
  | { kind: "suggestion"; side: Side; d: [number, number, number, number] }
  | { kind: "preview-landed" }
  | { kind: "mark-saved" }
  | { kind: "set-review"; on: boolean };

const HALF_MARGIN = 1e-6;

/** Keep an offset strictly inside half the working height. */
export function clampOffset(y: number, size: number): number {
  if (!Number.isFinite(y)) return 0;
  const limit = size / 2 - HALF_MARGIN;
  return Math.min(Math.max(y, -limit), limit);
}

export function initialState(size: number): AnnotatorState {
  if (!(size >= 8)) throw new RangeError(`working size must be >= 8, got ${size}`);
  return {
    imageId: null,
    imageWidth: size,
    imageHeight: size,
    size,
    side: "Left",
    top: 0,
    bottom: 0,
    previewFresh: false,
    saved: false,
    reviewMode: false,
  };
}

export function reduce(state: AnnotatorState, action: Action): AnnotatorState {
  switch (action.kind) {
    case "load-image": {
      const { info } = action;
      const loaded = {
        ...state,
        imageId: info.id,
        imageWidth: info.width,
        imageHeight: info.height,
        side: "Left" as Side,
        top: 0,
        bottom: 0,
        previewFresh: false,
        saved: false,
      };
      if (info.annotated && info.side && info.d) {
        // review mode starts from the stored annotation
        const [upper, lower] = SIDE_CORNERS[info.side];
        loaded.side = info.side;
        loaded.top = clampOffset(info.d[cornerIndex(upper)], state.size);
        loaded.bottom = clampOffset(info.d[cornerIndex(lower)], state.size);
        loaded.saved = true;
      }
      return loaded;
    }
    case "toggle-side":
      // switching sides zeroes the handles that stop being active
      return {
        ...state,
        side: state.side === "Left" ? "Right" : "Left",
        top: 0,
        bottom: 0,
        previewFresh: false,
        saved: false,
      };
    case "drag": {
      const [upper, lower] = SIDE_CORNERS[state.side];
      if (action.corner !== upper && action.corner !== lower) {
        return state; // locked side: dragging its handles does nothing
      }
      const y = clampOffset(action.y, state.size);
      const next = { ...state, previewFresh: false, saved: false };
      if (action.corner === upper) next.top = y;
      else next.bottom = y;
      return next;
    }
    case "suggestion": {
      const [upper, lower] = SIDE_CORNERS[action.side];
      return {
        ...state,
        side: action.side,
        top: clampOffset(action.d[cornerIndex(upper)], state.size),
        bottom: clampOffset(action.d[cornerIndex(lower)], state.size),
        previewFresh: false,
        saved: false,
      };
    }
    case "preview-landed":
      return { ...state, previewFresh: true };
    case "mark-saved":
      return { ...state, saved: true };
    case "set-review":
      return { ...state, reviewMode: action.on };
  }
}

export function cornerIndex(corner: Corner): number {
  return { tl: 0, tr: 1, br: 2, bl: 3 }[corner];
}

/** Four displacements in corner order TL, TR, BR, BL at working resolution. */
export function displacement(state: AnnotatorState): [number, number, number, number] {
  if (state.side === "Left") return [state.top, 0, 0, state.bottom];
  return [0, state.top, state.bottom, 0];
}

/** Body for POST /preview: `id side d0 d1 d2 d3`. */
export function previewBody(state: AnnotatorState): string {
  if (state.imageId === null) throw new Error("no image loaded");
  return `${state.imageId} ${state.side} ${displacement(state).join(" ")}`;
}

/**
 * One manifest record line for PUT /annotations/{id}.
 *
 * Offsets are entered at working resolution; the stored record uses the
 * original resolution, so vertical offsets scale by height ratio.
 */
export function recordLine(state: AnnotatorState): string {
  if (state.imageId === null) throw new Error("no image loaded");
  const factor = state.imageHeight / state.size;
  const d = displacement(state).map((v) => v * factor);
  return `${state.imageId} ${state.side} ${d.join(" ")} ${state.imageWidth} ${state.imageHeight}`;
}

export interface RecordFields {
  id: string;
  side: Side;
  d: [number, number, number, number];
  width: number;
  height: number;
}

/** Parse one manifest record line; the service may format floats differently. */
export function parseRecord(line: string): RecordFields {
  const parts = line.trim().split(/\s+/);
  if (parts.length !== 8) throw new Error(`record needs 8 fields: ${line}`);
  const side = parts[1];
  if (side !== "Left" && side !== "Right") throw new Error(`unknown side ${side}`);
  const nums = parts.slice(2).map(Number);
  if (nums.some((v) => !Number.isFinite(v))) throw new Error(`bad numbers: ${line}`);
  return {
    id: parts[0],
    side,
    d: nums.slice(0, 4) as [number, number, number, number],
    width: nums[4],
    height: nums[5],
  };
}

/** Same annotation content, formatting aside. */
export function sameRecord(a: RecordFields, b: RecordFields): boolean {
  return (
    a.id === b.id &&
    a.side === b.side &&
    a.width === b.width &&
    a.height === b.height &&
    a.d.every((v, i) => v === b.d[i])
  );
}

/** Mirror of the service's preview acceptance rule. */
export function isLegal(
  d: [number, number, number, number],
  side: Side,
  size: number,
): boolean {
  const active = SIDE_CORNERS[side].map(cornerIndex);
  for (let i = 0; i < 4; i++) {
    if (!Number.isFinite(d[i])) return false;
    if (active.includes(i)) {
      if (Math.abs(d[i]) >= size / 2) return false;
    } else if (d[i] !== 0) {
      return false;
    }
  }
  return true;
}

/**
 * Next image to work on after `currentId` in the sorted listing.
 * Annotated images are skipped unless review mode is on. Returns null
 * when nothing is left.
 */
export function nextImage(
  list: ImageInfo[],
  currentId: string | null,
  review: boolean,
): string | null {
  const sorted = [...list].sort((a, b) => (a.id < b.id ? -1 : a.id > b.id ? 1 : 0));
  const start =
    currentId === null ? 0 : sorted.findIndex((e) => e.id === currentId) + 1;
  for (let i = start; i < sorted.length; i++) {
    if (review || !sorted[i].annotated) return sorted[i].id;
  }
  return null;
}
