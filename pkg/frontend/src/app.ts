/**
 * Browser page wiring. All state flows through the reducer; previews go
 * through the debounced scheduler; the service is the only network
 * target.
 *
 * Keyboard shortcuts:
 *   t           toggle active side
 *   ArrowUp / ArrowDown   move the upper handle 1 px (Shift: 5 px)
 *   u / j       move the lower handle 1 px up / down (Shift: 5 px)
 *   g           load the model suggestion
 *   Enter       save the current annotation
 *   n           next image
 *   r           toggle review mode (revisit annotated images)
 */

import { Client, ServiceError } from "./client.js";
import { PreviewScheduler } from "./debounce.js";
import {
  type Action,
  type AnnotatorState,
  type Corner,
  type ImageInfo,
  SIDE_CORNERS,
  initialState,
  nextImage,
  previewBody,
  recordLine,
  reduce,
} from "./state.js";

const WORKING_SIZE = Number(
  new URLSearchParams(window.location.search).get("size") ?? "224",
);

const client = new Client(window.location.origin);

let state: AnnotatorState = initialState(WORKING_SIZE);
let listing: ImageInfo[] = [];

const els = {
  preview: document.getElementById("preview") as HTMLImageElement,
  side: document.getElementById("side") as HTMLButtonElement,
  save: document.getElementById("save") as HTMLButtonElement,
  next: document.getElementById("next") as HTMLButtonElement,
  suggest: document.getElementById("suggest") as HTMLButtonElement,
  review: document.getElementById("review") as HTMLInputElement,
  status: document.getElementById("status") as HTMLElement,
  handleTop: document.getElementById("handle-top") as HTMLElement,
  handleBottom: document.getElementById("handle-bottom") as HTMLElement,
  frame: document.getElementById("frame") as HTMLElement,
};

let previewUrl: string | null = null;

const scheduler = new PreviewScheduler((body) => client.preview(body), {
  debounceMs: 100,
  onResult: ({ bytes }) => {
    if (previewUrl !== null) URL.revokeObjectURL(previewUrl);
    previewUrl = URL.createObjectURL(new Blob([bytes as BlobPart], { type: "image/png" }));
    els.preview.src = previewUrl;
    dispatch({ kind: "preview-landed" });
  },
  onError: (_body, error) => {
    if (error instanceof ServiceError && error.isRangeWarning) {
      setStatus(`out of range: ${error.body.trim()}`, true);
    } else {
      setStatus(String(error), true);
    }
  },
});

function setStatus(text: string, warn = false): void {
  els.status.textContent = text;
  els.status.classList.toggle("warn", warn);
}

function render(): void {
  els.side.textContent = `side: ${state.side} (t)`;
  els.save.disabled = state.imageId === null || state.saved;
  const handleX = state.side === "Left" ? "6%" : "94%";
  for (const [el, offset] of [
    [els.handleTop, state.top],
    [els.handleBottom, state.bottom],
  ] as const) {
    el.style.left = handleX;
    const base = el === els.handleTop ? 0 : 100;
    el.style.top = `calc(${base}% + ${(offset / state.size) * 100}%)`;
  }
  const [d0, d1, d2, d3] =
    state.side === "Left" ? [state.top, 0, 0, state.bottom] : [0, state.top, state.bottom, 0];
  setStatus(
    `${state.imageId ?? "no image"}  d=[${[d0, d1, d2, d3]
      .map((v) => v.toFixed(1))
      .join(", ")}]` + (state.saved ? "  saved" : ""),
  );
}

function dispatch(action: Action): void {
  const before = state;
  state = reduce(state, action);
  if (state === before) return;
  const moved =
    action.kind === "drag" || action.kind === "toggle-side" || action.kind === "suggestion";
  if (moved && state.imageId !== null) {
    scheduler.request(previewBody(state));
  }
  render();
}

async function loadImage(id: string): Promise<void> {
  const info = listing.find((entry) => entry.id === id);
  if (!info) return;
  dispatch({ kind: "load-image", info });
  const bytes = await client.getImage(id);
  if (previewUrl !== null) URL.revokeObjectURL(previewUrl);
  previewUrl = URL.createObjectURL(new Blob([bytes as BlobPart], { type: "image/png" }));
  els.preview.src = previewUrl;
  render();
}

async function refreshListing(): Promise<void> {
  listing = await client.listImages();
}

async function save(): Promise<void> {
  if (state.imageId === null || state.saved) return;
  try {
    await client.putAnnotation(state.imageId, recordLine(state));
    dispatch({ kind: "mark-saved" });
    await refreshListing();
    setStatus(`${state.imageId} saved`);
  } catch (error) {
    if (error instanceof ServiceError && error.isRangeWarning) {
      setStatus(`rejected: ${error.body.trim()}`, true);
    } else {
      setStatus(String(error), true);
    }
  }
}

async function advance(): Promise<void> {
  const id = nextImage(listing, state.imageId, state.reviewMode);
  if (id === null) {
    setStatus("nothing left to annotate");
    return;
  }
  await loadImage(id);
}

async function suggest(): Promise<void> {
  if (state.imageId === null) return;
  try {
    const suggestion = await client.predict(state.imageId);
    dispatch({ kind: "suggestion", side: suggestion.side, d: suggestion.d });
  } catch (error) {
    setStatus(String(error), true);
  }
}

function nudge(which: "top" | "bottom", delta: number): void {
  const [upper, lower] = SIDE_CORNERS[state.side];
  const corner: Corner = which === "top" ? upper : lower;
  const current = which === "top" ? state.top : state.bottom;
  dispatch({ kind: "drag", corner, y: current + delta });
}

function bindHandleDrag(el: HTMLElement, which: "top" | "bottom"): void {
  el.addEventListener("pointerdown", (down) => {
    down.preventDefault();
    el.setPointerCapture(down.pointerId);
    const startY = down.clientY;
    const startOffset = which === "top" ? state.top : state.bottom;
    const scale = state.size / els.frame.getBoundingClientRect().height;
    const move = (ev: PointerEvent) => {
      nudgeTo(which, startOffset + (ev.clientY - startY) * scale);
    };
    const up = () => {
      el.removeEventListener("pointermove", move);
      el.removeEventListener("pointerup", up);
    };
    el.addEventListener("pointermove", move);
    el.addEventListener("pointerup", up);
  });
}

function nudgeTo(which: "top" | "bottom", y: number): void {
  const [upper, lower] = SIDE_CORNERS[state.side];
  dispatch({ kind: "drag", corner: which === "top" ? upper : lower, y });
}

document.addEventListener("keydown", (ev) => {
  const step = ev.shiftKey ? 5 : 1;
  switch (ev.key) {
    case "t":
      dispatch({ kind: "toggle-side" });
      break;
    case "ArrowUp":
      ev.preventDefault();
      nudge("top", -step);
      break;
    case "ArrowDown":
      ev.preventDefault();
      nudge("top", step);
      break;
    case "u":
      nudge("bottom", -step);
      break;
    case "j":
      nudge("bottom", step);
      break;
    case "g":
      void suggest();
      break;
    case "Enter":
      void save();
      break;
    case "n":
      void advance();
      break;
    case "r":
      dispatch({ kind: "set-review", on: !state.reviewMode });
      els.review.checked = state.reviewMode;
      break;
  }
});

els.side.addEventListener("click", () => dispatch({ kind: "toggle-side" }));
els.save.addEventListener("click", () => void save());
els.next.addEventListener("click", () => void advance());
els.suggest.addEventListener("click", () => void suggest());
els.review.addEventListener("change", () =>
  dispatch({ kind: "set-review", on: els.review.checked }),
);
bindHandleDrag(els.handleTop, "top");
bindHandleDrag(els.handleBottom, "bottom");

refreshListing()
  .then(() => advance())
  .catch((error) => setStatus(String(error), true));
