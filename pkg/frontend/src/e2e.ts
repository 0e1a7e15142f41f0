/**
 * Headless end-to-end session against a running annotation service.
 *
 *     node dist/e2e.js --base http://127.0.0.1:8111 --size 224
 *
 * Annotates every unannotated image through the real state machine,
 * scheduler, and HTTP client, alternating sides and dragging each
 * handle through a 20-position burst. Prints one `saved <record>` line
 * per image, verifies that a zero-displacement preview is byte-equal
 * to the served image, and exits nonzero on any mismatch.
 */

import { Client } from "./client.js";
import { runSession } from "./session.js";
import type { ImagePlan, ServiceLike } from "./session.js";
import type { ImageInfo } from "./state.js";

function arg(name: string, fallback?: string): string {
  const i = process.argv.indexOf(`--${name}`);
  if (i >= 0 && i + 1 < process.argv.length) return process.argv[i + 1];
  if (fallback !== undefined) return fallback;
  throw new Error(`missing required --${name}`);
}

function ramp(target: number, steps: number): number[] {
  const path: number[] = [];
  for (let i = 1; i <= steps; i++) path.push((target * i) / steps);
  return path;
}

function planFor(info: ImageInfo, index: number): ImagePlan {
  return {
    side: index % 2 === 0 ? "Left" : "Right",
    topPath: ramp(3 + 2 * index, 20),
    bottomPath: ramp(-(2 + index), 20),
  };
}

function equalBytes(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) if (a[i] !== b[i]) return false;
  return true;
}

async function main(): Promise<number> {
  const base = arg("base");
  const size = Number(arg("size", "224"));
  const client = new Client(base);
  const service: ServiceLike = {
    listImages: () => client.listImages(),
    preview: (body) => client.preview(body),
    putAnnotation: (id, line) => client.putAnnotation(id, line),
  };

  const report = await runSession(service, size, planFor);
  for (const entry of report.saved) {
    console.log(`saved ${entry.line}`);
  }
  console.log(`previews ${report.previewsIssued}`);

  for (const entry of report.saved) {
    const source = await client.getImage(entry.id);
    const preview = await client.preview(`${entry.id} Left 0 0 0 0`);
    if (!equalBytes(source, preview)) {
      console.error(`zero-displacement preview differs from source for ${entry.id}`);
      return 1;
    }
  }
  console.log("identity ok");
  return 0;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(err);
    process.exit(1);
  },
);
