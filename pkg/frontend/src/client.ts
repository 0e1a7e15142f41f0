/**
 * HTTP client for the annotation service. Text bodies are one field
 * group per line; images are PNG bytes.
 */

import type { ImageInfo, Side } from "./state.js";

export class ServiceError extends Error {
  readonly status: number;
  readonly body: string;

  constructor(status: number, body: string) {
    super(`service replied ${status}: ${body.trim()}`);
    this.status = status;
    this.body = body;
  }

  /** 422 means the payload was out of range or side-inconsistent. */
  get isRangeWarning(): boolean {
    return this.status === 422;
  }
}

export interface Suggestion {
  id: string;
  side: Side;
  d: [number, number, number, number];
}

export class Client {
  private readonly base: string;
  private readonly fetchImpl: typeof fetch;

  constructor(base: string, fetchImpl: typeof fetch = fetch) {
    this.base = base.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl;
  }

  private async call(method: string, path: string, body?: string): Promise<Response> {
    const resp = await this.fetchImpl(this.base + path, { method, body });
    if (!resp.ok) throw new ServiceError(resp.status, await resp.text());
    return resp;
  }

  async listImages(): Promise<ImageInfo[]> {
    const resp = await this.call("GET", "/images");
    const text = await resp.text();
    return text
      .split("\n")
      .filter((line) => line.trim() !== "")
      .map(parseListingLine);
  }

  async getImage(id: string): Promise<Uint8Array> {
    const resp = await this.call("GET", `/images/${encodeURIComponent(id)}`);
    return new Uint8Array(await resp.arrayBuffer());
  }

  async preview(body: string): Promise<Uint8Array> {
    const resp = await this.call("POST", "/preview", body);
    return new Uint8Array(await resp.arrayBuffer());
  }

  async putAnnotation(id: string, line: string): Promise<string> {
    const resp = await this.call("PUT", `/annotations/${encodeURIComponent(id)}`, line);
    return (await resp.text()).trim();
  }

  async getAnnotation(id: string): Promise<string> {
    const resp = await this.call("GET", `/annotations/${encodeURIComponent(id)}`);
    return (await resp.text()).trim();
  }

  async stats(): Promise<string> {
    const resp = await this.call("GET", "/stats");
    return resp.text();
  }

  async predict(id: string): Promise<Suggestion> {
    const resp = await this.call("POST", "/predict", id);
    const parts = (await resp.text()).trim().split(/\s+/);
    if (parts.length !== 6) throw new Error(`bad suggestion: ${parts.join(" ")}`);
    const side = parseSide(parts[1]);
    const d = parts.slice(2).map(Number) as [number, number, number, number];
    if (d.some((v) => !Number.isFinite(v))) {
      throw new Error(`bad suggestion numbers: ${parts.join(" ")}`);
    }
    return { id: parts[0], side, d };
  }
}

function parseSide(raw: string): Side {
  if (raw === "Left" || raw === "Right") return raw;
  throw new Error(`unknown side ${raw}`);
}

export function parseListingLine(line: string): ImageInfo {
  const parts = line.trim().split(/\s+/);
  if (parts.length === 4 && parts[1] === "unannotated") {
    return {
      id: parts[0],
      annotated: false,
      width: Number(parts[2]),
      height: Number(parts[3]),
    };
  }
  if (parts.length === 9 && parts[1] === "annotated") {
    return {
      id: parts[0],
      annotated: true,
      width: Number(parts[2]),
      height: Number(parts[3]),
      side: parseSide(parts[4]),
      d: parts.slice(5).map(Number) as [number, number, number, number],
    };
  }
  throw new Error(`unparseable listing line: ${line}`);
}
