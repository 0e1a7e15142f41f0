/**
 * Trailing-edge debouncer for live preview requests.
 *
 * Dragging a handle produces a burst of positions; the scheduler sends
 * at most one request per quiet period and keeps at most one request
 * in flight. When positions change while a request is flying, the
 * newest body is sent as soon as the flight lands and every stale
 * response is dropped: the preview pane only ever shows the latest
 * requested state.
 */

export type Transport = (body: string) => Promise<Uint8Array>;

export interface PreviewResult {
  body: string;
  bytes: Uint8Array;
}

type TimerHandle = unknown;

export interface SchedulerOptions {
  /** Quiet period before a request fires; must be at least 80. */
  debounceMs?: number;
  setTimer?: (fn: () => void, ms: number) => TimerHandle;
  clearTimer?: (handle: TimerHandle) => void;
  onResult?: (result: PreviewResult) => void;
  onError?: (body: string, error: unknown) => void;
}

export const MIN_DEBOUNCE_MS = 80;

export class PreviewScheduler {
  readonly debounceMs: number;
  private readonly transport: Transport;
  private readonly setTimer: (fn: () => void, ms: number) => TimerHandle;
  private readonly clearTimer: (handle: TimerHandle) => void;
  private readonly onResult?: (result: PreviewResult) => void;
  private readonly onError?: (body: string, error: unknown) => void;

  private latest: string | null = null;
  private timer: TimerHandle | null = null;
  private inFlight: string | null = null;
  private issued = 0;

  constructor(transport: Transport, options: SchedulerOptions = {}) {
    const ms = options.debounceMs ?? 100;
    if (ms < MIN_DEBOUNCE_MS) {
      throw new RangeError(`debounce must be >= ${MIN_DEBOUNCE_MS} ms, got ${ms}`);
    }
    this.debounceMs = ms;
    this.transport = transport;
    this.setTimer = options.setTimer ?? ((fn, t) => setTimeout(fn, t));
    this.clearTimer = options.clearTimer ?? ((h) => clearTimeout(h as number));
    this.onResult = options.onResult;
    this.onError = options.onError;
  }

  /** Requests actually handed to the transport so far. */
  get requestsIssued(): number {
    return this.issued;
  }

  /** Record the newest desired preview; (re)start the quiet period. */
  request(body: string): void {
    this.latest = body;
    if (this.timer !== null) this.clearTimer(this.timer);
    this.timer = this.setTimer(() => this.fire(), this.debounceMs);
  }

  idle(): boolean {
    return this.timer === null && this.inFlight === null;
  }

  /** Resolve once no request is pending or flying (real-timer polling). */
  async settle(pollMs = 10): Promise<void> {
    while (!this.idle()) {
      await new Promise((resolve) => setTimeout(resolve, pollMs));
    }
  }

  private fire(): void {
    this.timer = null;
    if (this.inFlight !== null || this.latest === null) return;
    this.send(this.latest);
  }

  private send(body: string): void {
    this.inFlight = body;
    this.issued += 1;
    this.transport(body).then(
      (bytes) => this.landed(body, bytes, null),
      (error) => this.landed(body, null, error),
    );
  }

  private landed(body: string, bytes: Uint8Array | null, error: unknown): void {
    this.inFlight = null;
    if (this.latest !== null && this.latest !== body) {
      this.send(this.latest); // newer state queued up while flying
      return;
    }
    if (error !== null) this.onError?.(body, error);
    else if (bytes !== null) this.onResult?.({ body, bytes });
  }
}
