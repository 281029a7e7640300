/** Live event feed: a long-poll loop over GET /events.
 *
 * The server parks the request until new records exist (or the timeout
 * lapses), so the loop normally runs one cheap request at a time.  On
 * failure it reports the error and retries after a fixed delay; the
 * cursor only advances on successful batches, so nothing is skipped.
 */

import type { ConsoleClient } from "./client.js";
import type { EventBatch } from "./types.js";

export interface FeedOptions {
  /** Server-side long-poll timeout per request (capped by the server). */
  timeoutMs?: number;
  /** Pause between retries after a failed poll. */
  retryDelayMs?: number;
  /** Injectable for tests. */
  sleep?: (ms: number) => Promise<void>;
  /** First record index to request. */
  cursor?: number;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class EventFeed {
  private readonly timeoutMs: number;
  private readonly retryDelayMs: number;
  private readonly sleep: (ms: number) => Promise<void>;
  private cursor: number;
  private running = false;
  private loopDone: Promise<void> = Promise.resolve();

  constructor(
    private readonly client: Pick<ConsoleClient, "pollEvents">,
    private readonly onBatch: (batch: EventBatch) => void,
    private readonly onError: (error: unknown) => void = () => {},
    options: FeedOptions = {},
  ) {
    this.timeoutMs = options.timeoutMs ?? 25_000;
    this.retryDelayMs = options.retryDelayMs ?? 1_000;
    this.sleep = options.sleep ?? defaultSleep;
    this.cursor = options.cursor ?? 0;
  }

  start(): void {
    if (this.running) {
      return;
    }
    this.running = true;
    this.loopDone = this.loop();
  }

  /** Stop after the in-flight poll settles; resolves when the loop exits. */
  async stop(): Promise<void> {
    this.running = false;
    await this.loopDone;
  }

  private async loop(): Promise<void> {
    while (this.running) {
      try {
        const batch = await this.client.pollEvents(this.cursor, this.timeoutMs);
        this.cursor = Math.max(this.cursor, batch.next);
        this.onBatch(batch);
      } catch (error) {
        this.onError(error);
        if (this.running) {
          await this.sleep(this.retryDelayMs);
        }
      }
    }
  }
}
