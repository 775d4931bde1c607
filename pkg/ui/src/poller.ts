/** Fixed-interval polling with per-poller overlap coalescing: if a tick's
 * work is still in flight when the next tick fires, the new tick is
 * skipped, so at most one request per endpoint is outstanding.
 */

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;

  constructor(
    private readonly task: () => Promise<void>,
    private readonly intervalMs: number,
    private readonly isActive: () => boolean = () => true,
  ) {}

  /** Start ticking; also runs the task once immediately. */
  start(): void {
    if (this.timer !== null) return;
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  get running(): boolean {
    return this.timer !== null;
  }

  private async tick(): Promise<void> {
    if (this.inFlight || !this.isActive()) return;
    this.inFlight = true;
    try {
      await this.task();
    } finally {
      this.inFlight = false;
    }
  }
}
