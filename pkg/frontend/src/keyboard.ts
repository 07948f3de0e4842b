/**
 * Keyboard-to-command mapper for teach-mode driving.
 *
 * Key chords set a target for surge (W/S, up/down arrows) and yaw
 * (A/D, left/right arrows); the emitted command ramps linearly toward the
 * target while a key is held and decays linearly to zero after release.
 * Low-thrust plants respond badly to bang-bang inputs, hence the ramp.
 *
 * The mapper is sampled with poll(nowMs): state integrates on every call,
 * but a command is emitted at most sendHz times per second no matter how
 * fast key events or polls arrive.
 */

export interface MapperConfig {
  uxStep: number;       // commanded |ux| at full ramp
  upsiStep: number;     // commanded |upsi| at full ramp
  rampSeconds: number;  // zero to full while held
  decaySeconds: number; // full to zero after release
  sendHz: number;
}

export const DEFAULT_MAPPER: MapperConfig = {
  uxStep: 0.8,
  upsiStep: 0.6,
  rampSeconds: 0.4,
  decaySeconds: 0.3,
  sendHz: 20,
};

const FORWARD = ["w", "arrowup"];
const BACK = ["s", "arrowdown"];
const LEFT = ["a", "arrowleft"];   // positive yaw (counter-clockwise)
const RIGHT = ["d", "arrowright"];

const ALL_KEYS = new Set([...FORWARD, ...BACK, ...LEFT, ...RIGHT]);

/** Move value toward target by at most rate*dt, without overshoot. */
function approach(value: number, target: number, rate: number, dt: number): number {
  const step = rate * dt;
  if (value < target) return Math.min(value + step, target);
  if (value > target) return Math.max(value - step, target);
  return value;
}

export class KeyboardMapper {
  private readonly cfg: MapperConfig;
  private readonly pressed = new Set<string>();
  private ux = 0;
  private upsi = 0;
  private lastPollMs: number | null = null;
  private lastSentMs: number | null = null;

  constructor(cfg: Partial<MapperConfig> = {}) {
    this.cfg = { ...DEFAULT_MAPPER, ...cfg };
  }

  /** Feed a key event; returns true when the key belongs to the mapper. */
  keyEvent(key: string, down: boolean): boolean {
    const k = key.toLowerCase();
    if (!ALL_KEYS.has(k)) return false;
    if (down) this.pressed.add(k);
    else this.pressed.delete(k);
    return true;
  }

  releaseAll(): void {
    this.pressed.clear();
  }

  private direction(positive: string[], negative: string[]): number {
    const pos = positive.some((k) => this.pressed.has(k)) ? 1 : 0;
    const neg = negative.some((k) => this.pressed.has(k)) ? 1 : 0;
    return pos - neg; // opposing chord cancels
  }

  /**
   * Advance the ramp/decay to nowMs and return the command to send, or
   * null while inside the send-rate window. Time must be monotone.
   */
  poll(nowMs: number): [number, number, number] | null {
    const dt = this.lastPollMs === null ? 0 : Math.max(0, nowMs - this.lastPollMs) / 1000;
    this.lastPollMs = nowMs;

    const dirX = this.direction(FORWARD, BACK);
    const dirPsi = this.direction(LEFT, RIGHT);
    const { uxStep, upsiStep, rampSeconds, decaySeconds } = this.cfg;
    this.ux = approach(this.ux, dirX * uxStep,
      uxStep / (dirX !== 0 ? rampSeconds : decaySeconds), dt);
    this.upsi = approach(this.upsi, dirPsi * upsiStep,
      upsiStep / (dirPsi !== 0 ? rampSeconds : decaySeconds), dt);

    const interval = 1000 / this.cfg.sendHz;
    if (this.lastSentMs !== null && nowMs - this.lastSentMs < interval) {
      return null; // throttled: key events never raise the send rate
    }
    this.lastSentMs = nowMs;
    return [this.ux, 0, this.upsi];
  }
}
