import { describe, expect, it } from "vitest";

import { DEFAULT_MAPPER, KeyboardMapper } from "../src/keyboard.js";

/** Poll every stepMs from startMs to endMs, collecting emitted commands. */
function drive(
  mapper: KeyboardMapper,
  startMs: number,
  endMs: number,
  stepMs: number,
): Array<{ at: number; u: [number, number, number] }> {
  const sent: Array<{ at: number; u: [number, number, number] }> = [];
  for (let now = startMs; now <= endMs; now += stepMs) {
    const u = mapper.poll(now);
    if (u !== null) sent.push({ at: now, u });
  }
  return sent;
}

describe("chords", () => {
  it("no keys gives the zero command", () => {
    const mapper = new KeyboardMapper();
    expect(mapper.poll(0)).toEqual([0, 0, 0]);
  });

  it("forward only drives ux positive, upsi zero", () => {
    const mapper = new KeyboardMapper();
    mapper.keyEvent("w", true);
    const sent = drive(mapper, 0, 1000, 50);
    const last = sent[sent.length - 1].u;
    expect(last[0]).toBeGreaterThan(0);
    expect(last[1]).toBe(0);
    expect(last[2]).toBe(0);
  });

  it("uy is never commanded", () => {
    const mapper = new KeyboardMapper();
    for (const k of ["w", "a", "s", "d"]) mapper.keyEvent(k, true);
    for (const { u } of drive(mapper, 0, 2000, 50)) {
      expect(u[1]).toBe(0);
    }
  });

  it("arrow keys alias WASD and opposing keys cancel", () => {
    const mapper = new KeyboardMapper();
    mapper.keyEvent("ArrowUp", true);
    mapper.keyEvent("ArrowDown", true);
    const sent = drive(mapper, 0, 500, 50);
    for (const { u } of sent) expect(u[0]).toBe(0);
    expect(mapper.keyEvent("x", true)).toBe(false);
    expect(mapper.keyEvent("ArrowLeft", true)).toBe(true);
  });
});

describe("ramp profile", () => {
  it("held forward+left ramps monotonically to the maxima, then holds", () => {
    const mapper = new KeyboardMapper();
    mapper.keyEvent("w", true);
    mapper.keyEvent("a", true);
    const sent = drive(mapper, 0, 1000, 50);

    for (let i = 1; i < sent.length; i += 1) {
      expect(sent[i].u[0]).toBeGreaterThanOrEqual(sent[i - 1].u[0]);
      expect(sent[i].u[2]).toBeGreaterThanOrEqual(sent[i - 1].u[2]);
    }
    const last = sent[sent.length - 1].u;
    expect(last[0]).toBe(DEFAULT_MAPPER.uxStep);
    expect(last[2]).toBe(DEFAULT_MAPPER.upsiStep);

    // at the ramp deadline the command has reached the configured max
    const atRamp = sent.find((s) => s.at >= DEFAULT_MAPPER.rampSeconds * 1000);
    expect(atRamp).toBeDefined();
    expect(atRamp!.u[0]).toBeCloseTo(DEFAULT_MAPPER.uxStep, 12);
  });

  it("ramp duration is configurable", () => {
    const mapper = new KeyboardMapper({ rampSeconds: 1.0 });
    mapper.keyEvent("w", true);
    const sent = drive(mapper, 0, 500, 50);
    const last = sent[sent.length - 1].u;
    // halfway through a 1 s ramp: half thrust
    expect(last[0]).toBeCloseTo(DEFAULT_MAPPER.uxStep / 2, 10);
  });
});

describe("release decay", () => {
  it("decays to exactly zero within decaySeconds of release", () => {
    const mapper = new KeyboardMapper();
    mapper.keyEvent("w", true);
    mapper.keyEvent("a", true);
    drive(mapper, 0, 1000, 50); // at full command now
    mapper.keyEvent("w", false);
    mapper.keyEvent("a", false);

    const sent = drive(mapper, 1050, 1050 + DEFAULT_MAPPER.decaySeconds * 1000, 50);
    const last = sent[sent.length - 1].u;
    expect(last).toEqual([0, 0, 0]);

    // and it stays zero
    expect(mapper.poll(3000)).toEqual([0, 0, 0]);
  });

  it("a fresh press during decay ramps back up", () => {
    const mapper = new KeyboardMapper();
    mapper.keyEvent("w", true);
    drive(mapper, 0, 1000, 50);
    mapper.keyEvent("w", false);
    drive(mapper, 1050, 1150, 50); // partial decay
    const mid = mapper.poll(1200)!;
    expect(mid[0]).toBeGreaterThan(0);
    expect(mid[0]).toBeLessThan(DEFAULT_MAPPER.uxStep);
    mapper.keyEvent("w", true);
    const sent = drive(mapper, 1250, 2250, 50);
    expect(sent[sent.length - 1].u[0]).toBe(DEFAULT_MAPPER.uxStep);
  });

  it("releaseAll drops every held key", () => {
    const mapper = new KeyboardMapper();
    mapper.keyEvent("w", true);
    mapper.keyEvent("a", true);
    drive(mapper, 0, 1000, 50);
    mapper.releaseAll();
    const sent = drive(mapper, 1050, 1400, 50);
    expect(sent[sent.length - 1].u).toEqual([0, 0, 0]);
  });
});

describe("send throttle", () => {
  it("emits at most sendHz commands per second at any poll rate", () => {
    const mapper = new KeyboardMapper();
    mapper.keyEvent("w", true);
    const sent = drive(mapper, 0, 1000, 1); // 1 kHz polling
    expect(sent.length).toBeLessThanOrEqual(DEFAULT_MAPPER.sendHz + 1);
    expect(sent.length).toBeGreaterThanOrEqual(DEFAULT_MAPPER.sendHz - 1);
  });

  it("key-event storms do not raise the send rate", () => {
    const mapper = new KeyboardMapper();
    const sent: Array<[number, number, number]> = [];
    for (let now = 0; now <= 1000; now += 1) {
      mapper.keyEvent("w", now % 2 === 0); // 1 kHz press/release chatter
      const u = mapper.poll(now);
      if (u !== null) sent.push(u);
    }
    expect(sent.length).toBeLessThanOrEqual(DEFAULT_MAPPER.sendHz + 1);
  });

  it("state keeps integrating between sends", () => {
    const mapper = new KeyboardMapper();
    mapper.keyEvent("w", true);
    mapper.poll(0);
    for (let now = 1; now < 50; now += 1) {
      expect(mapper.poll(now)).toBeNull(); // inside the throttle window
    }
    const u = mapper.poll(50)!;
    // 50 ms of a 0.4 s ramp to 0.8
    expect(u[0]).toBeCloseTo(DEFAULT_MAPPER.uxStep * (0.05 / DEFAULT_MAPPER.rampSeconds), 10);
  });
});
