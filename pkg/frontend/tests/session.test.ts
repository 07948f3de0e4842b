import { describe, expect, it } from "vitest";

import { decodeMessage, Message } from "../src/protocol.js";
import { SocketCallbacks, TeleopSession } from "../src/session.js";

/** Scriptable server end: captures sends, lets tests inject replies. */
class FakeSocket {
  sent: Message[] = [];
  closed = false;
  cb!: SocketCallbacks;

  send(text: string): void {
    this.sent.push(decodeMessage(text)); // whatever leaves must be schema-valid
  }
  close(): void {
    this.closed = true;
  }
  reply(msg: object): void {
    this.cb.onMessage(JSON.stringify(msg));
  }
}

interface Scheduled {
  fn: () => void;
  ms: number;
}

function makeSession(): { session: TeleopSession; sockets: FakeSocket[]; timers: Scheduled[] } {
  const sockets: FakeSocket[] = [];
  const timers: Scheduled[] = [];
  const session = new TeleopSession("ws://127.0.0.1:8765/", {
    openSocket: (_url, cb) => {
      const sock = new FakeSocket();
      sock.cb = cb;
      sockets.push(sock);
      queueMicrotask(() => cb.onOpen());
      return sock;
    },
    schedule: (fn, ms) => timers.push({ fn, ms }),
    reconnectMs: 250,
  });
  return { session, sockets, timers };
}

async function settled(): Promise<void> {
  await Promise.resolve();
}

describe("connection lifecycle", () => {
  it("tracks connecting, open, closed and schedules a reconnect", async () => {
    const { session, sockets, timers } = makeSession();
    expect(session.status).toBe("closed");
    session.connect();
    expect(session.status).toBe("connecting");
    await settled();
    expect(session.status).toBe("open");
    expect(session.banner()).toBeNull();

    sockets[0].cb.onClose();
    expect(session.status).toBe("closed");
    expect(session.banner()).toMatch(/disconnected/);
    expect(timers).toHaveLength(1);
    expect(timers[0].ms).toBe(250);

    timers[0].fn(); // the scheduled retry dials a fresh socket
    await settled();
    expect(sockets).toHaveLength(2);
    expect(session.status).toBe("open");
  });

  it("a reconnect that raced a manual connect does not double-dial", async () => {
    const { session, sockets, timers } = makeSession();
    session.connect();
    await settled();
    sockets[0].cb.onClose();
    session.connect(); // user-driven retry before the timer fires
    await settled();
    expect(sockets).toHaveLength(2);
    timers[0].fn(); // stale timer: session is open again, must be a no-op
    expect(sockets).toHaveLength(2);
  });

  it("drops outbound messages while not open", () => {
    const { session } = makeSession();
    expect(session.startRecording()).toBe(false);
    expect(session.switchMode("teach")).toBe(false);
  });
});

describe("mode mirrors the runtime", () => {
  async function openPair(): Promise<{ session: TeleopSession; sock: FakeSocket }> {
    const { session, sockets } = makeSession();
    session.connect();
    await settled();
    return { session, sock: sockets[0] };
  }

  it("mode changes only on an acked ModeSwitch", async () => {
    const { session, sock } = await openPair();
    expect(session.mode).toBe("idle");
    session.switchMode("teach");
    expect(session.mode).toBe("idle"); // not yet acked
    sock.reply({ tag: "Ack", code: "mode", text: "teach", t: 0.05 });
    expect(session.mode).toBe("teach");
    expect(sock.sent).toEqual([{ tag: "ModeSwitch", mode: "teach" }]);
  });

  it("an Error leaves the mode untouched", async () => {
    const { session, sock } = await openPair();
    sock.reply({ tag: "Ack", code: "mode", text: "teach" });
    sock.reply({ tag: "Error", code: "bad-mode", text: "nope" });
    expect(session.mode).toBe("teach");
    expect(session.banner()).toMatch(/bad-mode/);
  });

  it("divergence and repeat-done both land in idle", async () => {
    const { session, sock } = await openPair();
    sock.reply({ tag: "Ack", code: "mode", text: "repeat" });
    expect(session.mode).toBe("repeat");
    sock.reply({ tag: "Error", code: "diverged", text: "cross-track 0.6 m" });
    expect(session.mode).toBe("idle");

    sock.reply({ tag: "Ack", code: "mode", text: "repeat" });
    sock.reply({ tag: "Ack", code: "repeat-done" });
    expect(session.mode).toBe("idle");
  });

  it("recording flag follows the recording/stopped acks", async () => {
    const { session, sock } = await openPair();
    sock.reply({ tag: "Ack", code: "mode", text: "teach" });
    session.startRecording();
    expect(session.recording).toBe(false);
    sock.reply({ tag: "Ack", code: "recording" });
    expect(session.recording).toBe(true);
    sock.reply({ tag: "Ack", code: "stopped", text: "42 samples" });
    expect(session.recording).toBe(false);
  });

  it("leaving teach mode clears the recording flag", async () => {
    const { session, sock } = await openPair();
    sock.reply({ tag: "Ack", code: "mode", text: "teach" });
    sock.reply({ tag: "Ack", code: "recording" });
    sock.reply({ tag: "Ack", code: "mode", text: "idle" });
    expect(session.recording).toBe(false);
  });
});

describe("teleop and teach plumbing", () => {
  async function teachPair(): Promise<{ session: TeleopSession; sock: FakeSocket }> {
    const { session, sockets } = makeSession();
    session.connect();
    await settled();
    sockets[0].reply({ tag: "Ack", code: "mode", text: "teach" });
    return { session, sock: sockets[0] };
  }

  it("sends commands only in teach mode", async () => {
    const { session, sock } = await teachPair();
    expect(session.sendCommand([0.4, 0, 0.1])).toBe(true);
    sock.reply({ tag: "Ack", code: "mode", text: "idle" });
    expect(session.sendCommand([0.4, 0, 0.1])).toBe(false);
    expect(sock.sent.filter((m) => m.tag === "Command")).toHaveLength(1);
  });

  it("save validates the name client-side before touching the wire", async () => {
    const { session, sock } = await teachPair();
    expect(session.saveRecording("")).toBe(false);
    expect(session.saveRecording("../escape")).toBe(false);
    expect(session.banner()).toMatch(/letters, digits/);
    expect(sock.sent.filter((m) => m.tag === "TeachControl")).toHaveLength(0);
    expect(session.saveRecording("lap_1")).toBe(true);
  });

  it("repeat without a chosen trajectory is refused locally", async () => {
    const { session, sock } = await teachPair();
    expect(session.switchMode("repeat", "")).toBe(false);
    expect(session.switchMode("repeat")).toBe(false);
    expect(sock.sent.filter((m) => m.tag === "ModeSwitch")).toHaveLength(0);
  });

  it("saved names accumulate, sorted and deduplicated", async () => {
    const { session, sock } = await teachPair();
    sock.reply({ tag: "Ack", code: "saved", text: "zig" });
    sock.reply({ tag: "Ack", code: "saved", text: "arc" });
    sock.reply({ tag: "Ack", code: "saved", text: "zig" });
    expect(session.savedNames).toEqual(["arc", "zig"]);
  });

  it("recorded poses become the reference on save", async () => {
    const { session, sock } = await teachPair();
    sock.reply({ tag: "Ack", code: "recording" });
    sock.reply({
      tag: "StateUpdate", t: 0.0, pose: [1, 2, 0],
      mu: [0, 0, 0, 0, 0, 0], diagSigma: [0, 0, 0, 0, 0, 0],
    });
    sock.reply({
      tag: "StateUpdate", t: 0.05, pose: [1.1, 2.2, 0],
      mu: [0, 0, 0, 0, 0, 0], diagSigma: [0, 0, 0, 0, 0, 0],
    });
    sock.reply({ tag: "Ack", code: "stopped", text: "2 samples" });
    sock.reply({ tag: "Ack", code: "saved", text: "lap" });
    expect(session.reference).toEqual([
      { x: 1, y: 2 },
      { x: 1.1, y: 2.2 },
    ]);
    // entering repeat starts the live layer fresh
    expect(session.trace.length).toBe(2);
    sock.reply({ tag: "Ack", code: "mode", text: "repeat" });
    expect(session.trace.length).toBe(0);
  });

  it("every trace point came from a StateUpdate", async () => {
    const { session, sock } = await teachPair();
    expect(session.trace.length).toBe(0);
    sock.reply({ tag: "Ack", code: "recording" }); // acks add nothing
    expect(session.trace.length).toBe(0);
    sock.reply({
      tag: "StateUpdate", t: 0.0, pose: [3, 4, 1],
      mu: [0, 0, 0, 0, 0, 0], diagSigma: [0, 0, 0, 0, 0, 0],
    });
    expect(session.trace.length).toBe(1);
    expect(session.trace.at(0)).toEqual({ x: 3, y: 4 });
  });

  it("malformed server frames surface without killing the session", async () => {
    const { session, sock } = await teachPair();
    session.handleText("garbage");
    expect(session.banner()).toMatch(/bad server message/);
    sock.reply({
      tag: "StateUpdate", t: 0.0, pose: [0, 0, 0],
      mu: [0, 0, 0, 0, 0, 0], diagSigma: [0, 0, 0, 0, 0, 0],
    });
    expect(session.trace.length).toBe(1);
  });

  it("readout reports mode, time and velocity uncertainty", async () => {
    const { session, sock } = await teachPair();
    sock.reply({
      tag: "StateUpdate", t: 1.5, pose: [0, 0, 0],
      mu: [0, 0, 0, 0, 0, 0], diagSigma: [4e-6, 9e-6, 0, 0, 0, 0],
    });
    const line = session.readout();
    expect(line).toContain("mode teach");
    expect(line).toContain("t 1.50 s");
    expect(line).toContain("sigma_v 3.61e-3");
  });
});
