/**
 * End-to-end protocol round trip against the real runtime: spawn the
 * serving CLI, connect the client session over a live WebSocket, and walk
 * teach -> record -> drive -> stop -> save -> repeat -> abort.
 *
 * Ack latency is measured in tick time: each request goes out immediately
 * after a StateUpdate arrives, and the runtime stamps its Ack with the tick
 * that handled the request, so ack.t - update.t bounds the handling delay.
 * Every acked step must land within 2 ticks.
 */

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { createServer } from "node:net";

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { Ack, decodeMessage, Message, StateUpdate } from "../src/protocol.js";
import { SocketCallbacks, SocketLike, TeleopSession } from "../src/session.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const REPO = join(HERE, "..", "..");

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr === null || typeof addr === "string") {
        reject(new Error("no port assigned"));
        return;
      }
      srv.close(() => resolve(addr.port));
    });
    srv.on("error", reject);
  });
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** FIFO of decoded inbound messages with promise-based matching. */
class Inbound {
  private buf: Message[] = [];
  private waiter: (() => void) | null = null;
  errors: Message[] = [];

  push(msg: Message): void {
    if (msg.tag === "Error") this.errors.push(msg);
    this.buf.push(msg);
    if (this.waiter !== null) {
      const w = this.waiter;
      this.waiter = null;
      w();
    }
  }

  clear(): void {
    this.buf = [];
  }

  async next(timeoutMs: number): Promise<Message> {
    const deadline = Date.now() + timeoutMs;
    while (this.buf.length === 0) {
      const left = deadline - Date.now();
      if (left <= 0) throw new Error("timed out waiting for a message");
      await new Promise<void>((resolve) => {
        this.waiter = resolve;
        setTimeout(resolve, left);
      });
    }
    return this.buf.shift()!;
  }

  async nextMatching(
    pred: (m: Message) => boolean,
    timeoutMs = 5000,
  ): Promise<Message> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const msg = await this.next(Math.max(1, deadline - Date.now()));
      if (pred(msg)) return msg;
    }
  }
}

describe("runtime round trip", () => {
  let child: ChildProcess;
  let workdir: string;
  let session: TeleopSession;
  let socket: WebSocket;
  const inbound = new Inbound();
  let dt = 0.01;

  beforeAll(async () => {
    workdir = mkdtempSync(join(tmpdir(), "teleop-roundtrip-"));
    const port = await freePort();
    const config = JSON.parse(
      readFileSync(join(REPO, "configs", "bench.json"), "utf-8"),
    ) as Record<string, unknown>;
    config.port = port;
    config.data_dir = join(workdir, "data");
    dt = config.dt as number;
    const configPath = join(workdir, "bench.json");
    writeFileSync(configPath, JSON.stringify(config, null, 1));

    child = spawn(
      "python3",
      ["-m", "gncbench.cli", "run", "--config", configPath, "--mode", "teach"],
      {
        cwd: REPO,
        env: {
          ...process.env,
          PYTHONPATH: join(REPO, "src"),
          PYTHONUNBUFFERED: "1",
        },
        stdio: ["ignore", "pipe", "pipe"],
      },
    );
    const stderr: string[] = [];
    child.stderr!.on("data", (d: Buffer) => stderr.push(d.toString()));
    await new Promise<void>((resolve, reject) => {
      let out = "";
      const onData = (d: Buffer) => {
        out += d.toString();
        if (out.includes("serving wire protocol")) {
          child.stdout!.off("data", onData);
          resolve();
        }
      };
      child.stdout!.on("data", onData);
      child.on("exit", (code) =>
        reject(new Error(`runtime exited early (${code}): ${stderr.join("")}`)));
      setTimeout(() => reject(new Error("runtime never started serving")), 20_000);
    });

    session = new TeleopSession(`ws://127.0.0.1:${port}/`, {
      openSocket: (url: string, cb: SocketCallbacks): SocketLike => {
        socket = new WebSocket(url);
        socket.on("open", () => cb.onOpen());
        socket.on("message", (data) => {
          const text = data.toString();
          inbound.push(decodeMessage(text)); // server frames must conform
          cb.onMessage(text);
        });
        socket.on("close", () => cb.onClose());
        return {
          send: (text: string) => socket.send(text),
          close: () => socket.close(),
        };
      },
      schedule: () => {}, // no reconnects while the test owns the lifecycle
    });
    session.connect();
    const deadline = Date.now() + 10_000;
    while (session.status !== "open") {
      if (Date.now() > deadline) throw new Error("client never connected");
      await sleep(20);
    }
  }, 60_000);

  afterAll(async () => {
    try {
      socket?.close();
    } catch {
      // already gone
    }
    if (child !== undefined && child.exitCode === null) {
      child.kill("SIGTERM");
      const gone = new Promise<void>((resolve) => child.on("exit", () => resolve()));
      await Promise.race([gone, sleep(3000).then(() => child.kill("SIGKILL"))]);
    }
    rmSync(workdir, { recursive: true, force: true });
  });

  /** Send right after a fresh StateUpdate; the Ack must land within 2 ticks. */
  async function ackedWithinTwoTicks(
    send: () => void,
    pred: (ack: Ack) => boolean,
  ): Promise<Ack> {
    inbound.clear(); // drop stale frames so the baseline update is fresh
    const update = (await inbound.nextMatching(
      (m) => m.tag === "StateUpdate",
    )) as StateUpdate;
    send();
    const ack = (await inbound.nextMatching(
      (m) => m.tag === "Ack" && pred(m as Ack),
    )) as Ack;
    expect(ack.t).toBeDefined();
    const deltaTicks = (ack.t! - update.t) / dt;
    expect(deltaTicks).toBeGreaterThan(0);
    expect(deltaTicks).toBeLessThanOrEqual(2 + 1e-6);
    return ack;
  }

  it("completes record, save, repeat, abort with every Ack within 2 ticks", async () => {
    // the runtime serves in teach mode; mirror it in the client first
    await ackedWithinTwoTicks(
      () => expect(session.switchMode("teach")).toBe(true),
      (ack) => ack.code === "mode" && ack.text === "teach",
    );
    expect(session.mode).toBe("teach");

    await ackedWithinTwoTicks(
      () => expect(session.startRecording()).toBe(true),
      (ack) => ack.code === "recording",
    );
    expect(session.recording).toBe(true);

    // drive gently for ~1.5 s, refreshing well inside the dead-man window
    for (let i = 0; i < 15; i += 1) {
      expect(session.sendCommand([0.5, 0, 0.2])).toBe(true);
      await sleep(100);
    }

    const stopped = await ackedWithinTwoTicks(
      () => expect(session.stopRecording()).toBe(true),
      (ack) => ack.code === "stopped",
    );
    const samples = Number(/(\d+) samples/.exec(stopped.text)?.[1]);
    expect(samples).toBeGreaterThanOrEqual(100);
    expect(session.recording).toBe(false);

    await ackedWithinTwoTicks(
      () => expect(session.saveRecording("lap")).toBe(true),
      (ack) => ack.code === "saved" && ack.text === "lap",
    );
    expect(session.savedNames).toEqual(["lap"]);
    expect(session.reference).not.toBeNull();
    expect(session.reference!.length).toBeGreaterThanOrEqual(2);

    await ackedWithinTwoTicks(
      () => expect(session.switchMode("repeat", "lap")).toBe(true),
      (ack) => ack.code === "mode" && ack.text === "repeat",
    );
    expect(session.mode).toBe("repeat");

    // the tracking loop is live: updates keep streaming while it runs
    for (let i = 0; i < 3; i += 1) {
      await inbound.nextMatching((m) => m.tag === "StateUpdate");
    }
    expect(session.trace.length).toBeGreaterThan(0);

    await ackedWithinTwoTicks(
      () => expect(session.abort()).toBe(true),
      (ack) => ack.code === "mode" && ack.text === "idle",
    );
    expect(session.mode).toBe("idle");

    // a clean run: nothing on the wire ever went wrong
    expect(inbound.errors).toEqual([]);
  }, 60_000);
});
