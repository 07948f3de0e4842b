/**
 * Client-side session state for the teleop panel.
 *
 * Holds exactly what the panel renders: connection status, the mode the
 * runtime last acknowledged, the recording flag, saved trajectory names,
 * and the live pose trace. Every pose in the trace came from a received
 * StateUpdate; mode only changes when the runtime acks a switch, so the
 * panel can never drift ahead of the server.
 *
 * The socket is injected as a factory so the browser passes WebSocket and
 * tests pass a stub. On close the session schedules a reconnect.
 */

import {
  Ack,
  Command,
  decodeMessage,
  encodeMessage,
  ErrorMessage,
  Message,
  Mode,
  StateUpdate,
} from "./protocol.js";
import { TraceBuffer, TracePoint } from "./trace.js";

export type Status = "connecting" | "open" | "closed";

export interface SocketLike {
  send(text: string): void;
  close(): void;
}

export interface SocketCallbacks {
  onOpen(): void;
  onMessage(text: string): void;
  onClose(): void;
}

export interface SessionOptions {
  openSocket(url: string, cb: SocketCallbacks): SocketLike;
  /** Defaults to setTimeout; injected so tests control time. */
  schedule?(fn: () => void, ms: number): void;
  reconnectMs?: number;
  traceCapacity?: number;
}

// same rule the runtime applies, checked before a save hits the wire
const NAME_RE = /^[A-Za-z0-9][A-Za-z0-9_-]*$/;

export class TeleopSession {
  status: Status = "closed";
  mode: Mode = "idle";
  recording = false;
  savedNames: string[] = [];
  readonly trace: TraceBuffer;
  /** Frozen copy of the last recording, drawn under the live trace. */
  reference: TracePoint[] | null = null;
  lastUpdate: StateUpdate | null = null;
  lastError: ErrorMessage | null = null;
  /** Client-side validation failures and decode errors, for the banner. */
  localError: string | null = null;

  onChange: (() => void) | null = null;

  private socket: SocketLike | null = null;
  private recorded: TracePoint[] = [];
  private readonly opts: Required<Pick<SessionOptions, "reconnectMs">> & SessionOptions;

  constructor(readonly url: string, options: SessionOptions) {
    this.opts = { reconnectMs: 1000, ...options };
    this.trace = new TraceBuffer(options.traceCapacity ?? undefined);
  }

  connect(): void {
    this.status = "connecting";
    this.changed();
    this.socket = this.opts.openSocket(this.url, {
      onOpen: () => {
        this.status = "open";
        this.localError = null;
        this.changed();
      },
      onMessage: (text) => this.handleText(text),
      onClose: () => {
        this.status = "closed";
        this.socket = null;
        this.changed();
        const schedule = this.opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
        schedule(() => {
          if (this.status === "closed") this.connect();
        }, this.opts.reconnectMs);
      },
    });
  }

  private changed(): void {
    if (this.onChange !== null) this.onChange();
  }

  private send(msg: Message): boolean {
    if (this.socket === null || this.status !== "open") return false;
    this.socket.send(encodeMessage(msg)); // throws on schema violations
    return true;
  }

  // -- outbound ---------------------------------------------------------------

  /** Teleop command; silently dropped unless connected and teaching. */
  sendCommand(u: [number, number, number]): boolean {
    if (this.mode !== "teach") return false;
    const cmd: Command = { tag: "Command", u };
    return this.send(cmd);
  }

  startRecording(): boolean {
    return this.send({ tag: "TeachControl", action: "start" });
  }

  stopRecording(): boolean {
    return this.send({ tag: "TeachControl", action: "stop" });
  }

  /** Returns false (with localError set) when the name is invalid. */
  saveRecording(name: string): boolean {
    if (!NAME_RE.test(name)) {
      this.localError = "trajectory names are letters, digits, '-', '_'";
      this.changed();
      return false;
    }
    return this.send({ tag: "TeachControl", action: "save", name });
  }

  switchMode(mode: Mode, trajectory?: string): boolean {
    if (mode === "repeat" && (trajectory === undefined || trajectory === "")) {
      this.localError = "pick a trajectory to repeat";
      this.changed();
      return false;
    }
    return this.send(
      mode === "repeat"
        ? { tag: "ModeSwitch", mode, trajectory }
        : { tag: "ModeSwitch", mode },
    );
  }

  /** Abort whatever is running: the runtime acks with mode idle. */
  abort(): boolean {
    return this.switchMode("idle");
  }

  // -- inbound ----------------------------------------------------------------

  handleText(text: string): void {
    let msg: Message;
    try {
      msg = decodeMessage(text);
    } catch (exc) {
      this.localError = `bad server message: ${(exc as Error).message}`;
      this.changed();
      return;
    }
    switch (msg.tag) {
      case "StateUpdate":
        this.lastUpdate = msg;
        this.trace.push(msg.pose[0], msg.pose[1]);
        if (this.recording) {
          this.recorded.push({ x: msg.pose[0], y: msg.pose[1] });
        }
        break;
      case "Ack":
        this.handleAck(msg);
        break;
      case "Error":
        this.lastError = msg;
        if (msg.code === "diverged") this.mode = "idle";
        break;
      default:
        // Command/TeachControl/ModeSwitch never flow server to client
        this.localError = `unexpected ${msg.tag} from server`;
        break;
    }
    this.changed();
  }

  private handleAck(ack: Ack): void {
    this.lastError = null;
    switch (ack.code) {
      case "recording":
        this.recording = true;
        this.recorded = [];
        break;
      case "stopped":
        this.recording = false;
        break;
      case "saved":
        if (!this.savedNames.includes(ack.text)) {
          this.savedNames.push(ack.text);
          this.savedNames.sort();
        }
        this.reference = this.recorded.slice();
        break;
      case "mode":
        this.mode = ack.text as Mode;
        this.recording = this.recording && this.mode === "teach";
        if (this.mode === "repeat") {
          this.trace.clear(); // fresh estimate layer over the reference
        }
        break;
      case "repeat-done":
        this.mode = "idle";
        break;
      default:
        break; // informational acks ("command" clamp notices etc.)
    }
  }

  /** One-line readout for the panel footer. */
  readout(): string {
    const parts = [`mode ${this.mode}`];
    if (this.recording) parts.push("recording");
    if (this.lastUpdate !== null) {
      const s = this.lastUpdate.diagSigma;
      const vel = Math.sqrt(Math.max(s[0], 0) + Math.max(s[1], 0));
      parts.push(`t ${this.lastUpdate.t.toFixed(2)} s`);
      parts.push(`sigma_v ${vel.toExponential(2)}`);
    }
    return parts.join(" | ");
  }

  banner(): string | null {
    if (this.status !== "open") return `disconnected: retrying ${this.url}`;
    if (this.localError !== null) return this.localError;
    if (this.lastError !== null) {
      return `${this.lastError.code}: ${this.lastError.text}`;
    }
    return null;
  }
}
