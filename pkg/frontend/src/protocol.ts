/**
 * Wire protocol message layer: tagged JSON, one message per WebSocket text
 * frame. Mirrors the runtime's schema exactly (see docs/protocol.md in the
 * repository root): unknown tags and unknown fields are rejected on both
 * ends, so drift between client and server fails loudly instead of being
 * silently ignored.
 */

export type Mode = "teach" | "repeat" | "idle";
export type TeachAction = "start" | "stop" | "save";

export const MODES: readonly Mode[] = ["teach", "repeat", "idle"];
export const TEACH_ACTIONS: readonly TeachAction[] = ["start", "stop", "save"];

export interface Command {
  tag: "Command";
  u: [number, number, number];
}

export interface StateUpdate {
  tag: "StateUpdate";
  t: number;
  pose: [number, number, number];
  mu: [number, number, number, number, number, number];
  diagSigma: [number, number, number, number, number, number];
}

export interface TeachControl {
  tag: "TeachControl";
  action: TeachAction;
  name?: string; // save only
}

export interface ModeSwitch {
  tag: "ModeSwitch";
  mode: Mode;
  trajectory?: string; // repeat only
}

export interface Ack {
  tag: "Ack";
  code: string;
  text: string;
  t?: number; // tick time of emission, when a runtime replies
}

export interface ErrorMessage {
  tag: "Error";
  code: string;
  text: string;
  t?: number;
}

export type Message =
  | Command
  | StateUpdate
  | TeachControl
  | ModeSwitch
  | Ack
  | ErrorMessage;

export class ProtocolError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ProtocolError";
  }
}

function finiteVector(tag: string, field: string, value: unknown, dim: number): number[] {
  if (!Array.isArray(value) || value.length !== dim) {
    throw new ProtocolError(`${tag}.${field} must hold ${dim} finite floats`);
  }
  const out: number[] = [];
  for (const v of value) {
    if (typeof v !== "number" || !Number.isFinite(v)) {
      throw new ProtocolError(`${tag}.${field} must hold ${dim} finite floats`);
    }
    out.push(v);
  }
  return out;
}

function finiteNumber(tag: string, field: string, value: unknown): number {
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new ProtocolError(`${tag}.${field} must be a finite float`);
  }
  return value;
}

function optionalString(tag: string, field: string, value: unknown): string {
  if (typeof value !== "string") {
    throw new ProtocolError(`${tag}.${field} must be a string`);
  }
  return value;
}

// required / optional field names per tag, exactly as the runtime enforces
const FIELDS: Record<string, [string[], string[]]> = {
  Command: [["u"], []],
  StateUpdate: [["t", "pose", "mu", "diagSigma"], []],
  TeachControl: [["action"], ["name"]],
  ModeSwitch: [["mode"], ["trajectory"]],
  Ack: [["code"], ["text", "t"]],
  Error: [["code"], ["text", "t"]],
};

/** Validate a message object; throws ProtocolError on any violation. */
export function validateMessage(msg: Message): void {
  switch (msg.tag) {
    case "Command":
      finiteVector("Command", "u", msg.u, 3);
      return;
    case "StateUpdate":
      finiteNumber("StateUpdate", "t", msg.t);
      finiteVector("StateUpdate", "pose", msg.pose, 3);
      finiteVector("StateUpdate", "mu", msg.mu, 6);
      finiteVector("StateUpdate", "diagSigma", msg.diagSigma, 6);
      return;
    case "TeachControl":
      if (!TEACH_ACTIONS.includes(msg.action)) {
        throw new ProtocolError(
          `TeachControl.action must be one of ${TEACH_ACTIONS.join(", ")}`);
      }
      if (msg.action === "save") {
        if (typeof msg.name !== "string" || msg.name.length === 0) {
          throw new ProtocolError("TeachControl save needs a non-empty name");
        }
      } else if (msg.name !== undefined) {
        throw new ProtocolError("TeachControl.name only applies to save");
      }
      return;
    case "ModeSwitch":
      if (!MODES.includes(msg.mode)) {
        throw new ProtocolError(`ModeSwitch.mode must be one of ${MODES.join(", ")}`);
      }
      if (msg.mode === "repeat") {
        if (typeof msg.trajectory !== "string" || msg.trajectory.length === 0) {
          throw new ProtocolError("ModeSwitch to repeat needs a trajectory name");
        }
      } else if (msg.trajectory !== undefined) {
        throw new ProtocolError("ModeSwitch.trajectory only applies to repeat");
      }
      return;
    case "Ack":
    case "Error":
      if (typeof msg.code !== "string") {
        throw new ProtocolError(`${msg.tag}.code must be a string`);
      }
      if (msg.t !== undefined) {
        finiteNumber(msg.tag, "t", msg.t);
      }
      return;
    default:
      throw new ProtocolError(`unknown message tag ${JSON.stringify((msg as { tag: string }).tag)}`);
  }
}

/** Serialize to wire JSON with the documented field order. */
export function encodeMessage(msg: Message): string {
  validateMessage(msg);
  switch (msg.tag) {
    case "Command":
      return JSON.stringify({ tag: "Command", u: msg.u });
    case "StateUpdate":
      return JSON.stringify({
        tag: "StateUpdate", t: msg.t, pose: msg.pose, mu: msg.mu,
        diagSigma: msg.diagSigma,
      });
    case "TeachControl": {
      const doc: Record<string, unknown> = { tag: "TeachControl", action: msg.action };
      if (msg.name !== undefined) doc.name = msg.name;
      return JSON.stringify(doc);
    }
    case "ModeSwitch": {
      const doc: Record<string, unknown> = { tag: "ModeSwitch", mode: msg.mode };
      if (msg.trajectory !== undefined) doc.trajectory = msg.trajectory;
      return JSON.stringify(doc);
    }
    case "Ack":
    case "Error": {
      const doc: Record<string, unknown> = { tag: msg.tag, code: msg.code, text: msg.text };
      if (msg.t !== undefined) doc.t = msg.t;
      return JSON.stringify(doc);
    }
  }
}

/** Parse one wire JSON message; throws ProtocolError on anything off. */
export function decodeMessage(text: string): Message {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (exc) {
    throw new ProtocolError(`unparseable message: ${(exc as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new ProtocolError("message must be an object with a 'tag' field");
  }
  const record = doc as Record<string, unknown>;
  const tag = record.tag;
  if (typeof tag !== "string" || !(tag in FIELDS)) {
    throw new ProtocolError(`unknown message tag ${JSON.stringify(tag)}`);
  }
  const [required, optional] = FIELDS[tag];
  const fields = Object.keys(record).filter((k) => k !== "tag");
  const unknown = fields.filter((f) => !required.includes(f) && !optional.includes(f));
  if (unknown.length > 0) {
    throw new ProtocolError(`${tag}: unknown fields ${unknown.sort().join(", ")}`);
  }
  const missing = required.filter((f) => !fields.includes(f));
  if (missing.length > 0) {
    throw new ProtocolError(`${tag}: missing fields ${missing.sort().join(", ")}`);
  }

  let msg: Message;
  switch (tag) {
    case "Command":
      msg = {
        tag: "Command",
        u: finiteVector("Command", "u", record.u, 3) as Command["u"],
      };
      break;
    case "StateUpdate":
      msg = {
        tag: "StateUpdate",
        t: finiteNumber("StateUpdate", "t", record.t),
        pose: finiteVector("StateUpdate", "pose", record.pose, 3) as StateUpdate["pose"],
        mu: finiteVector("StateUpdate", "mu", record.mu, 6) as StateUpdate["mu"],
        diagSigma: finiteVector("StateUpdate", "diagSigma", record.diagSigma, 6) as StateUpdate["diagSigma"],
      };
      break;
    case "TeachControl":
      msg = {
        tag: "TeachControl",
        action: record.action as TeachAction,
        ...(record.name !== undefined
          ? { name: optionalString("TeachControl", "name", record.name) }
          : {}),
      };
      break;
    case "ModeSwitch":
      msg = {
        tag: "ModeSwitch",
        mode: record.mode as Mode,
        ...(record.trajectory !== undefined
          ? { trajectory: optionalString("ModeSwitch", "trajectory", record.trajectory) }
          : {}),
      };
      break;
    default:
      msg = {
        tag: tag as "Ack" | "Error",
        code: optionalString(tag, "code", record.code),
        text: record.text === undefined ? "" : optionalString(tag, "text", record.text),
        ...(record.t !== undefined
          ? { t: finiteNumber(tag, "t", record.t) }
          : {}),
      };
      break;
  }
  validateMessage(msg);
  return msg;
}
