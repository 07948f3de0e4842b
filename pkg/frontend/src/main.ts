/** Browser entry point: wires the DOM panel to a TeleopSession. */

import { KeyboardMapper } from "./keyboard.js";
import { SocketCallbacks, SocketLike, TeleopSession } from "./session.js";
import { renderScene } from "./trace.js";

function openBrowserSocket(url: string, cb: SocketCallbacks): SocketLike {
  const ws = new WebSocket(url);
  ws.onopen = () => cb.onOpen();
  ws.onmessage = (ev) => cb.onMessage(String(ev.data));
  ws.onclose = () => cb.onClose();
  ws.onerror = () => { /* close follows and drives the reconnect */ };
  return {
    send: (text) => ws.send(text),
    close: () => ws.close(),
  };
}

function must<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing #${id} in the page`);
  return el as T;
}

function main(): void {
  const canvas = must<HTMLCanvasElement>("trace");
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("2d canvas context unavailable");

  const params = new URLSearchParams(window.location.search);
  const port = params.get("port") ?? "8765";
  const host = window.location.hostname || "127.0.0.1";
  const session = new TeleopSession(`ws://${host}:${port}/`, {
    openSocket: openBrowserSocket,
  });
  const mapper = new KeyboardMapper();

  const nameInput = must<HTMLInputElement>("name");
  const savedList = must<HTMLSelectElement>("saved");
  must<HTMLButtonElement>("teach").onclick = () => session.switchMode("teach");
  must<HTMLButtonElement>("record").onclick = () => session.startRecording();
  must<HTMLButtonElement>("stop").onclick = () => session.stopRecording();
  must<HTMLButtonElement>("save").onclick = () => session.saveRecording(nameInput.value);
  must<HTMLButtonElement>("repeat").onclick = () =>
    session.switchMode("repeat", savedList.value);
  must<HTMLButtonElement>("abort").onclick = () => session.abort();

  session.onChange = () => {
    const names = session.savedNames;
    if (savedList.length !== names.length) {
      savedList.innerHTML = "";
      for (const name of names) {
        const opt = document.createElement("option");
        opt.value = name;
        opt.textContent = name;
        savedList.appendChild(opt);
      }
    }
  };

  // keyboard teleop: events update the chord, the 20 Hz loop sends
  window.addEventListener("keydown", (ev) => {
    if (ev.target === nameInput) return;
    if (mapper.keyEvent(ev.key, true)) ev.preventDefault();
  });
  window.addEventListener("keyup", (ev) => {
    if (mapper.keyEvent(ev.key, false)) ev.preventDefault();
  });
  window.addEventListener("blur", () => mapper.releaseAll());

  window.setInterval(() => {
    const u = mapper.poll(performance.now());
    if (u !== null) session.sendCommand(u);
  }, 25);

  const draw = () => {
    renderScene(ctx, {
      reference: session.reference,
      trace: session.trace,
      banner: session.banner(),
      readout: session.readout(),
    }, canvas.width, canvas.height);
    window.requestAnimationFrame(draw);
  };
  window.requestAnimationFrame(draw);

  session.connect();
}

main();
