// Wires forms and buttons to the API client and re-renders on every
// confirmed response or event. Reload mid-ride reconstructs the view
// from /rider/status, /rides, and the event stream; nothing is drawn
// optimistically.

import { ApiClient, ApiError } from "./api.js";
import { applyEvent, acceptedRide, emptyState, mergeStatus, offerClosed, rideEnded } from "./store.js";
import { openStream, type StreamHandle } from "./stream.js";
import { el, renderActiveRides, renderFlows, renderHistory, renderOffers, renderToasts } from "./ui.js";

const state = emptyState();
let api = new ApiClient(localStorage.getItem("hailchain.base") ?? "http://127.0.0.1:8000");
let stream: StreamHandle | null = null;
let activeFlowKey: string | null = localStorage.getItem("hailchain.flow");
let role = "rider";

function $(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function input(id: string): HTMLInputElement {
  return $(id) as HTMLInputElement;
}

function note(message: string, isError = false): void {
  const box = $("notice");
  box.textContent = message;
  box.className = isError ? "error" : "dim";
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  return String(err);
}

function redraw(): void {
  renderFlows($("flows"), state);
  renderOffers($("offers"), state, respond);
  renderActiveRides($("active"), state, move);
  renderToasts($("toasts"), state);
}

async function refreshRider(): Promise<void> {
  try {
    mergeStatus(state, await api.riderStatus());
    redraw();
  } catch {
    // driver-view tokens have no flows; nothing to merge
  }
}

async function refreshHistory(): Promise<void> {
  try {
    const { rides } = await api.rides();
    renderHistory($("history"), rides);
  } catch (err) {
    note(describe(err), true);
  }
}

function connectStream(): void {
  stream?.close();
  stream = openStream(api.eventsUrl(), (event) => {
    applyEvent(state, event, activeFlowKey);
    redraw();
  });
}

async function respond(key: string, accept: boolean): Promise<void> {
  try {
    const result = await api.respond(key, accept);
    if (result.ride) acceptedRide(state, key, result.ride);
    else offerClosed(state, key);
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      offerClosed(state, key, `ride taken: ${err.message}`);
    } else {
      note(describe(err), true);
    }
  }
  redraw();
}

async function move(key: string, kind: "pickup" | "dropoff", location: string): Promise<void> {
  try {
    if (kind === "pickup") {
      const { onboard } = await api.pickup(key, location);
      state.onboard = onboard;
    } else {
      const { ride_id, onboard } = await api.dropoff(key, location);
      rideEnded(state, key, onboard);
      state.toasts.push(`ride archived: ${ride_id.slice(0, 12)}…`);
    }
    note("");
  } catch (err) {
    note(describe(err), true);
  }
  redraw();
  void refreshHistory();
}

function showPanels(): void {
  $("auth").hidden = true;
  $("console").hidden = false;
  $("rider-panel").hidden = role !== "rider";
  $("driver-panel").hidden = role !== "driver";
  $("whoami").textContent = `${role} session`;
}

async function afterAuth(): Promise<void> {
  showPanels();
  connectStream();
  await refreshRider();
  await refreshHistory();
}

function wire(): void {
  input("base").value = api.baseUrl;
  input("base").onchange = () => {
    api = new ApiClient(input("base").value.replace(/\/$/, ""));
    localStorage.setItem("hailchain.base", api.baseUrl);
  };

  ($("do-register") as HTMLButtonElement).onclick = async () => {
    try {
      await api.register(input("org").value, input("user").value, input("password").value);
      role = "rider";
      note("registered");
      await afterAuth();
    } catch (err) {
      note(describe(err), true);
    }
  };

  ($("do-login") as HTMLButtonElement).onclick = async () => {
    role = (document.querySelector("input[name=role]:checked") as HTMLInputElement).value;
    try {
      await api.login(input("org").value, input("user").value, input("password").value, role);
      note("logged in");
      await afterAuth();
    } catch (err) {
      note(describe(err), true);
    }
  };

  ($("do-upgrade") as HTMLButtonElement).onclick = async () => {
    try {
      await api.upgrade(input("drv-name").value, input("drv-make").value, input("drv-model").value, Number(input("drv-year").value));
      note("driver profile saved; log in with the driver role");
    } catch (err) {
      note(describe(err), true);
    }
  };

  ($("do-request") as HTMLButtonElement).onclick = async () => {
    try {
      const { key } = await api.requestRide(input("from").value, input("to").value);
      activeFlowKey = key;
      localStorage.setItem("hailchain.flow", key);
      await refreshRider();
    } catch (err) {
      note(describe(err), true);
    }
  };

  ($("do-start") as HTMLButtonElement).onclick = async () => {
    try {
      const rescan = (input("rescan") as HTMLInputElement).checked;
      const { open_requests } = await api.driverStart(input("location").value, rescan);
      for (const offer of open_requests) applyEvent(state, offer, activeFlowKey);
      note("on shift");
      redraw();
    } catch (err) {
      note(describe(err), true);
    }
  };

  ($("do-history") as HTMLButtonElement).onclick = () => void refreshHistory();

  void api
    .health()
    .then((h) => {
      $("health").textContent = `gateway up: ${h.peers} peers, ${h.orgs.length} orgs, height ${h.height}`;
    })
    .catch(() => {
      $("health").textContent = "gateway unreachable";
    });
}

document.addEventListener("DOMContentLoaded", wire);

export { el }; // keeps the module graph honest for bundler-less loading
