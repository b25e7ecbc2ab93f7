// Pure view state. The console never invents state: everything here is
// a fold over confirmed gateway responses and events, so a reload that
// replays /rider/status and /rides lands on the same picture.

import type { ActiveRide, FlowStatus, GatewayEvent, Offer, RiderStatus } from "./api.js";

export interface FlowView {
  key: string;
  states: string[];
  rideId: string | null;
  finished: boolean;
  error: string | null;
}

export interface ConsoleState {
  offers: Map<string, Offer>;
  rides: Map<string, ActiveRide>;
  onboard: string[];
  flows: Map<string, FlowView>;
  toasts: string[];
}

export function emptyState(): ConsoleState {
  return { offers: new Map(), rides: new Map(), onboard: [], flows: new Map(), toasts: [] };
}

function flowFor(state: ConsoleState, key: string): FlowView {
  let flow = state.flows.get(key);
  if (!flow) {
    flow = { key, states: [], rideId: null, finished: false, error: null };
    state.flows.set(key, flow);
  }
  return flow;
}

// Live events land here. Progress events carry no flow key on the wire
// because a token's stream is already scoped to its own session; the
// rider panel keeps a single active request, mirrored by activeFlowKey.
export function applyEvent(state: ConsoleState, event: GatewayEvent, activeFlowKey: string | null): void {
  if (event.type === "offer") {
    state.offers.set(event.key, event);
    return;
  }
  if (!activeFlowKey) return;
  const flow = flowFor(state, activeFlowKey);
  if (flow.states.includes(event.state)) return; // replays are no-ops
  flow.states.push(event.state);
  if (event.state === "archived") {
    flow.rideId = event.ride_id ?? null;
    flow.finished = true;
  }
  if (event.state === "failed") {
    flow.error = event.error ?? "ride failed";
    flow.finished = true;
  }
}

// Reload path: /rider/status is authoritative for everything it lists.
export function mergeStatus(state: ConsoleState, status: RiderStatus): void {
  for (const [key, remote] of Object.entries<FlowStatus>(status.flows)) {
    const flow = flowFor(state, key);
    flow.states = [...remote.states];
    flow.rideId = remote.ride_id;
    flow.finished = remote.finished;
    flow.error = remote.error;
  }
}

export function acceptedRide(state: ConsoleState, key: string, ride: ActiveRide): void {
  state.offers.delete(key);
  state.rides.set(key, ride);
}

export function offerClosed(state: ConsoleState, key: string, toast?: string): void {
  state.offers.delete(key);
  if (toast) state.toasts.push(toast);
}

export function rideEnded(state: ConsoleState, key: string, onboard: string[]): void {
  state.rides.delete(key);
  state.onboard = onboard;
}
