// DOM rendering. Render functions are total over the state they are
// given and never talk to the network themselves.

import type { ConsoleState } from "./store.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: Array<Node | string> = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  for (const child of children) node.append(child);
  return node;
}

function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function renderFlows(target: HTMLElement, state: ConsoleState): void {
  clear(target);
  if (state.flows.size === 0) {
    target.append(el("p", { class: "dim" }, ["no ride requested"]));
    return;
  }
  for (const flow of state.flows.values()) {
    const steps = el("ol", { class: "timeline" });
    steps.append(el("li", {}, [`requested (${flow.key})`]));
    for (const s of flow.states) steps.append(el("li", {}, [s]));
    const card = el("div", { class: "card" }, [steps]);
    if (flow.error) card.append(el("p", { class: "error" }, [flow.error]));
    if (flow.rideId) card.append(el("p", { class: "dim" }, [`ride id ${flow.rideId}`]));
    target.append(card);
  }
}

export function renderOffers(
  target: HTMLElement,
  state: ConsoleState,
  onRespond: (key: string, accept: boolean) => void,
): void {
  clear(target);
  if (state.offers.size === 0) {
    target.append(el("p", { class: "dim" }, ["no open offers"]));
    return;
  }
  for (const offer of state.offers.values()) {
    const accept = el("button", {}, ["accept"]);
    accept.onclick = () => onRespond(offer.key, true);
    const deny = el("button", { class: "secondary" }, ["deny"]);
    deny.onclick = () => onRespond(offer.key, false);
    target.append(
      el("div", { class: "card" }, [
        el("p", {}, [`rider ${offer.rider_id}`]),
        el("p", { class: "dim" }, [`pickup ${offer.pickup}`]),
        accept,
        deny,
      ]),
    );
  }
}

export function renderActiveRides(
  target: HTMLElement,
  state: ConsoleState,
  onMove: (key: string, kind: "pickup" | "dropoff", location: string) => void,
): void {
  clear(target);
  if (state.rides.size === 0) {
    target.append(el("p", { class: "dim" }, ["no active rides"]));
    return;
  }
  for (const ride of state.rides.values()) {
    const where = el("input", { placeholder: "place or lat,lon", value: ride.pickup });
    const pickupBtn = el("button", {}, ["pickup"]);
    pickupBtn.onclick = () => onMove(ride.key, "pickup", where.value);
    const dropoffBtn = el("button", {}, ["dropoff"]);
    dropoffBtn.onclick = () => onMove(ride.key, "dropoff", where.value);
    target.append(
      el("div", { class: "card" }, [
        el("p", {}, [`rider ${ride.rider_id}`]),
        el("p", { class: "dim" }, [`ride ${ride.ride_id.slice(0, 12)}…`]),
        where,
        pickupBtn,
        dropoffBtn,
      ]),
    );
  }
  target.append(el("p", { class: "dim" }, [`on board: ${state.onboard.join(", ") || "nobody"}`]));
}

function pairList(value: unknown): string {
  if (!Array.isArray(value) || value.length === 0) return "—";
  return value.map((pair) => (Array.isArray(pair) ? pair.join(" @ ") : String(pair))).join("; ");
}

export function renderHistory(target: HTMLElement, rides: Array<Record<string, unknown>>): void {
  clear(target);
  if (rides.length === 0) {
    target.append(el("p", { class: "dim" }, ["no archived rides"]));
    return;
  }
  const table = el("table");
  for (const ride of rides) {
    const body = el("tbody");
    const id = String(ride["ride_id"] ?? "");
    if (ride["role"] === "driver") {
      body.append(
        row("ride", id),
        row("riders", pairList(ride["riders"]) || "—"),
        row("pickups", pairList(ride["pickups"])),
        row("dropoffs", pairList(ride["dropoffs"])),
      );
    } else {
      body.append(
        row("ride", id),
        row("pickup", String(ride["pickup"] ?? "—")),
        row("dropoff", String(ride["dropoff"] ?? "—")),
        row("co-rider pickups", pairList(ride["corider_pickups"])),
        row("co-rider dropoffs", pairList(ride["corider_dropoffs"])),
      );
    }
    table.append(body);
  }
  target.append(table);
}

function row(label: string, value: string): HTMLTableRowElement {
  return el("tr", {}, [el("th", {}, [label]), el("td", {}, [value])]);
}

export function renderToasts(target: HTMLElement, state: ConsoleState): void {
  clear(target);
  for (const message of state.toasts.slice(-3)) {
    target.append(el("div", { class: "toast" }, [message]));
  }
}
