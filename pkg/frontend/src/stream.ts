// One SSE connection per session. EventSource reconnects on its own;
// every frame is a JSON object typed by its "type" field.

import type { GatewayEvent } from "./api.js";

export interface EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface StreamHandle {
  close(): void;
}

export function openStream(
  url: string,
  onEvent: (event: GatewayEvent) => void,
  factory: EventSourceFactory = (u) => new EventSource(u) as unknown as EventSourceLike,
  onError?: () => void,
): StreamHandle {
  const source = factory(url);
  source.onmessage = (message) => {
    let parsed: unknown;
    try {
      parsed = JSON.parse(message.data);
    } catch {
      return; // not ours; keepalives never reach onmessage anyway
    }
    if (!parsed || typeof parsed !== "object") return;
    const event = parsed as GatewayEvent;
    if (event.type === "offer" || event.type === "progress") onEvent(event);
  };
  source.onerror = () => {
    if (onError) onError();
  };
  return { close: () => source.close() };
}
