import { describe, expect, it } from "vitest";
import type { Offer, Progress } from "../src/api.js";
import { acceptedRide, applyEvent, emptyState, mergeStatus, offerClosed, rideEnded } from "../src/store.js";

const offer: Offer = { type: "offer", key: "rideRequest:r1", rider_id: "r1@Org2", pickup: "36.1,-86.7", at: 12.5 };

function progress(state: string, extra: Partial<Progress> = {}): Progress {
  return { type: "progress", state, ...extra };
}

describe("driver offer lifecycle", () => {
  it("accepting an offer turns it into an active ride", () => {
    const s = emptyState();
    applyEvent(s, offer, null);
    expect([...s.offers.keys()]).toEqual(["rideRequest:r1"]);
    acceptedRide(s, offer.key, { key: offer.key, rider_id: offer.rider_id, ride_id: "abc123", pickup: offer.pickup });
    expect(s.offers.size).toBe(0);
    expect(s.rides.get(offer.key)?.ride_id).toBe("abc123");
  });

  it("denied and taken offers disappear; losing the race leaves a toast", () => {
    const s = emptyState();
    applyEvent(s, offer, null);
    offerClosed(s, offer.key);
    expect(s.offers.size).toBe(0);
    expect(s.toasts).toEqual([]);

    applyEvent(s, offer, null);
    offerClosed(s, offer.key, "ride taken: somebody was faster");
    expect(s.offers.size).toBe(0);
    expect(s.toasts).toEqual(["ride taken: somebody was faster"]);
  });

  it("dropoff clears the ride and keeps the onboard list current", () => {
    const s = emptyState();
    acceptedRide(s, offer.key, { key: offer.key, rider_id: offer.rider_id, ride_id: "abc", pickup: offer.pickup });
    rideEnded(s, offer.key, ["other@Org1"]);
    expect(s.rides.size).toBe(0);
    expect(s.onboard).toEqual(["other@Org1"]);
  });
});

describe("rider timeline", () => {
  it("appends confirmed states in order and ignores replays", () => {
    const s = emptyState();
    applyEvent(s, progress("accepted"), "k1");
    applyEvent(s, progress("accepted"), "k1");
    applyEvent(s, progress("driver_arrived"), "k1");
    expect(s.flows.get("k1")?.states).toEqual(["accepted", "driver_arrived"]);
  });

  it("archived carries the ride id and finishes the flow", () => {
    const s = emptyState();
    applyEvent(s, progress("ride_ending"), "k1");
    applyEvent(s, progress("archived", { ride_id: "deadbeef" }), "k1");
    const flow = s.flows.get("k1");
    expect(flow?.finished).toBe(true);
    expect(flow?.rideId).toBe("deadbeef");
  });

  it("failed flows keep the error message", () => {
    const s = emptyState();
    applyEvent(s, progress("failed", { error: "destination rejected" }), "k1");
    expect(s.flows.get("k1")?.error).toBe("destination rejected");
    expect(s.flows.get("k1")?.finished).toBe(true);
  });

  it("drops progress events when no request is active", () => {
    const s = emptyState();
    applyEvent(s, progress("accepted"), null);
    expect(s.flows.size).toBe(0);
  });
});

describe("reload reconstruction", () => {
  it("rebuilds flows from the status endpoint and stays consistent with live events", () => {
    const s = emptyState();
    applyEvent(s, progress("accepted"), "k1"); // live event seen before reload
    mergeStatus(s, {
      flows: {
        k1: {
          states: ["accepted", "driver_arrived", "ride_ending", "archived"],
          progress: [],
          ride_id: "cafe",
          finished: true,
          error: null,
        },
      },
    });
    const flow = s.flows.get("k1");
    expect(flow?.states).toEqual(["accepted", "driver_arrived", "ride_ending", "archived"]);
    expect(flow?.rideId).toBe("cafe");
    expect(flow?.finished).toBe(true);

    // the same event arriving late changes nothing
    applyEvent(s, progress("archived", { ride_id: "cafe" }), "k1");
    expect(flow?.states).toEqual(["accepted", "driver_arrived", "ride_ending", "archived"]);
  });
});
