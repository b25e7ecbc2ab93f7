"""Client application layer: accounts, place lookup, and ride flows.

Sits between user interfaces (CLI, HTTP console) and a running network.
Registration salts and hashes the password here, so no transaction ever
carries a plaintext password; login re-derives the hash from the chain's
stored salt and compares. The driver side is an offer loop fed by
commit-time events, with on-board co-rider bookkeeping done by the
driver's own session. The rider side is a small state machine that
reacts to its ride's events and finishes with the archived ride id.

Blocking helpers (respond, pickup, dropoff, history) are called from
ordinary threads. Everything triggered by an event callback runs inside
the network's event loop and must stay non-blocking, so those paths
chain follow-up transactions through invoke() callbacks instead.
"""

from __future__ import annotations

import hashlib
import json
import queue
import secrets
import threading
from dataclasses import dataclass
from importlib import resources
from typing import Callable

from .chaincode import (
    ChaincodeError,
    GeoPoint,
    NotADriver,
    STATUS_OPEN,
    request_key,
)
from .identity import DuplicateLocalId
from .ledger import READ_CONFLICT
from .netsim import (
    VIRTUAL,
    ClientHandle,
    CommitRejected,
    EventDelivery,
    Network,
    Subscription,
    TxTicket,
)

EVENT_REQUESTED = "RideRequested"
EVENT_ACCEPTED = "RideAccepted"
EVENT_ARRIVED = "DriverArrived"
EVENT_ENDING = "RideEnding"

MAX_RETRIES = 3  # fresh attempts after a read conflict, idempotent ops only


class GatewayError(Exception):
    pass


class AuthFailed(GatewayError):
    pass


class GeocodeMiss(GatewayError):
    pass


class TxRejected(GatewayError):
    """A transaction failed endorsement or validation; the message is
    user-facing ("ride taken" for a lost accept race)."""


# --- places ---------------------------------------------------------------------

class Geocoder:
    """Exact-match lookup from fixture place names to coordinates.

    Raw "lat,lon" strings pass straight through, so every location
    argument in the gateway accepts either form.
    """

    def __init__(self, places: dict[str, GeoPoint]):
        self.places = dict(places)
        folded = [name.casefold().strip() for name in self.places]
        if len(set(folded)) != len(folded):
            raise GatewayError("place names must be unique")
        self._by_folded = {
            name.casefold().strip(): point for name, point in self.places.items()
        }

    @classmethod
    def from_file(cls, path: str | None = None) -> "Geocoder":
        if path is None:
            text = (
                resources.files("hailchain")
                .joinpath("fixtures/places-nashville.json")
                .read_text(encoding="utf-8")
            )
        else:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        data = json.loads(text)
        places = {
            entry["name"]: GeoPoint(float(entry["lat"]), float(entry["lon"]))
            for entry in data["places"]
        }
        return cls(places)

    def resolve(self, location: str) -> GeoPoint:
        name = (location or "").casefold().strip()
        if name in self._by_folded:
            return self._by_folded[name]
        try:
            return GeoPoint.parse(location)
        except (ValueError, AttributeError):
            raise GeocodeMiss(location or "(empty)") from None

    def name_of(self, point: GeoPoint) -> str | None:
        formatted = point.format()
        for name, candidate in self.places.items():
            if candidate.format() == formatted:
                return name
        return None

    def names(self) -> list[str]:
        return sorted(self.places)


# --- sessions -------------------------------------------------------------------

@dataclass
class _Account:
    client: ClientHandle
    display_name: str


@dataclass
class Session:
    """One authenticated user view; holds the credential handle."""

    gateway: "GatewayService"
    client: ClientHandle
    user_id: str
    org: str
    local_id: str
    role_view: str
    display_name: str = ""

    def request_ride(self, origin: str, destination: str) -> "RideFlow":
        return self.gateway.request_ride(self, origin, destination)

    def start_driving(self, location: str) -> "DriverShift":
        return self.gateway.start_driving(self, location)

    def upgrade_to_driver(self, name: str, make: str, model: str, year: int) -> None:
        self.gateway.upgrade_to_driver(self, name, make, model, year)

    def ride_history(self) -> list[dict]:
        return self.gateway.ride_history(self)

    def user_info(self) -> dict:
        return self.gateway.user_info(self)


def _password_digest(salt_hex: str, password: str) -> str:
    return hashlib.sha256(bytes.fromhex(salt_hex) + password.encode("utf-8")).hexdigest()


class GatewayService:
    """Account wallet plus the ride workflows, bound to one network."""

    def __init__(self, network: Network, geocoder: Geocoder | None = None):
        self.network = network
        self.geocoder = geocoder or Geocoder.from_file()
        self._accounts: dict[tuple[str, str], _Account] = {}
        self._lock = threading.Lock()

    # --- accounts -----------------------------------------------------

    def register(
        self, org: str, local_id: str, password: str, name: str = ""
    ) -> Session:
        if not local_id or not password:
            raise GatewayError("user id and password are required")
        key = (org, local_id)
        with self._lock:
            if key in self._accounts:
                raise DuplicateLocalId(f"{local_id}@{org}")
        salt = secrets.token_hex(16)
        digest = _password_digest(salt, password)
        client = self.network.create_client(local_id, org)
        try:
            client.call("registerUser", [digest, salt])
        except ChaincodeError as exc:
            if exc.code == "AlreadyRegistered":
                raise DuplicateLocalId(f"{local_id}@{org}") from exc
            raise TxRejected(str(exc)) from exc
        except CommitRejected as exc:
            raise TxRejected(str(exc)) from exc
        with self._lock:
            if key in self._accounts:
                raise DuplicateLocalId(f"{local_id}@{org}")
            self._accounts[key] = _Account(client, name)
        return Session(self, client, client.user_id, org, local_id, "rider", name)

    def login(
        self, org: str, local_id: str, password: str, role_view: str = "rider"
    ) -> Session:
        if role_view not in ("rider", "driver"):
            raise GatewayError(f"unknown role view {role_view!r}")
        with self._lock:
            account = self._accounts.get((org, local_id))
        if account is None:
            raise AuthFailed("unknown user or wrong password")
        try:
            info = account.client.query("getUserInfo", [])
        except ChaincodeError as exc:
            raise AuthFailed("unknown user or wrong password") from exc
        if _password_digest(info["salt"], password) != info["password_hash"]:
            raise AuthFailed("unknown user or wrong password")
        if role_view == "driver" and not info.get("driver"):
            raise NotADriver(f"{local_id}@{org}")
        return Session(
            self,
            account.client,
            account.client.user_id,
            org,
            local_id,
            role_view,
            account.display_name or info.get("name") or "",
        )

    def upgrade_to_driver(
        self, session: Session, name: str, make: str, model: str, year: int
    ) -> None:
        try:
            session.client.call("upgradeToDriver", [name, make, model, str(year)])
        except CommitRejected as exc:
            raise TxRejected(str(exc)) from exc

    def user_info(self, session: Session) -> dict:
        return session.client.query("getUserInfo", [])

    # --- rider side ---------------------------------------------------

    def request_ride(
        self,
        session: Session,
        origin: str,
        destination: str,
        watch: Callable[[dict], None] | None = None,
    ) -> "RideFlow":
        pickup = self.geocoder.resolve(origin)
        dest = self.geocoder.resolve(destination)
        flow = RideFlow(self.network, session.client, dest)
        if watch is not None:
            # registered before the request ships so no progress entry
            # can slip past the listener
            flow.watch(watch)
        flow._begin(pickup)
        return flow

    def ride_history(self, session: Session) -> list[dict]:
        info = session.client.query("getUserInfo", [])
        history = []
        for ride_id in info["ride_ids"]:
            history.append(session.client.query("getRide", [ride_id]))
        return history

    # --- driver side ----------------------------------------------------

    def start_driving(
        self,
        session: Session,
        location: str,
        on_offer: Callable[["RideOffer"], None] | None = None,
    ) -> "DriverShift":
        if session.role_view != "driver":
            raise NotADriver(session.user_id)
        point = self.geocoder.resolve(location)
        return DriverShift(self, session, point, on_offer)


# --- rider ride flow --------------------------------------------------------

class RideFlow:
    """Drives one ride request to its archive.

    Progress states appear in order: accepted, driver_arrived,
    ride_ending, archived. Each is appended only when the corresponding
    transaction's event commits. The destination transaction and the
    final leave transaction are sent automatically from inside the
    event loop, so they never block it.
    """

    def __init__(self, network: Network, client: ClientHandle, destination: GeoPoint):
        self.network = network
        self.client = client
        self.destination = destination
        self.key = request_key(client.user_id)
        self.progress: list[dict] = []
        self.ride_id: str | None = None
        self.error: str | None = None
        self._finished = threading.Event()
        self._sub: Subscription | None = None
        self._watchers: list[Callable[[dict], None]] = []

    def _begin(self, pickup: GeoPoint) -> None:
        self._sub = self.network.subscribe(
            self.client.user_id, None, self._on_event
        )
        try:
            self.client.call("requestRide", [pickup.format()])
        except Exception:
            self._close()
            raise

    # runs inside the event loop
    def _on_event(self, delivery: EventDelivery) -> None:
        if self._finished.is_set() or delivery.payload.get("key") != self.key:
            return
        if delivery.name == EVENT_ACCEPTED:
            self._mark("accepted", at=delivery.at)
            self._send_destination(MAX_RETRIES)
        elif delivery.name == EVENT_ARRIVED:
            self._mark("driver_arrived", at=delivery.at)
        elif delivery.name == EVENT_ENDING:
            self._mark("ride_ending", at=delivery.at)
            point = delivery.payload["point"]
            self.client.invoke("leaveDriver", [point], on_done=self._on_left)

    def _send_destination(self, attempts_left: int) -> None:
        def done(ticket: TxTicket) -> None:
            if ticket.valid:
                return
            if ticket.invalid_reason == READ_CONFLICT and attempts_left > 1:
                self._send_destination(attempts_left - 1)
            else:
                self._fail(ticket.error or ticket.invalid_reason or "destination rejected")

        self.client.invoke(
            "setRideDestination", [self.destination.format()], on_done=done
        )

    def _on_left(self, ticket: TxTicket) -> None:
        if not ticket.valid:
            self._fail(ticket.error or ticket.invalid_reason or "leave rejected")
            return
        result = ticket.result()
        self.ride_id = result["ride_id"]
        self._mark("archived", at=self.network.now_ms(), ride_id=self.ride_id)
        self._close()
        self._finished.set()

    def _mark(self, state: str, **extra) -> None:
        entry = {"state": state, **extra}
        self.progress.append(entry)
        for watcher in list(self._watchers):
            watcher(entry)

    def _fail(self, message: str) -> None:
        self.error = message
        entry = {"state": "failed", "error": message}
        self.progress.append(entry)
        for watcher in list(self._watchers):
            watcher(entry)
        self._close()
        self._finished.set()

    def _close(self) -> None:
        if self._sub is not None:
            self.network.unsubscribe(self._sub)
            self._sub = None

    def watch(self, fn: Callable[[dict], None]) -> None:
        """Called for every progress entry; from the loop thread."""
        self._watchers.append(fn)

    @property
    def finished(self) -> bool:
        return self._finished.is_set()

    def states(self) -> list[str]:
        return [entry["state"] for entry in self.progress]

    def wait_archived(self, timeout_s: float = 60.0) -> str:
        """Block until the ride archives; returns the ride id."""
        if self.network.mode == VIRTUAL:
            self.network.run(until=self._finished.is_set)
        else:
            self._finished.wait(timeout_s)
        if not self._finished.is_set():
            raise GatewayError("ride still in progress")
        if self.error is not None:
            raise TxRejected(self.error)
        assert self.ride_id is not None
        return self.ride_id


# --- driver shift -----------------------------------------------------------

@dataclass(frozen=True)
class RideOffer:
    key: str
    rider_id: str
    pickup: str
    at: float


@dataclass
class ActiveRide:
    key: str
    rider_id: str
    ride_id: str
    pickup: str


class DriverShift:
    """A driver listening for requests and working accepted rides.

    Offers arrive from commit-time events only; rescan() is the
    explicit catch-up query for requests that were already open before
    the shift began. The shift tracks who is currently on board and
    records each pickup and dropoff on every other on-board rider's
    temporal record, which is what the archive privacy rules feed on.
    """

    def __init__(
        self,
        gateway: GatewayService,
        session: Session,
        location: GeoPoint,
        on_offer: Callable[[RideOffer], None] | None = None,
    ):
        self.gateway = gateway
        self.network = gateway.network
        self.session = session
        self.location = location
        self.on_offer = on_offer
        self.onboard: list[ActiveRide] = []
        self._offers: "queue.Queue[RideOffer]" = queue.Queue()
        self._sub = self.network.subscribe(
            session.client.user_id, EVENT_REQUESTED, self._on_request
        )

    # runs inside the event loop
    def _on_request(self, delivery: EventDelivery) -> None:
        key = delivery.payload["key"]
        rider_id = key.split(":", 1)[1]
        if rider_id == self.session.user_id:
            return  # own request, not an offer
        offer = RideOffer(key, rider_id, delivery.payload["point"], delivery.at)
        self._offers.put(offer)
        if self.on_offer is not None:
            self.on_offer(offer)

    def poll_offer(self) -> RideOffer | None:
        try:
            return self._offers.get_nowait()
        except queue.Empty:
            return None

    def next_offer(self, timeout_s: float = 10.0) -> RideOffer | None:
        try:
            return self._offers.get(timeout=timeout_s)
        except queue.Empty:
            return None

    def rescan(self) -> list[RideOffer]:
        """Open requests currently in state, oldest key order."""
        offers = []
        for key, raw in self.network.scan_state("rideRequest:"):
            record = json.loads(raw.decode("utf-8"))
            if record["status"] != STATUS_OPEN:
                continue
            rider_id = key.split(":", 1)[1]
            if rider_id == self.session.user_id:
                continue
            offers.append(RideOffer(key, rider_id, record["pickup"], 0.0))
        return offers

    def respond(self, offer: RideOffer, accept: bool) -> ActiveRide | None:
        """Accept or deny one offer. Denying transacts nothing, so the
        request stays open for other drivers. A lost accept race
        surfaces as TxRejected("ride taken"); it is never retried."""
        if not accept:
            return None
        try:
            ticket = self.session.client.call("acceptRide", [offer.key])
        except CommitRejected as exc:
            if READ_CONFLICT in str(exc):
                raise TxRejected("ride taken") from exc
            raise TxRejected(str(exc)) from exc
        except ChaincodeError as exc:
            if exc.code in ("RideNotOpen", "NoSuchRide"):
                raise TxRejected("ride taken") from exc
            raise
        ride_id = ticket.result()["ride_id"]
        return ActiveRide(offer.key, offer.rider_id, ride_id, offer.pickup)

    def pickup(self, ride: ActiveRide, location: str) -> None:
        point = self.gateway.geocoder.resolve(location)
        self.session.client.call("pickupRider", [ride.key, point.format()])
        # everyone already in the car witnesses this rider boarding
        for other in self.onboard:
            self._record_corider(other, ride.rider_id, point, "pickup")
        self.onboard.append(ride)
        self.location = point

    def dropoff(self, ride: ActiveRide, location: str) -> str:
        point = self.gateway.geocoder.resolve(location)
        ticket = self.session.client.call("dropoffRider", [ride.key, point.format()])
        if ride in self.onboard:
            self.onboard.remove(ride)
        # the departed rider's record is frozen; the remaining riders
        # witness the dropoff
        for other in self.onboard:
            self._record_corider(other, ride.rider_id, point, "dropoff")
        self.location = point
        return ticket.result()["ride_id"]

    def _record_corider(
        self, onto: ActiveRide, corider_id: str, point: GeoPoint, kind: str
    ) -> None:
        args = [onto.key, corider_id, point.format(), kind]
        for attempt in range(MAX_RETRIES):
            try:
                self.session.client.call("setCoriderInformation", args)
                return
            except CommitRejected as exc:
                # only a read conflict means "nothing was applied, safe
                # to resend"; anything else is a real rejection
                if READ_CONFLICT not in str(exc) or attempt == MAX_RETRIES - 1:
                    raise TxRejected(str(exc)) from exc

    def stop(self) -> None:
        if self._sub is not None:
            self.network.unsubscribe(self._sub)
            self._sub = None
