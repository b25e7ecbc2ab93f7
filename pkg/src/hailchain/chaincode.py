"""The ride-hailing contract.

State layout (all values canonical JSON):

    user:<uid>              registration record, driver profile, ride ids
    rideRequest:<uid>       the rider's single active ride, keyed by rider
    ride:<uid>:<ride_id>    immutable per-participant archive of a ride
    driverRides:<uid>       driver-side index of rides in progress

A rider has at most one active request; its status walks
open -> accepted -> picked_up -> dropping and the record is deleted when
the rider leaves the vehicle. Archives are written per participant and
privacy-filtered at write time: the rider's copy carries only their own
pickup/dropoff plus co-rider events they were present for, the driver's
copy carries every pickup and dropoff of the rides it served.

Caller identity always comes from the certificate in the invocation
context. No operation takes a caller-supplied user id for the caller;
the only user id accepted as an argument names a third party (the
co-rider being recorded, who has no certificate in the call).

Execution must be deterministic across endorsers: the only time source
is the client's proposal timestamp and the only randomness-free id is
the ride id, derived from the rider and the requesting transaction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

from .canonical import enc_bytes, enc_str
from .identity import Certificate, Role, derive_user_id
from .ledger import ChaincodeError, KVContext, sha256

# --- statuses and keys --------------------------------------------------

STATUS_OPEN = "open"
STATUS_ACCEPTED = "accepted"
STATUS_PICKED_UP = "picked_up"
STATUS_DROPPING = "dropping"

ALL_STATUSES = (STATUS_OPEN, STATUS_ACCEPTED, STATUS_PICKED_UP, STATUS_DROPPING)

USER_PREFIX = "user:"
REQUEST_PREFIX = "rideRequest:"
RIDE_PREFIX = "ride:"
DRIVER_INDEX_PREFIX = "driverRides:"

EVENT_RIDE_REQUESTED = "RideRequested"
EVENT_RIDE_ACCEPTED = "RideAccepted"
EVENT_DRIVER_ARRIVED = "DriverArrived"
EVENT_RIDE_ENDING = "RideEnding"

DEFAULT_PICKUP_RADIUS_M = 100.0


def user_key(uid: str) -> str:
    return USER_PREFIX + uid


def request_key(uid: str) -> str:
    return REQUEST_PREFIX + uid


def ride_key(uid: str, ride_id: str) -> str:
    return f"{RIDE_PREFIX}{uid}:{ride_id}"


def driver_index_key(uid: str) -> str:
    return DRIVER_INDEX_PREFIX + uid


def compute_ride_id(rider_uid: str, request_tx_id: bytes) -> str:
    """Ride ids bind the rider to the transaction that opened the
    request, so they are unique without any randomness."""
    return sha256(enc_str(rider_uid) + enc_bytes(request_tx_id)).hex()


# --- errors ---------------------------------------------------------------

class ContractError(ChaincodeError):
    code = "ContractError"


class InvalidArguments(ContractError):
    code = "InvalidArguments"


class NotAuthorized(ContractError):
    code = "NotAuthorized"


class AlreadyRegistered(ContractError):
    code = "AlreadyRegistered"


class NotRegistered(ContractError):
    code = "NotRegistered"


class RideInProgress(ContractError):
    code = "RideInProgress"


class AlreadyDriver(ContractError):
    code = "AlreadyDriver"


class NotADriver(ContractError):
    code = "NotADriver"


class WrongStatus(ContractError):
    code = "WrongStatus"


class RideAlreadyActive(WrongStatus):
    code = "RideAlreadyActive"


class RideNotOpen(WrongStatus):
    code = "RideNotOpen"


class DestinationNotSet(WrongStatus):
    code = "DestinationNotSet"


class NoActiveRide(ContractError):
    code = "NoActiveRide"


class AlreadySet(ContractError):
    code = "AlreadySet"


class NotYourRide(ContractError):
    code = "NotYourRide"


class NotAtPickupLocation(ContractError):
    code = "NotAtPickupLocation"


class SelfAccept(ContractError):
    code = "SelfAccept"


class SelfCorider(ContractError):
    code = "SelfCorider"


class NoSuchRide(ContractError):
    code = "NoSuchRide"


def _error_classes() -> dict[str, type]:
    table: dict[str, type] = {"ChaincodeError": ChaincodeError}
    stack = [ContractError]
    while stack:
        cls = stack.pop()
        table[cls.code] = cls
        stack.extend(cls.__subclasses__())
    return table


ERROR_BY_CODE = _error_classes()


def error_from_wire(message: str) -> ChaincodeError:
    """Rebuild a typed error from its wire form "Code: detail".

    Unknown codes fall back to the base class so a newer peer never
    crashes an older client.
    """
    code, sep, detail = message.partition(": ")
    cls = ERROR_BY_CODE.get(code)
    if cls is None or not sep:
        return ChaincodeError(message)
    return cls(detail)


# --- geography -----------------------------------------------------------

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 coordinate; the wire form is "lat,lon" with at most seven
    fractional digits per component."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError("coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")

    @staticmethod
    def _fmt(value: float) -> str:
        text = f"{value:.7f}".rstrip("0").rstrip(".")
        return "0" if text in ("-0", "") else text

    def format(self) -> str:
        return f"{self._fmt(self.lat)},{self._fmt(self.lon)}"

    @classmethod
    def parse(cls, text: str) -> "GeoPoint":
        parts = text.split(",")
        if len(parts) != 2:
            raise ValueError(f"expected 'lat,lon', got {text!r}")
        return cls(float(parts[0]), float(parts[1]))


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


# --- invocation plumbing ----------------------------------------------------

@dataclass
class Invocation:
    """Everything a handler may consult. Identity lives in the
    certificate; handlers derive the caller id from it and nowhere else."""

    kv: KVContext
    cert: Certificate
    args: list[str]
    tx_id: bytes
    timestamp_ms: int

    @property
    def caller(self) -> str:
        return derive_user_id(self.cert)


def _loads(raw: bytes) -> dict:
    return json.loads(raw.decode("utf-8"))


def _dumps(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _parse_point(text: str) -> GeoPoint:
    try:
        return GeoPoint.parse(text)
    except ValueError as exc:
        raise InvalidArguments(str(exc)) from exc


class RideHailingContract:
    """Dispatches wire function names to handlers.

    The pickup radius is installation configuration: every peer must be
    deployed with the same value or endorsements will not match.
    """

    def __init__(self, pickup_radius_m: float = DEFAULT_PICKUP_RADIUS_M):
        self.pickup_radius_m = pickup_radius_m
        self._handlers: dict[str, tuple[Callable[[Invocation], object], int]] = {
            "registerUser": (self._register_user, 2),
            "unregisterUser": (self._unregister_user, 0),
            "upgradeToDriver": (self._upgrade_to_driver, 4),
            "getUserInfo": (self._get_user_info, 0),
            "requestRide": (self._request_ride, 1),
            "acceptRide": (self._accept_ride, 1),
            "setRideDestination": (self._set_ride_destination, 1),
            "pickupRider": (self._pickup_rider, 2),
            "setCoriderInformation": (self._set_corider_information, 4),
            "dropoffRider": (self._dropoff_rider, 2),
            "leaveDriver": (self._leave_driver, 1),
            "getRide": (self._get_ride, 1),
        }

    # queries read state but never write; the simulator may serve them
    # from a single peer without ordering
    QUERY_FUNCTIONS = frozenset({"getUserInfo", "getRide"})

    def function_names(self) -> list[str]:
        return sorted(self._handlers)

    def execute(
        self,
        kv: KVContext,
        function: str,
        args: list[str],
        cert: Certificate,
        tx_id: bytes,
        timestamp_ms: int,
    ) -> object:
        if cert.role is not Role.CLIENT:
            raise NotAuthorized(f"role {cert.role.value!r} may not invoke chaincode")
        entry = self._handlers.get(function)
        if entry is None:
            raise InvalidArguments(f"unknown function {function!r}")
        handler, arity = entry
        if len(args) != arity:
            raise InvalidArguments(f"{function} takes {arity} args, got {len(args)}")
        return handler(Invocation(kv, cert, list(args), tx_id, timestamp_ms))

    # --- registry handlers ---------------------------------------------

    def _load_user(self, inv: Invocation, uid: str | None = None) -> dict:
        uid = uid or inv.caller
        raw = inv.kv.get(user_key(uid))
        if raw is None:
            raise NotRegistered(uid)
        return _loads(raw)

    def _register_user(self, inv: Invocation) -> dict:
        uid = inv.caller
        if inv.kv.get(user_key(uid)) is not None:
            raise AlreadyRegistered(uid)
        password_hash, salt = inv.args
        if len(password_hash) != 64 or len(salt) != 32:
            raise InvalidArguments("password hash is 32 bytes hex, salt 16 bytes hex")
        try:
            bytes.fromhex(password_hash), bytes.fromhex(salt)
        except ValueError as exc:
            raise InvalidArguments("hash and salt must be hex") from exc
        record = {
            "password_hash": password_hash,
            "salt": salt,
            "ride_ids": [],
            "name": None,
            "driver": None,
        }
        inv.kv.put(user_key(uid), _dumps(record))
        return {"user_id": uid}

    def _unregister_user(self, inv: Invocation) -> None:
        uid = inv.caller
        user = self._load_user(inv)
        if inv.kv.get(request_key(uid)) is not None:
            raise RideInProgress("active ride request")
        if user.get("driver"):
            raw = inv.kv.get(driver_index_key(uid))
            if raw is not None and _loads(raw).get("active"):
                raise RideInProgress("driving an active ride")
            if raw is not None:
                inv.kv.delete(driver_index_key(uid))
        inv.kv.delete(user_key(uid))

    def _upgrade_to_driver(self, inv: Invocation) -> None:
        user = self._load_user(inv)
        if user.get("driver"):
            raise AlreadyDriver(inv.caller)
        name, make, model, year_raw = inv.args
        try:
            year = int(year_raw)
        except ValueError as exc:
            raise InvalidArguments("year must be an integer") from exc
        if not name or not make or not model:
            raise InvalidArguments("name, make, and model must be non-empty")
        if year <= 0:
            raise InvalidArguments("year must be positive")
        user["name"] = name
        user["driver"] = {"make": make, "model": model, "year": year}
        inv.kv.put(user_key(inv.caller), _dumps(user))

    def _get_user_info(self, inv: Invocation) -> dict:
        return self._load_user(inv)

    # --- ride lifecycle handlers ------------------------------------------

    def _request_ride(self, inv: Invocation) -> dict:
        uid = inv.caller
        self._load_user(inv)
        key = request_key(uid)
        if inv.kv.get(key) is not None:
            raise RideAlreadyActive(uid)
        pickup = _parse_point(inv.args[0])
        record = {
            "rider": uid,
            "status": STATUS_OPEN,
            "pickup": pickup.format(),
            "destination": None,
            "dropoff": None,
            "driver": None,
            "corider_pickups": [],
            "corider_dropoffs": [],
            "ride_id": None,
            "requested_at": inv.timestamp_ms,
            "request_tx_id": inv.tx_id.hex(),
        }
        inv.kv.put(key, _dumps(record))
        inv.kv.emit(EVENT_RIDE_REQUESTED, {"key": key, "point": pickup.format()})
        return {"key": key}

    def _accept_ride(self, inv: Invocation) -> dict:
        uid = inv.caller
        user = self._load_user(inv)
        if not user.get("driver"):
            raise NotADriver(uid)
        key = inv.args[0]
        raw = inv.kv.get(key)
        if raw is None:
            raise RideNotOpen(key)
        request = _loads(raw)
        if request["rider"] == uid:
            raise SelfAccept("drivers may not take their own requests")
        if request["status"] != STATUS_OPEN:
            raise RideNotOpen(request["status"])
        ride_id = compute_ride_id(request["rider"], bytes.fromhex(request["request_tx_id"]))
        request["status"] = STATUS_ACCEPTED
        request["driver"] = uid
        request["ride_id"] = ride_id
        inv.kv.put(key, _dumps(request))

        index_raw = inv.kv.get(driver_index_key(uid))
        index = _loads(index_raw) if index_raw is not None else {"active": [], "anchor": None}
        if not index["active"]:
            # first ride of a fresh group anchors the driver's archive
            index["anchor"] = ride_id
        index["active"].append(key)
        inv.kv.put(driver_index_key(uid), _dumps(index))

        inv.kv.emit(EVENT_RIDE_ACCEPTED, {"key": key, "point": request["pickup"]})
        return {"ride_id": ride_id}

    def _set_ride_destination(self, inv: Invocation) -> None:
        key = request_key(inv.caller)
        raw = inv.kv.get(key)
        if raw is None:
            raise NoActiveRide(inv.caller)
        request = _loads(raw)
        if request["status"] != STATUS_ACCEPTED:
            raise WrongStatus(request["status"])
        if request["destination"] is not None:
            raise AlreadySet("destination")
        destination = _parse_point(inv.args[0])
        request["destination"] = destination.format()
        inv.kv.put(key, _dumps(request))

    def _load_driven_request(self, inv: Invocation, key: str, expected_status: str) -> dict:
        """Common guards for driver-side ride operations: status first,
        then ownership, so a status mismatch reads the same regardless
        of who asks."""
        raw = inv.kv.get(key)
        if raw is None:
            raise NotYourRide(key)
        request = _loads(raw)
        if request["status"] != expected_status:
            raise WrongStatus(request["status"])
        if request["driver"] != inv.caller:
            raise NotYourRide(key)
        return request

    def _pickup_rider(self, inv: Invocation) -> None:
        key = inv.args[0]
        request = self._load_driven_request(inv, key, STATUS_ACCEPTED)
        if request["destination"] is None:
            raise DestinationNotSet(key)
        location = _parse_point(inv.args[1])
        pickup = GeoPoint.parse(request["pickup"])
        if haversine_m(location, pickup) > self.pickup_radius_m:
            raise NotAtPickupLocation(
                f"{haversine_m(location, pickup):.1f} m from the pickup point"
            )
        request["status"] = STATUS_PICKED_UP
        inv.kv.put(key, _dumps(request))
        inv.kv.emit(EVENT_DRIVER_ARRIVED, {"key": key, "point": location.format()})

    def _set_corider_information(self, inv: Invocation) -> None:
        key, corider, location_raw, kind = inv.args
        request = self._load_driven_request(inv, key, STATUS_PICKED_UP)
        if corider == request["rider"]:
            raise SelfCorider(corider)
        if not corider:
            raise InvalidArguments("empty co-rider id")
        if kind not in ("pickup", "dropoff"):
            raise InvalidArguments(f"kind must be pickup or dropoff, got {kind!r}")
        location = _parse_point(location_raw)
        field = "corider_pickups" if kind == "pickup" else "corider_dropoffs"
        request[field].append([corider, location.format()])
        inv.kv.put(key, _dumps(request))

    def _dropoff_rider(self, inv: Invocation) -> dict:
        key = inv.args[0]
        request = self._load_driven_request(inv, key, STATUS_PICKED_UP)
        location = _parse_point(inv.args[1])
        uid = inv.caller

        request["status"] = STATUS_DROPPING
        request["dropoff"] = location.format()
        inv.kv.put(key, _dumps(request))

        index = _loads(inv.kv.get(driver_index_key(uid)))
        anchor = index["anchor"] or request["ride_id"]
        archive_key = ride_key(uid, anchor)
        raw = inv.kv.get(archive_key)
        if raw is None:
            archive = {
                "ride_id": anchor,
                "role": "driver",
                "riders": [],
                "pickups": [],
                "dropoffs": [],
                "completed_at": inv.timestamp_ms,
            }
            # one history entry per ride group, added when the group
            # archives its first dropoff
            user = self._load_user(inv)
            user["ride_ids"].append(anchor)
            inv.kv.put(user_key(uid), _dumps(user))
        else:
            archive = _loads(raw)
        rider = request["rider"]
        archive["riders"].append(rider)
        archive["pickups"].append([rider, request["pickup"]])
        archive["dropoffs"].append([rider, location.format()])
        archive["completed_at"] = inv.timestamp_ms
        inv.kv.put(archive_key, _dumps(archive))

        index["active"] = [k for k in index["active"] if k != key]
        if not index["active"]:
            index["anchor"] = None
        inv.kv.put(driver_index_key(uid), _dumps(index))

        inv.kv.emit(
            EVENT_RIDE_ENDING,
            {"key": key, "ride_id": request["ride_id"], "point": location.format()},
        )
        return {"ride_id": request["ride_id"]}

    def _leave_driver(self, inv: Invocation) -> dict:
        uid = inv.caller
        key = request_key(uid)
        raw = inv.kv.get(key)
        if raw is None:
            raise NoActiveRide(uid)
        request = _loads(raw)
        if request["status"] != STATUS_DROPPING:
            raise WrongStatus(request["status"])
        dropoff = _parse_point(inv.args[0])
        ride_id = request["ride_id"]
        archive = {
            "ride_id": ride_id,
            "role": "rider",
            "driver": request["driver"],
            "pickup": request["pickup"],
            "dropoff": dropoff.format(),
            # witnessed co-rider events, copied verbatim from the
            # temporal record the driver maintained while on board
            "corider_pickups": request["corider_pickups"],
            "corider_dropoffs": request["corider_dropoffs"],
            "completed_at": inv.timestamp_ms,
        }
        inv.kv.put(ride_key(uid, ride_id), _dumps(archive))
        user = self._load_user(inv)
        user["ride_ids"].append(ride_id)
        inv.kv.put(user_key(uid), _dumps(user))
        inv.kv.delete(key)
        return {"ride_id": ride_id}

    def _get_ride(self, inv: Invocation) -> dict:
        self._load_user(inv)
        ride_id = inv.args[0]
        # only the caller's own archive key is consulted; rides that
        # exist under other participants' keys are indistinguishable
        # from rides that do not exist
        raw = inv.kv.get(ride_key(inv.caller, ride_id))
        if raw is None:
            raise NoSuchRide(ride_id)
        return _loads(raw)
