"""Contract semantics: registry, ride lifecycle, privacy, determinism.

The presence oracle used here (and at scale in the acceptance suite) is
independent of the contract: a rider witnesses an event iff it happens
strictly inside their own pickup/dropoff interval and concerns someone
else. Schedules are generated with distinct event times so the interval
rule and the on-board bookkeeping agree without boundary ties.
"""

from __future__ import annotations

import math
import random

import pytest

from hailchain.chaincode import (
    AlreadyDriver,
    AlreadyRegistered,
    AlreadySet,
    GeoPoint,
    InvalidArguments,
    NoActiveRide,
    NoSuchRide,
    NotADriver,
    NotAtPickupLocation,
    NotAuthorized,
    NotRegistered,
    NotYourRide,
    RideAlreadyActive,
    RideInProgress,
    RideNotOpen,
    SelfAccept,
    SelfCorider,
    WrongStatus,
    compute_ride_id,
    haversine_m,
    request_key,
)
from hailchain.identity import Role
from hailchain.ledger import KVContext, sha256
from hailchain.canonical import enc_bytes, enc_str

from support import ContractRunner

DOWNTOWN = "36.1627,-86.7816"
AIRPORT = "36.1263,-86.6774"
STADIUM = "36.1665,-86.7713"
GREYHOUND = "36.1498,-86.7769"
BELMONT = "36.1322,-86.7922"


@pytest.fixture
def run() -> ContractRunner:
    return ContractRunner()


# --- geography ----------------------------------------------------------


def test_geopoint_roundtrip_and_precision():
    point = GeoPoint.parse("36.1627,-86.7816")
    assert point.format() == "36.1627,-86.7816"
    # at most 7 fractional digits survive formatting
    long_form = GeoPoint(36.123456789, -86.987654321).format()
    lat_text, lon_text = long_form.split(",")
    assert len(lat_text.split(".")[1]) <= 7
    assert len(lon_text.split(".")[1]) <= 7
    assert GeoPoint.parse(long_form).format() == long_form
    assert GeoPoint(36.0, -86.0).format() == "36,-86"


def test_geopoint_rejects_out_of_range():
    for bad in ("91,0", "-91,0", "0,181", "0,-181", "nan,0", "0,inf", "1", "1,2,3"):
        with pytest.raises(ValueError):
            GeoPoint.parse(bad)


def equirectangular_m(a: GeoPoint, b: GeoPoint) -> float:
    """Independent small-distance oracle for the haversine check."""
    mean_lat = math.radians((a.lat + b.lat) / 2)
    dx = math.radians(b.lon - a.lon) * math.cos(mean_lat)
    dy = math.radians(b.lat - a.lat)
    return 6_371_000.0 * math.hypot(dx, dy)


def test_haversine_matches_small_distance_oracle():
    rng = random.Random(5)
    for _ in range(200):
        a = GeoPoint(rng.uniform(-60, 60), rng.uniform(-179, 179))
        b = GeoPoint(a.lat + rng.uniform(-0.01, 0.01), a.lon + rng.uniform(-0.01, 0.01))
        expected = equirectangular_m(a, b)
        got = haversine_m(a, b)
        assert got == pytest.approx(expected, rel=0.01, abs=0.5)


def test_nearby_pickup_is_within_radius():
    a = GeoPoint.parse("36.1627,-86.7816")
    b = GeoPoint.parse("36.1630,-86.7810")
    assert haversine_m(a, b) < 100.0


# --- registry -----------------------------------------------------------


def test_register_and_get_user_info(run):
    rider = run.register("eDUwOT", org="Org2PeerOrgMSP")
    assert rider.user_id == "eDUwOT@Org2PeerOrgMSP"
    info = run.query(rider, "getUserInfo", [])
    assert info["ride_ids"] == []
    assert info["driver"] is None
    assert info["password_hash"] == "ab" * 32


def test_register_twice_rejected(run):
    rider = run.register("alice")
    with pytest.raises(AlreadyRegistered):
        run.invoke(rider, "registerUser", ["ab" * 32, "cd" * 16])


def test_register_validates_hash_and_salt(run):
    client = run.new_client("bob")
    with pytest.raises(InvalidArguments):
        run.invoke(client, "registerUser", ["xy", "cd" * 16])
    with pytest.raises(InvalidArguments):
        run.invoke(client, "registerUser", ["zz" * 32, "cd" * 16])


def test_unregister_then_reregister_fresh(run):
    rider = run.register("carol")
    driver = run.register_driver("driverA")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    run.invoke(driver, "acceptRide", [request_key(rider.user_id)])
    run.invoke(rider, "setRideDestination", [AIRPORT])
    run.invoke(driver, "pickupRider", [request_key(rider.user_id), DOWNTOWN])
    run.invoke(driver, "dropoffRider", [request_key(rider.user_id), AIRPORT])
    run.invoke(rider, "leaveDriver", [AIRPORT])
    assert run.query(rider, "getUserInfo", [])["ride_ids"] != []
    run.invoke(rider, "unregisterUser", [])
    with pytest.raises(NotRegistered):
        run.query(rider, "getUserInfo", [])
    run.invoke(rider, "registerUser", ["ab" * 32, "cd" * 16])
    assert run.query(rider, "getUserInfo", [])["ride_ids"] == []


def test_unregister_blocked_by_active_request(run):
    rider = run.register("dana")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    with pytest.raises(RideInProgress):
        run.invoke(rider, "unregisterUser", [])


def test_unregister_blocked_while_driving(run):
    rider = run.register("erin")
    driver = run.register_driver("driverB")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    run.invoke(driver, "acceptRide", [request_key(rider.user_id)])
    with pytest.raises(RideInProgress):
        run.invoke(driver, "unregisterUser", [])


def test_upgrade_to_driver(run):
    user = run.register("frank")
    run.invoke(user, "upgradeToDriver", ["Frank", "Nissan", "Leaf", "2019"])
    info = run.query(user, "getUserInfo", [])
    assert info["driver"] == {"make": "Nissan", "model": "Leaf", "year": 2019}
    assert info["name"] == "Frank"
    with pytest.raises(AlreadyDriver):
        run.invoke(user, "upgradeToDriver", ["Frank", "Nissan", "Leaf", "2019"])


def test_upgrade_rejects_year_zero(run):
    user = run.register("gina")
    with pytest.raises(InvalidArguments):
        run.invoke(user, "upgradeToDriver", ["Gina", "Honda", "Fit", "0"])


def test_non_client_role_rejected(run):
    peer = run.new_client("rogue", role=Role.PEER)
    with pytest.raises(NotAuthorized):
        run.invoke(peer, "registerUser", ["ab" * 32, "cd" * 16])


def test_unknown_function_and_bad_arity(run):
    rider = run.register("hank")
    with pytest.raises(InvalidArguments):
        run.invoke(rider, "mintTokens", [])
    with pytest.raises(InvalidArguments):
        run.invoke(rider, "requestRide", [])


# --- ride lifecycle --------------------------------------------------------


def start_ride(run, rider, driver, pickup=DOWNTOWN, destination=AIRPORT):
    run.invoke(rider, "requestRide", [pickup])
    key = request_key(rider.user_id)
    run.invoke(driver, "acceptRide", [key])
    run.invoke(rider, "setRideDestination", [destination])
    run.invoke(driver, "pickupRider", [key, pickup])
    return key


def test_happy_path_emits_expected_events(run):
    rider = run.register("ines")
    driver = run.register_driver("driverC")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    assert [e.name for e in run.last_events] == ["RideRequested"]
    key = request_key(rider.user_id)
    assert run.last_events[0].payload_dict() == {"key": key, "point": DOWNTOWN}

    ride = run.invoke(driver, "acceptRide", [key])
    assert [e.name for e in run.last_events] == ["RideAccepted"]
    run.invoke(rider, "setRideDestination", [AIRPORT])
    assert run.last_events == []

    run.invoke(driver, "pickupRider", [key, DOWNTOWN])
    assert [e.name for e in run.last_events] == ["DriverArrived"]

    run.invoke(driver, "dropoffRider", [key, AIRPORT])
    assert [e.name for e in run.last_events] == ["RideEnding"]
    ending = run.last_events[0].payload_dict()
    assert ending["ride_id"] == ride["ride_id"]

    result = run.invoke(rider, "leaveDriver", [AIRPORT])
    assert result["ride_id"] == ride["ride_id"]
    # temporal record deleted once the rider leaves
    assert run.ledger.state.get(key) is None


def test_ride_id_binds_rider_and_request_tx(run):
    rider = run.register("judy")
    driver = run.register_driver("driverD")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    key = request_key(rider.user_id)
    import json

    request = json.loads(run.ledger.state.get(key)[0])
    ride = run.invoke(driver, "acceptRide", [key])
    expected = sha256(
        enc_str(rider.user_id) + enc_bytes(bytes.fromhex(request["request_tx_id"]))
    ).hex()
    assert ride["ride_id"] == expected
    assert compute_ride_id(rider.user_id, bytes.fromhex(request["request_tx_id"])) == expected


def test_one_active_request_per_rider(run):
    rider = run.register("kara")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    with pytest.raises(RideAlreadyActive):
        run.invoke(rider, "requestRide", [STADIUM])


def test_accept_requires_driver_profile(run):
    rider = run.register("lena")
    not_driver = run.register("mo")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    with pytest.raises(NotADriver):
        run.invoke(not_driver, "acceptRide", [request_key(rider.user_id)])


def test_accept_own_request_rejected(run):
    driver = run.register_driver("nico")
    run.invoke(driver, "requestRide", [DOWNTOWN])
    with pytest.raises(SelfAccept):
        run.invoke(driver, "acceptRide", [request_key(driver.user_id)])


def test_accept_missing_or_taken_request(run):
    driver = run.register_driver("driverE")
    driver2 = run.register_driver("driverF")
    rider = run.register("omar")
    with pytest.raises(RideNotOpen):
        run.invoke(driver, "acceptRide", [request_key(rider.user_id)])
    run.invoke(rider, "requestRide", [DOWNTOWN])
    run.invoke(driver, "acceptRide", [request_key(rider.user_id)])
    with pytest.raises(RideNotOpen):
        run.invoke(driver2, "acceptRide", [request_key(rider.user_id)])


def test_destination_only_once_and_only_when_accepted(run):
    rider = run.register("pia")
    driver = run.register_driver("driverG")
    with pytest.raises(NoActiveRide):
        run.invoke(rider, "setRideDestination", [AIRPORT])
    run.invoke(rider, "requestRide", [DOWNTOWN])
    with pytest.raises(WrongStatus):
        run.invoke(rider, "setRideDestination", [AIRPORT])
    run.invoke(driver, "acceptRide", [request_key(rider.user_id)])
    run.invoke(rider, "setRideDestination", [AIRPORT])
    with pytest.raises(AlreadySet):
        run.invoke(rider, "setRideDestination", [STADIUM])


def test_pickup_requires_destination(run):
    rider = run.register("quin")
    driver = run.register_driver("driverH")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    key = request_key(rider.user_id)
    run.invoke(driver, "acceptRide", [key])
    with pytest.raises(WrongStatus):  # destination still unset
        run.invoke(driver, "pickupRider", [key, DOWNTOWN])


def test_pickup_by_other_driver_rejected(run):
    rider = run.register("rosa")
    driver = run.register_driver("driverI")
    other = run.register_driver("driverJ")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    key = request_key(rider.user_id)
    run.invoke(driver, "acceptRide", [key])
    run.invoke(rider, "setRideDestination", [AIRPORT])
    with pytest.raises(NotYourRide):
        run.invoke(other, "pickupRider", [key, DOWNTOWN])


def test_pickup_distance_gate(run):
    rider = run.register("sara")
    driver = run.register_driver("driverK")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    key = request_key(rider.user_id)
    run.invoke(driver, "acceptRide", [key])
    run.invoke(rider, "setRideDestination", [AIRPORT])
    with pytest.raises(NotAtPickupLocation):
        run.invoke(driver, "pickupRider", [key, STADIUM])  # ~1 km away
    run.invoke(driver, "pickupRider", [key, "36.1630,-86.7810"])  # ~64 m away


def test_pickup_radius_is_configurable():
    tight = ContractRunner(pickup_radius_m=5.0)
    rider = tight.register("toni")
    driver = tight.register_driver("driverL")
    tight.invoke(rider, "requestRide", [DOWNTOWN])
    key = request_key(rider.user_id)
    tight.invoke(driver, "acceptRide", [key])
    tight.invoke(rider, "setRideDestination", [AIRPORT])
    with pytest.raises(NotAtPickupLocation):
        tight.invoke(driver, "pickupRider", [key, "36.1630,-86.7810"])


def test_self_corider_rejected(run):
    rider = run.register("uma")
    driver = run.register_driver("driverM")
    key = start_ride(run, rider, driver)
    with pytest.raises(SelfCorider):
        run.invoke(driver, "setCoriderInformation", [key, rider.user_id, STADIUM, "pickup"])


def test_corider_kind_validated(run):
    rider = run.register("vera")
    driver = run.register_driver("driverN")
    key = start_ride(run, rider, driver)
    with pytest.raises(InvalidArguments):
        run.invoke(driver, "setCoriderInformation", [key, "x@Org1PeerOrgMSP", STADIUM, "sideways"])


def test_get_ride_isolated_between_users(run):
    rider = run.register("wes")
    other = run.register("xena")
    driver = run.register_driver("driverO")
    key = start_ride(run, rider, driver)
    run.invoke(driver, "dropoffRider", [key, AIRPORT])
    ride_id = run.invoke(rider, "leaveDriver", [AIRPORT])["ride_id"]

    mine = run.query(rider, "getRide", [ride_id])
    assert mine["role"] == "rider"
    theirs = run.query(driver, "getRide", [ride_id])
    assert theirs["role"] == "driver"
    with pytest.raises(NoSuchRide):
        run.query(other, "getRide", [ride_id])
    with pytest.raises(NoSuchRide):
        run.query(rider, "getRide", ["00" * 32])


# --- exhaustive (operation, status) matrix ------------------------------------


def build_request_in_status(run, rider, driver, status: str, with_destination: bool = False) -> str:
    run.invoke(rider, "requestRide", [DOWNTOWN])
    key = request_key(rider.user_id)
    if status == "open":
        return key
    run.invoke(driver, "acceptRide", [key])
    if status == "accepted":
        if with_destination:
            run.invoke(rider, "setRideDestination", [AIRPORT])
        return key
    run.invoke(rider, "setRideDestination", [AIRPORT])
    run.invoke(driver, "pickupRider", [key, DOWNTOWN])
    if status == "picked_up":
        return key
    run.invoke(driver, "dropoffRider", [key, AIRPORT])
    assert status == "dropping"
    return key


LEGAL_STATUS = {
    "acceptRide": "open",
    "setRideDestination": "accepted",
    "pickupRider": "accepted",
    "setCoriderInformation": "picked_up",
    "dropoffRider": "picked_up",
    "leaveDriver": "dropping",
}


@pytest.mark.parametrize("status", ["open", "accepted", "picked_up", "dropping"])
@pytest.mark.parametrize("op", sorted(LEGAL_STATUS))
def test_status_matrix(op, status):
    """Every lifecycle operation invoked in every status: the legal cell
    succeeds, every other cell fails with a WrongStatus-family error."""
    run = ContractRunner()
    rider = run.register("rider")
    driver = run.register_driver("driver")
    second = run.register_driver("second")
    # the accepted fixture needs a destination only for pickupRider's
    # legal cell; setRideDestination's legal cell needs it unset
    key = build_request_in_status(run, rider, driver, status, with_destination=(op == "pickupRider"))

    calls = {
        "acceptRide": (second, [key]),
        "setRideDestination": (rider, [STADIUM]),
        "pickupRider": (driver, [key, DOWNTOWN]),
        "setCoriderInformation": (driver, [key, "co@Org1PeerOrgMSP", STADIUM, "pickup"]),
        "dropoffRider": (driver, [key, AIRPORT]),
        "leaveDriver": (rider, [AIRPORT]),
    }
    caller, args = calls[op]

    if status == LEGAL_STATUS[op]:
        run.invoke(caller, op, args)
    else:
        with pytest.raises(WrongStatus):
            run.invoke(caller, op, args)

    if op == "leaveDriver" and status == "dropping":
        # the legal leave deleted the request, so a new one opens fine
        run.invoke(rider, "requestRide", [BELMONT])
    else:
        # a second request while any request exists is always rejected
        with pytest.raises(RideAlreadyActive):
            run.invoke(rider, "requestRide", [BELMONT])


# --- privacy: the two-rider scenario -----------------------------------------


def run_corider_scenario(run):
    """Driver picks up R1, then R2; drops R1, then R2. The gateway-side
    bookkeeping (record each event into the requests of everyone else
    on board) is replayed here explicitly."""
    r1 = run.register("rider1", org="Org1PeerOrgMSP")
    r2 = run.register("rider2", org="Org2PeerOrgMSP")
    driver = run.register_driver("driver1", org="Org1PeerOrgMSP")
    k1, k2 = request_key(r1.user_id), request_key(r2.user_id)

    run.invoke(r1, "requestRide", [AIRPORT])
    run.invoke(driver, "acceptRide", [k1])
    run.invoke(r1, "setRideDestination", [STADIUM])
    run.invoke(driver, "pickupRider", [k1, AIRPORT])

    run.invoke(r2, "requestRide", [GREYHOUND])
    run.invoke(driver, "acceptRide", [k2])
    run.invoke(r2, "setRideDestination", [BELMONT])
    run.invoke(driver, "pickupRider", [k2, GREYHOUND])
    # R1 is on board while R2 boards
    run.invoke(driver, "setCoriderInformation", [k1, r2.user_id, GREYHOUND, "pickup"])

    run.invoke(driver, "dropoffRider", [k1, STADIUM])
    # R2 is on board while R1 leaves
    run.invoke(driver, "setCoriderInformation", [k2, r1.user_id, STADIUM, "dropoff"])
    ride1 = run.invoke(r1, "leaveDriver", [STADIUM])["ride_id"]

    run.invoke(driver, "dropoffRider", [k2, BELMONT])
    ride2 = run.invoke(r2, "leaveDriver", [BELMONT])["ride_id"]
    return r1, r2, driver, ride1, ride2


def test_corider_privacy_is_exact(run):
    r1, r2, driver, ride1, ride2 = run_corider_scenario(run)

    a1 = run.query(r1, "getRide", [ride1])
    assert a1["pickup"] == AIRPORT and a1["dropoff"] == STADIUM
    assert a1["corider_pickups"] == [[r2.user_id, GREYHOUND]]
    assert a1["corider_dropoffs"] == []  # R2 left after R1
    assert a1["driver"] == driver.user_id

    a2 = run.query(r2, "getRide", [ride2])
    assert a2["pickup"] == GREYHOUND and a2["dropoff"] == BELMONT
    assert a2["corider_pickups"] == []  # R1 boarded before R2
    assert a2["corider_dropoffs"] == [[r1.user_id, STADIUM]]

    # overlapping rides archive as one driver record under the first ride's id
    d = run.query(driver, "getRide", [ride1])
    assert d["role"] == "driver"
    assert sorted(d["riders"]) == sorted([r1.user_id, r2.user_id])
    assert [r2.user_id, GREYHOUND] in d["pickups"] and [r1.user_id, AIRPORT] in d["pickups"]
    assert [r1.user_id, STADIUM] in d["dropoffs"] and [r2.user_id, BELMONT] in d["dropoffs"]
    with pytest.raises(NoSuchRide):
        run.query(driver, "getRide", [ride2])
    assert run.query(driver, "getUserInfo", [])["ride_ids"] == [ride1]


def test_rider_archives_receive_distinct_ride_ids(run):
    r1, r2, _driver, ride1, ride2 = run_corider_scenario(run)
    assert ride1 != ride2
    assert run.query(r1, "getUserInfo", [])["ride_ids"] == [ride1]
    assert run.query(r2, "getUserInfo", [])["ride_ids"] == [ride2]


# --- presence property ---------------------------------------------------------


def make_schedule(rng: random.Random, n_riders: int) -> list[tuple[int, str, int]]:
    """Random boarding schedule: distinct times, pickup before dropoff.
    Returns chronological (time, kind, rider_index) events."""
    times = rng.sample(range(1, 1000), n_riders * 2)
    events = []
    for i in range(n_riders):
        a, b = times[2 * i], times[2 * i + 1]
        start, end = min(a, b), max(a, b)
        events.append((start, "pickup", i))
        events.append((end, "dropoff", i))
    return sorted(events)


def oracle_witnessed(schedule, subject: int, kind: str, rider: int) -> bool:
    """True iff `rider` is on board when `subject`'s event of `kind` occurs."""
    spans = {}
    for t, k, i in schedule:
        spans.setdefault(i, {})[k] = t
    t_event = spans[subject][kind]
    return rider != subject and spans[rider]["pickup"] <= t_event <= spans[rider]["dropoff"]


def drive_schedule(run, schedule, n_riders):
    """Execute a schedule with one driver, replaying the on-board
    bookkeeping, and return each rider's archive."""
    driver = run.register_driver("bus")
    riders = [run.register(f"r{i}") for i in range(n_riders)]
    keys = [request_key(r.user_id) for r in riders]
    points = [GeoPoint(36.0 + i * 0.001, -86.0).format() for i in range(n_riders)]
    for i, rider in enumerate(riders):
        run.invoke(rider, "requestRide", [points[i]])
        run.invoke(driver, "acceptRide", [keys[i]])
        run.invoke(rider, "setRideDestination", [points[i]])
    onboard: set[int] = set()
    for _t, kind, i in schedule:
        if kind == "pickup":
            run.invoke(driver, "pickupRider", [keys[i], points[i]])
            for other in onboard:
                run.invoke(driver, "setCoriderInformation", [keys[other], riders[i].user_id, points[i], "pickup"])
            onboard.add(i)
        else:
            onboard.discard(i)
            run.invoke(driver, "dropoffRider", [keys[i], points[i]])
            for other in onboard:
                run.invoke(driver, "setCoriderInformation", [keys[other], riders[i].user_id, points[i], "dropoff"])
    archives = []
    for i, rider in enumerate(riders):
        ride_id = run.invoke(rider, "leaveDriver", [points[i]])["ride_id"]
        archives.append(run.query(rider, "getRide", [ride_id]))
    return riders, archives, driver


@pytest.mark.parametrize("seed", range(12))
def test_presence_matches_interval_oracle(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 6)
    schedule = make_schedule(rng, n)
    run = ContractRunner()
    riders, archives, driver = drive_schedule(run, schedule, n)

    for i, archive in enumerate(archives):
        witnessed_pickups = {(uid, pt) for uid, pt in archive["corider_pickups"]}
        witnessed_dropoffs = {(uid, pt) for uid, pt in archive["corider_dropoffs"]}
        for j in range(n):
            if j == i:
                continue
            expect_pickup = oracle_witnessed(schedule, j, "pickup", i)
            expect_dropoff = oracle_witnessed(schedule, j, "dropoff", i)
            assert (riders[j].user_id in {u for u, _ in witnessed_pickups}) == expect_pickup
            assert (riders[j].user_id in {u for u, _ in witnessed_dropoffs}) == expect_dropoff

    # driver completeness: every pickup and dropoff appears in the
    # union of the driver's archived records
    info = run.query(driver, "getUserInfo", [])
    all_pickups: list = []
    all_dropoffs: list = []
    for rid in info["ride_ids"]:
        rec = run.query(driver, "getRide", [rid])
        all_pickups.extend(rec["pickups"])
        all_dropoffs.extend(rec["dropoffs"])
    assert len(all_pickups) == n and len(all_dropoffs) == n
    assert {uid for uid, _ in all_pickups} == {r.user_id for r in riders}


# --- rwset discipline ------------------------------------------------------------


ALLOWED_PREFIX_OPS = {
    "registerUser",
    "unregisterUser",
    "upgradeToDriver",
    "requestRide",
    "setRideDestination",
    "leaveDriver",
}


def allowed_write(key: str, caller_uid: str, driven_keys: set[str]) -> bool:
    if key.startswith(("user:", "rideRequest:", "driverRides:")):
        owner = key.split(":", 1)[1]
        return owner == caller_uid or key in driven_keys
    if key.startswith("ride:"):
        return key.split(":", 2)[1] == caller_uid
    return False


def test_key_isolation_across_fuzzed_lifecycles():
    """Every write key is bound to the caller's id or to a ride the
    caller drives; checked over randomized full lifecycles."""
    rng = random.Random(42)
    run = ContractRunner()
    drivers = [run.register_driver(f"d{i}") for i in range(2)]
    riders = [run.register(f"p{i}") for i in range(4)]

    for _round in range(25):
        rider = rng.choice(riders)
        driver = rng.choice(drivers)
        key = request_key(rider.user_id)
        steps = [
            (rider, "requestRide", [GeoPoint(36 + rng.random(), -86).format()]),
            (driver, "acceptRide", [key]),
            (rider, "setRideDestination", [GeoPoint(36, -86 - rng.random()).format()]),
            (driver, "pickupRider", [key, None]),  # filled below
            (driver, "dropoffRider", [key, GeoPoint(35.9, -86.1).format()]),
            (rider, "leaveDriver", [GeoPoint(35.9, -86.1).format()]),
        ]
        import json as _json

        for caller, fn, args in steps:
            if fn == "pickupRider":
                request = _json.loads(run.ledger.state.get(key)[0])
                args = [key, request["pickup"]]
            run.invoke(caller, fn, args)
            driven = {key} if caller is driver else set()
            for write in run.last_rwset.writes:
                assert allowed_write(write.key, caller.user_id, driven), (
                    fn,
                    write.key,
                    caller.user_id,
                )


def test_execution_is_deterministic_for_fixed_inputs(run):
    rider = run.register("yuri")
    run.invoke(rider, "requestRide", [DOWNTOWN])
    driver = run.register_driver("driverP")

    snapshot = run.ledger.state.snapshot()
    blobs = set()
    for _ in range(3):
        kv = KVContext(snapshot)
        run.contract.execute(
            kv, "acceptRide", [request_key(rider.user_id)], driver.cert, b"\x01" * 32, 123456
        )
        blobs.add(kv.rwset().to_bytes())
    assert len(blobs) == 1
