"""HTTP and server-sent-event surface over the gateway.

One process hosts one wall-clock network. Authentication is a bearer
token handed out by /register and /login; the token also rides a
query parameter because EventSource cannot set headers. Each token owns
one event queue: rider progress states and driver ride offers are
pushed there as they commit, and /events drains it as an SSE stream.

The transport carries only what the chain's own privacy rules release:
ride history comes straight from per-user archive records, so a rider's
payload physically lacks the co-rider fields they are not entitled to.
"""

from __future__ import annotations

import contextlib
import json
import queue
import secrets
import threading
from dataclasses import dataclass, field as dc_field

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .chaincode import ChaincodeError, NotADriver
from .gateway import (
    ActiveRide,
    AuthFailed,
    DriverShift,
    GatewayError,
    GatewayService,
    GeocodeMiss,
    Geocoder,
    RideFlow,
    RideOffer,
    Session,
    TxRejected,
)
from .identity import DuplicateLocalId
from .netsim import WALL, Network, TopologyConfig, build_network

SSE_POLL_S = 0.25


class RegisterBody(BaseModel):
    org: str
    user: str
    password: str
    name: str = ""


class LoginBody(BaseModel):
    org: str
    user: str
    password: str
    role: str = "rider"


class UpgradeBody(BaseModel):
    name: str
    make: str
    model: str
    year: int


class StartBody(BaseModel):
    location: str
    rescan: bool = False


class RespondBody(BaseModel):
    key: str
    accept: bool


class MoveBody(BaseModel):
    key: str
    location: str


class RequestBody(BaseModel):
    origin: str = Field(alias="from")
    destination: str = Field(alias="to")


@dataclass
class TokenState:
    session: Session
    events: "queue.Queue[dict]" = dc_field(default_factory=queue.Queue)
    shift: DriverShift | None = None
    flows: dict[str, RideFlow] = dc_field(default_factory=dict)
    rides: dict[str, ActiveRide] = dc_field(default_factory=dict)
    offers: dict[str, RideOffer] = dc_field(default_factory=dict)


def _offer_json(offer: RideOffer) -> dict:
    return {
        "type": "offer",
        "key": offer.key,
        "rider_id": offer.rider_id,
        "pickup": offer.pickup,
        "at": offer.at,
    }


def create_app(
    config: TopologyConfig | None = None,
    places_path: str | None = None,
    network: Network | None = None,
) -> FastAPI:
    """Build the app and start its network immediately.

    The network stops on application shutdown; tests that skip the
    lifespan should call app.state.network.stop() themselves.
    """
    if network is None:
        network = build_network(config or TopologyConfig.default(), WALL)
    if network.mode != WALL:
        raise GatewayError("the HTTP API needs a wall-clock network")
    network.start()
    gateway = GatewayService(network, Geocoder.from_file(places_path))

    @contextlib.asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        network.stop()

    app = FastAPI(title="hailchain gateway", lifespan=lifespan)
    app.state.network = network
    app.state.gateway = gateway

    tokens: dict[str, TokenState] = {}
    lock = threading.Lock()

    def issue_token(session: Session) -> str:
        token = secrets.token_urlsafe(16)
        with lock:
            tokens[token] = TokenState(session)
        return token

    def current(request: Request) -> TokenState:
        header = request.headers.get("authorization", "")
        token = header.removeprefix("Bearer ").strip() if header else ""
        if not token:
            token = request.query_params.get("token", "")
        with lock:
            state = tokens.get(token)
        if state is None:
            raise HTTPException(401, detail="missing or unknown token")
        return state

    def fail(exc: Exception) -> HTTPException:
        name = type(exc).__name__
        if isinstance(exc, AuthFailed):
            return HTTPException(401, detail={"code": name, "error": str(exc)})
        if isinstance(exc, NotADriver):
            return HTTPException(403, detail={"code": name, "error": str(exc)})
        if isinstance(exc, (DuplicateLocalId, TxRejected)):
            return HTTPException(409, detail={"code": name, "error": str(exc)})
        if isinstance(exc, (GeocodeMiss, ChaincodeError, GatewayError)):
            return HTTPException(400, detail={"code": name, "error": str(exc)})
        raise exc

    # --- accounts ---------------------------------------------------

    @app.post("/register")
    def register(body: RegisterBody):
        try:
            session = gateway.register(body.org, body.user, body.password, body.name)
        except Exception as exc:
            raise fail(exc)
        return {"token": issue_token(session), "user_id": session.user_id, "role": "rider"}

    @app.post("/login")
    def login(body: LoginBody):
        try:
            session = gateway.login(body.org, body.user, body.password, body.role)
        except Exception as exc:
            raise fail(exc)
        return {
            "token": issue_token(session),
            "user_id": session.user_id,
            "role": session.role_view,
        }

    @app.post("/driver/upgrade")
    def upgrade(body: UpgradeBody, state: TokenState = Depends(current)):
        try:
            state.session.upgrade_to_driver(body.name, body.make, body.model, body.year)
        except Exception as exc:
            raise fail(exc)
        return {"ok": True}

    # --- driver side -------------------------------------------------

    @app.post("/driver/start")
    def driver_start(body: StartBody, state: TokenState = Depends(current)):
        if state.shift is not None:
            raise HTTPException(409, detail={"code": "ShiftOpen", "error": "already driving"})

        def push(offer: RideOffer) -> None:
            state.offers[offer.key] = offer
            state.events.put(_offer_json(offer))

        try:
            state.shift = gateway.start_driving(state.session, body.location, push)
        except Exception as exc:
            raise fail(exc)
        open_requests = []
        if body.rescan:
            for offer in state.shift.rescan():
                state.offers[offer.key] = offer
                open_requests.append(_offer_json(offer))
        return {"started": True, "open_requests": open_requests}

    def need_shift(state: TokenState) -> DriverShift:
        if state.shift is None:
            raise HTTPException(409, detail={"code": "NoShift", "error": "not driving"})
        return state.shift

    @app.post("/driver/respond")
    def driver_respond(body: RespondBody, state: TokenState = Depends(current)):
        shift = need_shift(state)
        offer = state.offers.get(body.key)
        if offer is None:
            raise HTTPException(404, detail={"code": "UnknownOffer", "error": body.key})
        if not body.accept:
            state.offers.pop(body.key, None)
            return {"denied": True}
        try:
            ride = shift.respond(offer, True)
        except Exception as exc:
            state.offers.pop(body.key, None)  # taken rides never come back
            raise fail(exc)
        state.offers.pop(body.key, None)
        state.rides[ride.key] = ride
        return {
            "ride": {
                "key": ride.key,
                "rider_id": ride.rider_id,
                "ride_id": ride.ride_id,
                "pickup": ride.pickup,
            }
        }

    def need_ride(state: TokenState, key: str) -> ActiveRide:
        ride = state.rides.get(key)
        if ride is None:
            raise HTTPException(404, detail={"code": "UnknownRide", "error": key})
        return ride

    @app.post("/driver/pickup")
    def driver_pickup(body: MoveBody, state: TokenState = Depends(current)):
        shift = need_shift(state)
        ride = need_ride(state, body.key)
        try:
            shift.pickup(ride, body.location)
        except Exception as exc:
            raise fail(exc)
        return {"ok": True, "onboard": [r.rider_id for r in shift.onboard]}

    @app.post("/driver/dropoff")
    def driver_dropoff(body: MoveBody, state: TokenState = Depends(current)):
        shift = need_shift(state)
        ride = need_ride(state, body.key)
        try:
            ride_id = shift.dropoff(ride, body.location)
        except Exception as exc:
            raise fail(exc)
        state.rides.pop(body.key, None)
        return {"ride_id": ride_id, "onboard": [r.rider_id for r in shift.onboard]}

    # --- rider side ----------------------------------------------------

    @app.post("/rider/request")
    def rider_request(body: RequestBody, state: TokenState = Depends(current)):
        try:
            flow = gateway.request_ride(
                state.session,
                body.origin,
                body.destination,
                watch=lambda entry: state.events.put({"type": "progress", **entry}),
            )
        except Exception as exc:
            raise fail(exc)
        state.flows[flow.key] = flow
        return {"key": flow.key}

    @app.get("/rider/status")
    def rider_status(state: TokenState = Depends(current)):
        return {
            "flows": {
                key: {
                    "states": flow.states(),
                    "progress": flow.progress,
                    "ride_id": flow.ride_id,
                    "finished": flow.finished,
                    "error": flow.error,
                }
                for key, flow in state.flows.items()
            }
        }

    @app.get("/rides")
    def rides(state: TokenState = Depends(current)):
        try:
            return {"rides": state.session.ride_history()}
        except Exception as exc:
            raise fail(exc)

    # --- events and health ----------------------------------------------

    @app.get("/events")
    def events(once: bool = False, state: TokenState = Depends(current)):
        def fmt(item):
            return f"data: {json.dumps(item, separators=(',', ':'))}\n\n"

        def drain():
            # bounded variant for polling clients: flush what is queued, then end
            while True:
                try:
                    yield fmt(state.events.get_nowait())
                except queue.Empty:
                    return

        def stream():
            while True:
                try:
                    item = state.events.get(timeout=SSE_POLL_S)
                except queue.Empty:
                    yield ": keepalive\n\n"
                    continue
                yield fmt(item)

        body = drain() if once else stream()
        return StreamingResponse(body, media_type="text/event-stream")

    @app.get("/health")
    def health():
        return {
            "ok": True,
            "mode": network.mode,
            "peers": len(network.peers),
            "orgs": [org.name for org in network.config.orgs],
            "height": network.peers[0].ledger.height,
        }

    return app
