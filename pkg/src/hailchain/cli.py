"""Command-line console.

serve hosts a wall-clock network behind the HTTP gateway. register,
login, ride, drive, and history are thin HTTP clients against that
server, so a multi-terminal demo (one serve, one drive, one ride)
behaves like the deployed system would. bench and ledger dump work on
local in-process state instead and need no server.
"""

import json
import os
import queue
import threading
import time

import click
import httpx

from .harness import (
    CSV_HEADER,
    SWEEP_PRESETS,
    WorkloadSpec,
    export_csv,
    parse_profile,
    run_load,
    run_sweep,
)
from .ledger import dump_chain_json, read_chain, verify_chain, write_chain
from .netsim import TopologyConfig, build_network

DEFAULT_SERVER = "http://127.0.0.1:8000"
POLL_S = 0.25


def _load_topology(path: str | None) -> TopologyConfig:
    path = path or os.environ.get("HAILCHAIN_TOPOLOGY")
    return TopologyConfig.from_file(path) if path else TopologyConfig.default()


def _http(server: str) -> httpx.Client:
    return httpx.Client(base_url=server, timeout=60.0)


def _check(response: httpx.Response) -> dict:
    if response.status_code >= 400:
        try:
            detail = response.json()["detail"]
            message = f"{detail.get('code', 'Error')}: {detail.get('error', '')}"
        except Exception:
            message = response.text
        raise click.ClickException(message)
    return response.json()


def _resolve_token(client, token, org, user, password, role):
    if token:
        return token
    if not (org and user and password):
        raise click.ClickException("pass --token, or --org/--user/--password to log in")
    body = {"org": org, "user": user, "password": password, "role": role}
    return _check(client.post("/login", json=body))["token"]


def auth_options(fn):
    fn = click.option("--token", envvar="HAILCHAIN_TOKEN", help="session token")(fn)
    fn = click.option("--org", help="organization MSP id")(fn)
    fn = click.option("--user", help="local user id")(fn)
    fn = click.option("--password", help="account password")(fn)
    return fn


server_option = click.option(
    "--server",
    envvar="HAILCHAIN_SERVER",
    default=DEFAULT_SERVER,
    show_default=True,
    help="gateway base URL",
)


@click.group()
def main():
    """Permissioned ride-hailing console."""


# --- server -----------------------------------------------------------------


@main.command()
@click.option("--topology", type=click.Path(exists=True), help="topology JSON file")
@click.option("--places", type=click.Path(exists=True), help="place fixture JSON file")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(topology, places, host, port):
    """Run the chain and the HTTP gateway in one process."""
    import uvicorn

    from .httpapi import create_app

    app = create_app(config=_load_topology(topology), places_path=places)
    peers = len(app.state.network.peers)
    click.echo(f"serving {peers} peers on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


# --- account commands ---------------------------------------------------------


@main.command()
@server_option
@click.option("--org", required=True)
@click.option("--user", required=True)
@click.option("--password", prompt=True, hide_input=True)
@click.option("--name", default="", help="display name")
def register(server, org, user, password, name):
    """Create an account; prints the session token."""
    with _http(server) as client:
        body = {"org": org, "user": user, "password": password, "name": name}
        token = _check(client.post("/register", json=body))["token"]
    click.echo(token)


@main.command()
@server_option
@click.option("--org", required=True)
@click.option("--user", required=True)
@click.option("--password", prompt=True, hide_input=True)
@click.option(
    "--role",
    type=click.Choice(["rider", "driver"]),
    default="rider",
    show_default=True,
)
def login(server, org, user, password, role):
    """Authenticate; prints the session token."""
    with _http(server) as client:
        body = {"org": org, "user": user, "password": password, "role": role}
        token = _check(client.post("/login", json=body))["token"]
    click.echo(token)


@main.command()
@server_option
@auth_options
def history(server, token, org, user, password):
    """Print the caller's archived rides as JSON."""
    with _http(server) as client:
        token = _resolve_token(client, token, org, user, password, "rider")
        rides = _check(client.get("/rides", headers=_bearer(token)))["rides"]
    click.echo(json.dumps(rides, indent=2))


def _bearer(token):
    return {"Authorization": f"Bearer {token}"}


# --- rider ----------------------------------------------------------------


@main.command()
@server_option
@auth_options
@click.option("--from", "origin", required=True, help="place name or lat,lng")
@click.option("--to", "destination", required=True, help="place name or lat,lng")
@click.option("--timeout", default=300.0, show_default=True, help="seconds to wait")
def ride(server, token, org, user, password, origin, destination, timeout):
    """Request a ride and follow it until it archives."""
    with _http(server) as client:
        token = _resolve_token(client, token, org, user, password, "rider")
        body = {"from": origin, "to": destination}
        key = _check(client.post("/rider/request", json=body, headers=_bearer(token)))["key"]
        click.echo(f"requested {key}")
        seen = 0
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            flows = _check(client.get("/rider/status", headers=_bearer(token)))["flows"]
            flow = flows[key]
            for state in flow["states"][seen:]:
                click.echo(state)
            seen = len(flow["states"])
            if flow["finished"]:
                if flow["error"]:
                    raise click.ClickException(flow["error"])
                click.echo(f"ride id {flow['ride_id']}")
                return
            time.sleep(POLL_S)
    raise click.ClickException("timed out waiting for the ride to finish")


# --- driver ----------------------------------------------------------------

DRIVE_HELP = """\
commands:
  next [secs]          wait for the next offer (default 30s)
  offers               list offers received so far
  accept N | deny N    answer offer N
  pickup N <place>     pick the rider of offer N up at a place or lat,lng
  dropoff N <place>    drop the rider of offer N off
  quit
"""


class _OfferBook:
    """Numbers offers as they arrive so prompt commands can name them."""

    def __init__(self):
        self.incoming = queue.Queue()
        self.offers = {}

    def add(self, offer: dict) -> int:
        number = len(self.offers) + 1
        self.offers[number] = offer
        return number

    def get(self, number: int) -> dict:
        offer = self.offers.get(number)
        if offer is None:
            raise click.ClickException(f"no offer {number}")
        return offer


def _offer_listener(server, token, book, stop):
    """Forward offer events from the SSE stream into the book."""
    try:
        with _http(server) as client:
            with client.stream("GET", f"/events?token={token}") as response:
                for line in response.iter_lines():
                    if stop.is_set():
                        return
                    if not line.startswith("data: "):
                        continue
                    event = json.loads(line[len("data: ") :])
                    if event.get("type") == "offer":
                        book.incoming.put(event)
    except Exception:
        if not stop.is_set():
            click.echo("event stream dropped", err=True)


def _announce(book, offer):
    number = book.add(offer)
    click.echo(f"offer {number}: rider {offer['rider_id']} at {offer['pickup']}")


@main.command()
@server_option
@auth_options
@click.option("--location", required=True, help="place name or lat,lng")
@click.option("--rescan", is_flag=True, help="also list requests already open")
def drive(server, token, org, user, password, location, rescan):
    """Go on shift and answer ride offers interactively."""
    with _http(server) as client:
        token = _resolve_token(client, token, org, user, password, "driver")
        body = {"location": location, "rescan": rescan}
        started = _check(client.post("/driver/start", json=body, headers=_bearer(token)))
        click.echo(f"on shift at {location}")
        book = _OfferBook()
        for offer in started.get("open_requests", []):
            _announce(book, offer)
        stop = threading.Event()
        listener = threading.Thread(
            target=_offer_listener, args=(server, token, book, stop), daemon=True
        )
        listener.start()
        click.echo(DRIVE_HELP, nl=False)
        try:
            _drive_loop(client, token, book)
        finally:
            stop.set()


def _drain_offers(book):
    while True:
        try:
            _announce(book, book.incoming.get_nowait())
        except queue.Empty:
            return


def _pickup_when_ready(client, token, body, wait_s=20.0):
    """The rider's destination commits moments after the accept; retry
    the pickup through that window instead of bouncing it to the human."""
    deadline = time.monotonic() + wait_s
    while True:
        response = client.post("/driver/pickup", json=body, headers=_bearer(token))
        if response.status_code < 400:
            return response.json()
        try:
            code = response.json()["detail"]["code"]
        except Exception:
            code = None
        if code != "DestinationNotSet" or time.monotonic() >= deadline:
            return _check(response)
        time.sleep(POLL_S)


def _drive_loop(client, token, book):
    while True:
        _drain_offers(book)
        try:
            line = click.prompt("", prompt_suffix="> ", default="", show_default=False)
        except click.Abort:
            return
        words = line.split()
        if not words:
            continue
        command, rest = words[0], words[1:]
        try:
            if command == "quit":
                return
            elif command == "offers":
                for number, offer in book.offers.items():
                    click.echo(f"offer {number}: rider {offer['rider_id']} at {offer['pickup']}")
            elif command == "next":
                wait_s = float(rest[0]) if rest else 30.0
                try:
                    _announce(book, book.incoming.get(timeout=wait_s))
                except queue.Empty:
                    click.echo("no offer arrived")
            elif command in ("accept", "deny"):
                offer = book.get(int(rest[0]))
                body = {"key": offer["key"], "accept": command == "accept"}
                reply = _check(client.post("/driver/respond", json=body, headers=_bearer(token)))
                click.echo("accepted" if reply.get("ride") else "denied")
            elif command == "pickup":
                offer = book.get(int(rest[0]))
                body = {"key": offer["key"], "location": " ".join(rest[1:])}
                reply = _pickup_when_ready(client, token, body)
                click.echo(f"on board: {', '.join(reply['onboard'])}")
            elif command == "dropoff":
                offer = book.get(int(rest[0]))
                body = {"key": offer["key"], "location": " ".join(rest[1:])}
                reply = _check(client.post("/driver/dropoff", json=body, headers=_bearer(token)))
                click.echo(f"ride id {reply['ride_id']}")
            else:
                click.echo(DRIVE_HELP, nl=False)
        except click.ClickException as exc:
            click.echo(f"error: {exc.message}")
        except (IndexError, ValueError):
            click.echo(DRIVE_HELP, nl=False)


# --- local simulation ---------------------------------------------------------


@main.command()
@click.option("--topology", type=click.Path(exists=True), help="topology JSON file")
@click.option("--profile", default="constant:300", show_default=True)
@click.option("--rides", default=None, type=int,
              help="rides per run [default: 1000, or the sweep preset's size]")
@click.option("--workers", default=4, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--csv", "csv_path", type=click.Path(), help="write results as CSV")
@click.option("--chain", "chain_path", type=click.Path(), help="write the block file")
@click.option("--sweep", type=click.Choice(sorted(SWEEP_PRESETS)), help="preset axis sweep")
def bench(topology, profile, rides, workers, seed, csv_path, chain_path, sweep):
    """Measure latency and throughput on a local virtual-clock network."""
    config = _load_topology(topology)
    if sweep:
        if chain_path:
            raise click.ClickException("--chain applies to single runs only")
        reports = run_sweep(
            sweep, base=config, rides_per_point=rides, seed=seed, csv_path=csv_path
        )
    else:
        network = build_network(config.replace(seed=seed))
        network.trace_enabled = False
        workload = WorkloadSpec(total_rides=rides or 1000, workers=workers)
        report = run_load(network, workload, parse_profile(profile), seed=seed)
        reports = [report]
        if chain_path:
            write_chain(network.peers[0].ledger.blocks, chain_path)
        if csv_path:
            export_csv(reports, csv_path)
    click.echo("  ".join(f"{h:>12}" for h in CSV_HEADER))
    for report in reports:
        click.echo("  ".join(f"{cell:>12}" for cell in report.row()))
    failed = sum(r.failure_count for r in reports)
    if failed:
        click.echo(f"warning: {failed} transactions failed", err=True)


@main.group()
def ledger():
    """Inspect block files."""


@ledger.command("dump")
@click.argument("chainfile", type=click.Path(exists=True))
@click.option("--verify", is_flag=True, help="check hashes and signatures first")
def ledger_dump(chainfile, verify):
    """Print a block file as JSON."""
    blocks = read_chain(chainfile)
    if verify and not verify_chain(blocks):
        raise click.ClickException("chain verification failed")
    click.echo(json.dumps(dump_chain_json(blocks), indent=2))


if __name__ == "__main__":
    main()
