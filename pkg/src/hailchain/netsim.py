"""Discrete-event simulation of a permissioned blockchain network.

The pipeline mirrors a Fabric-style channel. A client collects signed
endorsements from peer nodes, hands them to an ordering service that
batches transactions into blocks, and every peer independently
validates, commits, and fires chaincode events to subscribers. Peers
both endorse and commit; the orderer is a single logical sequencer that
keeps its own ledger replica purely to know the next block number and
previous hash.

Two clock modes share one scheduler. Virtual mode is a deterministic
single-threaded event loop driven by run(); wall mode runs the same
loop on a pump thread against real time so interactive frontends see
live latencies. All mutable simulator state is touched only from the
loop; cross-thread callers are marshalled through _on_loop().

Latency bookkeeping per transaction:

  peer latency     submit -> last endorsement in hand (links, service,
                   and per-extra-endorser client coordination included)
  orderer latency  endorsements sent -> ack received
  event latency    event-listener registration (immediately before the
                   orderer submission) -> block committed on all peers
"""

from __future__ import annotations

import heapq
import json
import random
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterable

from .canonical import enc_str, enc_u64
from .chaincode import (
    DEFAULT_PICKUP_RADIUS_M,
    NotAuthorized,
    RideHailingContract,
    error_from_wire,
)
from .identity import Certificate, CertificateRegistry, Role, sign, verify_sig
from .ledger import (
    VALID,
    Block,
    CommitReport,
    Endorsement,
    EndorsementPolicy,
    Ledger,
    Proposal,
    ProposalResponse,
    Transaction,
    execute_readset_capture,
    make_genesis,
    sha256,
)

VIRTUAL = "virtual"
WALL = "wall"


class NetsimError(Exception):
    pass


class InvalidTopology(NetsimError):
    pass


class EndorsementMismatch(NetsimError):
    """Endorsers returned differing response digests for one proposal.

    With deterministic chaincode this only happens when replicas have
    diverged, so it is surfaced loudly instead of being retried.
    """


class CommitRejected(NetsimError):
    """The transaction was ordered but flagged invalid at commit."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class ServiceModel:
    """Timing model for every station in the pipeline.

    base_ms is the peer endorsement service time, spread by a uniform
    +-jitter fraction. Peers serve one proposal at a time; arrivals
    beyond that wait, and once the backlog exceeds overload_threshold
    each further queued proposal inflates service time by
    overload_penalty (thrashing, which is what eventually bends
    throughput back down under heavy load). coordination_ms is the
    client-side cost per additional endorser it has to talk to. The
    orderer's service time is constant: observed traffic never gets
    near saturating a real ordering service, so no contention model.
    """

    base_ms: float = 5.0
    jitter: float = 0.2
    link_ms: float = 1.0
    coordination_ms: float = 2.0
    orderer_ms: float = 5.0
    overload_threshold: int = 4
    overload_penalty: float = 0.15


@dataclass(frozen=True)
class OrdererParams:
    batch_timeout_ms: float = 2000.0
    max_message_count: int = 10


@dataclass(frozen=True)
class OrgSpec:
    name: str
    peers: int = 2


@dataclass(frozen=True)
class TopologyConfig:
    orgs: tuple[OrgSpec, ...]
    orderer: OrdererParams = OrdererParams()
    policy: str = "all"  # "all" | "any:N" | "balanced"
    service: ServiceModel = ServiceModel()
    pickup_radius_m: float = DEFAULT_PICKUP_RADIUS_M
    seed: int = 0

    def total_peers(self) -> int:
        return sum(o.peers for o in self.orgs)

    def validate(self) -> None:
        if not self.orgs:
            raise InvalidTopology("need at least one organization")
        for org in self.orgs:
            if org.peers < 2:
                raise InvalidTopology(
                    f"{org.name or '<unnamed>'}: organizations must run at least two peers"
                )
            if not org.name:
                raise InvalidTopology("organization name must be nonempty")
        if len({o.name for o in self.orgs}) != len(self.orgs):
            raise InvalidTopology("duplicate organization name")
        if self.orderer.max_message_count < 1:
            raise InvalidTopology("max_message_count must be >= 1")
        if self.orderer.batch_timeout_ms <= 0:
            raise InvalidTopology("batch_timeout_ms must be positive")
        self.make_policy()

    def make_policy(self) -> EndorsementPolicy:
        total = self.total_peers()
        if self.policy == "all":
            return EndorsementPolicy.all_peers(total)
        if self.policy == "balanced":
            return EndorsementPolicy.load_balanced()
        kind, sep, arg = self.policy.partition(":")
        if kind == "any" and sep:
            try:
                n = int(arg)
            except ValueError:
                raise InvalidTopology(f"bad policy spec {self.policy!r}") from None
            if not 1 <= n <= total:
                raise InvalidTopology(f"any:{n} needs 1..{total} peers")
            return EndorsementPolicy.any_n(n)
        raise InvalidTopology(f"unknown policy {self.policy!r}")

    def replace(self, **kw) -> "TopologyConfig":
        return replace(self, **kw)

    @classmethod
    def default(cls, **kw) -> "TopologyConfig":
        """The two-organization, four-peer reference layout."""
        orgs = (OrgSpec("Org1PeerOrgMSP", 2), OrgSpec("Org2PeerOrgMSP", 2))
        return cls(orgs=orgs, **kw)

    @classmethod
    def from_json_dict(cls, data: dict) -> "TopologyConfig":
        orgs = tuple(
            OrgSpec(o["name"], int(o.get("peers", 2))) for o in data.get("orgs", [])
        )
        orderer = OrdererParams(
            batch_timeout_ms=float(data.get("orderer", {}).get("batch_timeout_ms", 2000.0)),
            max_message_count=int(data.get("orderer", {}).get("max_message_count", 10)),
        )
        svc = data.get("service", {})
        service = ServiceModel(
            base_ms=float(svc.get("base_ms", 5.0)),
            jitter=float(svc.get("jitter", 0.2)),
            link_ms=float(svc.get("link_ms", 1.0)),
            coordination_ms=float(svc.get("coordination_ms", 2.0)),
            orderer_ms=float(svc.get("orderer_ms", 5.0)),
            overload_threshold=int(svc.get("overload_threshold", 4)),
            overload_penalty=float(svc.get("overload_penalty", 0.15)),
        )
        return cls(
            orgs=orgs,
            orderer=orderer,
            policy=data.get("policy", "all"),
            service=service,
            pickup_radius_m=float(data.get("pickup_radius_m", DEFAULT_PICKUP_RADIUS_M)),
            seed=int(data.get("seed", 0)),
        )

    @classmethod
    def from_file(cls, path: str) -> "TopologyConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


# --- per-transaction tracking -------------------------------------------------

class TxTicket:
    """Follows one proposal through the pipeline.

    done() flips exactly once: at commit, at an endorsement rejection,
    or on an endorsement mismatch. on_done fires inside the event loop,
    so handlers may schedule follow-up work but must not block.
    """

    __slots__ = (
        "tx_id",
        "function",
        "client_id",
        "submitted_at",
        "endorsed_at",
        "peer_latency_ms",
        "sent_to_orderer_at",
        "ordered_at",
        "orderer_latency_ms",
        "registered_at",
        "committed_at",
        "event_latency_ms",
        "validation",
        "invalid_reason",
        "block_number",
        "payload",
        "error",
        "mismatch",
        "endorsers",
        "on_done",
        "_done",
    )

    def __init__(self, tx_id: bytes, function: str, client_id: str):
        self.tx_id = tx_id
        self.function = function
        self.client_id = client_id
        self.submitted_at = 0.0
        self.endorsed_at: float | None = None
        self.peer_latency_ms: float | None = None
        self.sent_to_orderer_at: float | None = None
        self.ordered_at: float | None = None
        self.orderer_latency_ms: float | None = None
        self.registered_at: float | None = None
        self.committed_at: float | None = None
        self.event_latency_ms: float | None = None
        self.validation: str | None = None
        self.invalid_reason: str | None = None
        self.block_number: int | None = None
        self.payload: bytes | None = None
        self.error: str | None = None
        self.mismatch = False
        self.endorsers: list[str] = []
        self.on_done: Callable[["TxTicket"], None] | None = None
        self._done = threading.Event()

    def done(self) -> bool:
        return self._done.is_set()

    def wait(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)

    @property
    def valid(self) -> bool:
        return self.validation == VALID

    def result(self) -> object:
        if not self.payload:
            return None
        return json.loads(self.payload.decode("utf-8"))

    def _finish(self) -> None:
        self._done.set()
        if self.on_done is not None:
            self.on_done(self)


@dataclass(frozen=True)
class EventDelivery:
    name: str
    payload: dict
    tx_id: str
    block_number: int
    at: float


class Subscription:
    """Receives chaincode events committed after registration.

    Matching happens at commit time, so a subscription made after a
    block was cut but before it committed still sees those events.
    """

    def __init__(
        self,
        client_id: str,
        name_filter: str | None = None,
        callback: Callable[[EventDelivery], None] | None = None,
        registered_at: float = 0.0,
    ):
        self.client_id = client_id
        self.name_filter = name_filter
        self.callback = callback
        self.registered_at = registered_at
        self.deliveries: list[EventDelivery] = []

    def matches(self, name: str) -> bool:
        return self.name_filter is None or self.name_filter == name

    def deliver(self, delivery: EventDelivery) -> None:
        self.deliveries.append(delivery)
        if self.callback is not None:
            self.callback(delivery)


# --- network actors -----------------------------------------------------------

class PeerNode:
    """Endorsing and committing peer with a capacity-one service queue."""

    def __init__(
        self,
        peer_id: str,
        org: str,
        cert: Certificate,
        secret: bytes,
        contract: RideHailingContract,
        registry: CertificateRegistry,
    ):
        self.id = peer_id
        self.org = org
        self.certificate = cert
        self._secret = secret
        self.contract = contract
        self.registry = registry
        self.ledger = Ledger(make_genesis())
        self.busy_until = 0.0
        self.inflight = 0

    def service_time(self, rng: random.Random, model: ServiceModel) -> float:
        svc = model.base_ms
        if model.jitter:
            svc *= 1.0 + rng.uniform(-model.jitter, model.jitter)
        backlog = self.inflight
        if backlog > model.overload_threshold:
            svc *= 1.0 + model.overload_penalty * (backlog - model.overload_threshold)
        return svc

    def endorse(self, proposal: Proposal, tx_id: bytes) -> ProposalResponse:
        """Execute against the current committed snapshot and sign.

        The proposal's certificate chain and client signature are
        checked first; a forgery gets a rejection response, never
        execution.
        """
        if not self.registry.verify_certificate(proposal.client_cert) or not verify_sig(
            proposal.client_cert.public_key,
            proposal.signing_payload(),
            proposal.client_signature,
        ):
            return ProposalResponse.rejection(
                tx_id, NotAuthorized("proposal signature check failed").wire_message()
            )
        snapshot = self.ledger.state.snapshot()
        return execute_readset_capture(
            snapshot,
            tx_id,
            lambda kv: self.contract.execute(
                kv,
                proposal.function,
                proposal.args,
                proposal.client_cert,
                tx_id,
                proposal.timestamp_ms,
            ),
        )

    def sign_response(self, response: ProposalResponse) -> Endorsement:
        return Endorsement(self.id, response.digest, sign(self._secret, response.digest))


class OrderingService:
    """Single logical sequencer. Cuts a block when the pending batch
    reaches max_message_count or when batch_timeout_ms elapses after
    the first transaction entered an empty batch, whichever first."""

    def __init__(self, network: "Network", params: OrdererParams):
        self.network = network
        self.params = params
        self.pending: list[tuple[Transaction, TxTicket | None]] = []
        self.replica = Ledger(make_genesis())
        self.cut_log: list[dict] = []
        self._epoch = 0

    def receive(self, tx: Transaction, ticket: TxTicket | None) -> None:
        net = self.network
        self.pending.append((tx, ticket))
        net._trace("order", tx=tx.tx_id.hex()[:12], queued=len(self.pending))
        if ticket is not None:
            # constant service; ack rides one link back to the client
            def ack() -> None:
                ticket.ordered_at = net.now_ms()
                if ticket.sent_to_orderer_at is not None:
                    ticket.orderer_latency_ms = ticket.ordered_at - ticket.sent_to_orderer_at

            net.schedule(net.model.orderer_ms + net.model.link_ms, ack)
        if len(self.pending) >= self.params.max_message_count:
            self._cut("count")
        elif len(self.pending) == 1:
            epoch = self._epoch
            net.schedule(self.params.batch_timeout_ms, lambda: self._timeout(epoch))

    def _timeout(self, epoch: int) -> None:
        if epoch == self._epoch and self.pending:
            self._cut("timeout")

    def _cut(self, reason: str) -> None:
        net = self.network
        self._epoch += 1
        batch = self.pending
        self.pending = []
        txs = [tx for tx, _ in batch]
        tickets = {tx.tx_id.hex(): tk for tx, tk in batch if tk is not None}
        head = self.replica.head
        assert head is not None and head.hash is not None
        block = Block(head.number + 1, int(net.now_ms()), head.hash, txs)
        raw = block.candidate_bytes()
        # the replica parses its own copy exactly like the peers will,
        # which keeps the orderer honest about the bytes it shipped
        self.replica.append_block(Block.from_candidate_bytes(raw), net.policy, net.peer_keys)
        self.cut_log.append({"number": block.number, "size": len(txs), "reason": reason})
        net._trace("cut", block=block.number, size=len(txs), reason=reason)
        net._deliver_block(raw, block.number, tickets)


class ClientHandle:
    """A certificate-holding application client bound to one network."""

    def __init__(self, network: "Network", cert: Certificate, secret: bytes, user_id: str):
        self.network = network
        self.cert = cert
        self.secret = secret
        self.user_id = user_id
        self._nonce_lock = threading.Lock()
        self._nonce_counter = 0

    def _next_nonce(self) -> bytes:
        with self._nonce_lock:
            self._nonce_counter += 1
            n = self._nonce_counter
        return sha256(enc_str(self.user_id) + enc_u64(n))[:16]

    def invoke(
        self,
        function: str,
        args: Iterable[str],
        on_done: Callable[[TxTicket], None] | None = None,
    ) -> TxTicket:
        return self.network.submit_proposal(self, function, list(args), on_done)

    def call(self, function: str, args: Iterable[str], timeout: float = 30.0) -> TxTicket:
        """Invoke and block until the transaction settles.

        Raises the typed chaincode error on an endorsement rejection,
        EndorsementMismatch on digest divergence, and CommitRejected
        when the committed flag is anything but valid.
        """
        ticket = self.invoke(function, args)
        self.network.wait_for(ticket, timeout)
        if ticket.mismatch:
            raise EndorsementMismatch(ticket.error or "endorsement digests differ")
        if ticket.error is not None:
            raise error_from_wire(ticket.error)
        if not ticket.valid:
            raise CommitRejected(ticket.invalid_reason or "invalid")
        return ticket

    def query(self, function: str, args: Iterable[str]) -> object:
        return self.network.query(self, function, list(args))


# --- the network --------------------------------------------------------------

class Network:
    """Builds the event-driven pipeline from a topology config.

    Use build_network() rather than constructing directly.
    """

    def __init__(self, config: TopologyConfig, mode: str = VIRTUAL):
        if mode not in (VIRTUAL, WALL):
            raise NetsimError(f"unknown clock mode {mode!r}")
        config.validate()
        self.config = config
        self.mode = mode
        self.model = config.service
        self.registry = CertificateRegistry()
        self.contract = RideHailingContract(config.pickup_radius_m)
        self.policy = config.make_policy()
        self._rng = random.Random(config.seed)
        # keys come from their own seeded stream so issuing one more
        # certificate never shifts the timing jitter sequence
        self._key_rng = random.Random((config.seed << 1) ^ 0x5DEECE66D)

        self.peers: list[PeerNode] = []
        for spec in config.orgs:
            org = self.registry.create_org(spec.name, key_rng=self._key_rng)
            for i in range(spec.peers):
                cert, secret = org.issue_certificate(f"peer{i}", Role.PEER)
                self.peers.append(
                    PeerNode(
                        f"peer{i}@{spec.name}", spec.name, cert, secret, self.contract, self.registry
                    )
                )
        orderer_org = self.registry.get_org(config.orgs[0].name)
        self._orderer_cert, _ = orderer_org.issue_certificate("orderer", Role.ORDERER)
        self.peer_keys = {p.id: p.certificate.public_key for p in self.peers}
        self.orderer = OrderingService(self, config.orderer)
        self.subscriptions: list[Subscription] = []
        self.trace: list[dict] = []
        self.trace_enabled = True

        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0
        self._now = 0.0
        self._rotation = 0
        self._lock = threading.RLock()
        self._wake = threading.Condition(self._lock)
        self._thread: threading.Thread | None = None
        self._running = False
        self._t0 = 0.0

    # --- clock and scheduler -------------------------------------------

    def now_ms(self) -> float:
        if self.mode == VIRTUAL:
            return self._now
        return (time.monotonic() - self._t0) * 1000.0

    def schedule(self, delay_ms: float, fn: Callable[[], None]) -> None:
        if self.mode == VIRTUAL:
            self._seq += 1
            heapq.heappush(self._heap, (self._now + max(0.0, delay_ms), self._seq, fn))
            return
        with self._wake:
            self._seq += 1
            heapq.heappush(self._heap, (self.now_ms() + max(0.0, delay_ms), self._seq, fn))
            self._wake.notify()

    @property
    def idle(self) -> bool:
        return not self._heap

    def run(
        self,
        duration_ms: float | None = None,
        until: Callable[[], bool] | None = None,
    ) -> None:
        """Drive the virtual clock: until the predicate holds, for a
        fixed span, or to full drain when neither is given."""
        if self.mode != VIRTUAL:
            raise NetsimError("run() drives the virtual clock; wall mode uses start()")
        deadline = self._now + duration_ms if duration_ms is not None else None
        while self._heap:
            if until is not None and until():
                return
            at, _, fn = self._heap[0]
            if deadline is not None and at > deadline:
                break
            heapq.heappop(self._heap)
            self._now = at
            fn()
        if deadline is not None:
            self._now = deadline

    def start(self) -> None:
        if self.mode != WALL:
            raise NetsimError("start() is for wall mode")
        if self._thread is not None:
            return
        self._t0 = time.monotonic()
        self._running = True
        self._thread = threading.Thread(target=self._pump, name="netsim-pump", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._thread is None:
            return
        with self._wake:
            self._running = False
            self._wake.notify()
        self._thread.join(timeout=5)
        self._thread = None

    def _pump(self) -> None:
        while True:
            with self._wake:
                while self._running and not self._heap:
                    self._wake.wait()
                if not self._running:
                    return
                at, _, fn = self._heap[0]
                now = self.now_ms()
                if at > now:
                    self._wake.wait(timeout=(at - now) / 1000.0)
                    continue
                heapq.heappop(self._heap)
            fn()

    def _on_loop(self, fn: Callable[[], object]) -> object:
        """Run fn inside the event loop thread and hand back its result."""
        if self.mode == VIRTUAL or threading.current_thread() is self._thread:
            return fn()
        box: dict[str, object] = {}
        ready = threading.Event()

        def wrapper() -> None:
            try:
                box["value"] = fn()
            except BaseException as exc:  # marshalled to the caller
                box["error"] = exc
            finally:
                ready.set()

        self.schedule(0.0, wrapper)
        if not ready.wait(timeout=30.0):
            raise NetsimError("event loop did not answer within 30s")
        if "error" in box:
            raise box["error"]  # type: ignore[misc]
        return box["value"]

    def _trace(self, kind: str, **details) -> None:
        if not self.trace_enabled:
            return
        record = {"t": round(self.now_ms(), 3), "kind": kind}
        record.update(details)
        self.trace.append(record)

    def write_trace(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.trace:
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
                fh.write("\n")

    def trace_lines(self) -> list[str]:
        return [
            json.dumps(record, sort_keys=True, separators=(",", ":")) for record in self.trace
        ]

    # --- clients and subscriptions ---------------------------------------

    def create_client(self, local_id: str, org_name: str) -> ClientHandle:
        def make() -> ClientHandle:
            org = self.registry.get_org(org_name)
            cert, secret = org.issue_certificate(local_id, Role.CLIENT)
            return ClientHandle(self, cert, secret, f"{local_id}@{org_name}")

        return self._on_loop(make)  # type: ignore[return-value]

    def subscribe(
        self,
        client_id: str,
        name_filter: str | None = None,
        callback: Callable[[EventDelivery], None] | None = None,
    ) -> Subscription:
        def make() -> Subscription:
            sub = Subscription(client_id, name_filter, callback, self.now_ms())
            self.subscriptions.append(sub)
            return sub

        return self._on_loop(make)  # type: ignore[return-value]

    def unsubscribe(self, sub: Subscription) -> None:
        def drop() -> None:
            if sub in self.subscriptions:
                self.subscriptions.remove(sub)

        self._on_loop(drop)

    # --- proposal pipeline ------------------------------------------------

    def _select_endorsers(self) -> list[PeerNode]:
        if self.policy.kind == "all":
            return list(self.peers)
        count = 1 if self.policy.kind == "balanced" else self.policy.n
        start = self._rotation
        self._rotation += 1
        return [self.peers[(start + i) % len(self.peers)] for i in range(count)]

    def submit_proposal(
        self,
        client: ClientHandle,
        function: str,
        args: list[str],
        on_done: Callable[[TxTicket], None] | None = None,
    ) -> TxTicket:
        nonce = client._next_nonce()

        def begin() -> TxTicket:
            now = self.now_ms()
            proposal = Proposal(function, list(args), client.cert, int(now), nonce)
            proposal.client_signature = sign(client.secret, proposal.signing_payload())
            tx_id = proposal.tx_id()
            ticket = TxTicket(tx_id, function, client.user_id)
            ticket.submitted_at = now
            ticket.on_done = on_done
            self._trace("submit", tx=tx_id.hex()[:12], fn=function, client=client.user_id)
            endorsers = self._select_endorsers()
            ticket.endorsers = [p.id for p in endorsers]
            pending: list[tuple[PeerNode, ProposalResponse]] = []

            def arrive_at(peer: PeerNode) -> Callable[[], None]:
                def arrival() -> None:
                    t = self.now_ms()
                    svc = peer.service_time(self._rng, self.model)
                    start = max(t, peer.busy_until)
                    finish = start + svc
                    peer.busy_until = finish
                    peer.inflight += 1

                    def complete() -> None:
                        peer.inflight -= 1
                        response = peer.endorse(proposal, tx_id)
                        self._trace(
                            "endorse", tx=tx_id.hex()[:12], peer=peer.id, ok=response.ok
                        )
                        self.schedule(
                            self.model.link_ms, lambda: collect(peer, response)
                        )

                    self.schedule(finish - t, complete)

                return arrival

            def collect(peer: PeerNode, response: ProposalResponse) -> None:
                pending.append((peer, response))
                if len(pending) < len(endorsers):
                    return
                # client-side coordination grows with every extra endorser
                overhead = self.model.coordination_ms * (len(endorsers) - 1)
                self.schedule(overhead, settle)

            def settle() -> None:
                now2 = self.now_ms()
                ticket.endorsed_at = now2
                ticket.peer_latency_ms = now2 - ticket.submitted_at
                responses = [r for _, r in pending]
                digests = {r.digest for r in responses}
                if len(digests) > 1:
                    ticket.mismatch = True
                    ticket.error = "endorsement digests differ"
                    self._trace("mismatch", tx=tx_id.hex()[:12])
                    ticket._finish()
                    return
                first = responses[0]
                self._trace(
                    "endorsed",
                    tx=tx_id.hex()[:12],
                    ok=first.ok,
                    latency_ms=round(ticket.peer_latency_ms, 3),
                )
                if not first.ok:
                    ticket.error = first.error
                    ticket._finish()
                    return
                if not self.policy.satisfied(len({p.id for p, _ in pending})):
                    ticket.error = "PolicyUnmet: not enough endorsements"
                    ticket._finish()
                    return
                tx = Transaction(
                    tx_id,
                    proposal,
                    [peer.sign_response(resp) for peer, resp in pending],
                    first.rwset,
                    first.events,
                    first.payload,
                )
                ticket.payload = first.payload
                # event listeners register before the orderer sees the
                # transaction; commit stamps the other end of the span
                ticket.registered_at = now2
                ticket.sent_to_orderer_at = now2
                self.schedule(self.model.link_ms, lambda: self.orderer.receive(tx, ticket))

            for peer in endorsers:
                self.schedule(self.model.link_ms, arrive_at(peer))
            return ticket

        return self._on_loop(begin)  # type: ignore[return-value]

    def _deliver_block(self, raw: bytes, number: int, tickets: dict[str, TxTicket]) -> None:
        reports: list[CommitReport] = []

        def commit_on(peer: PeerNode) -> Callable[[], None]:
            def commit() -> None:
                block = Block.from_candidate_bytes(raw)
                report = peer.ledger.append_block(block, self.policy, self.peer_keys)
                self._trace(
                    "commit",
                    block=number,
                    peer=peer.id,
                    valid=report.valid_count,
                    state=report.state_digest.hex()[:12],
                )
                reports.append(report)
                if len(reports) == len(self.peers):
                    self._finalize_block(number, reports, tickets)

            return commit

        for peer in self.peers:
            self.schedule(self.model.link_ms, commit_on(peer))

    def _finalize_block(
        self, number: int, reports: list[CommitReport], tickets: dict[str, TxTicket]
    ) -> None:
        first = reports[0]
        for report in reports[1:]:
            if (
                report.block_hash != first.block_hash
                or report.state_digest != first.state_digest
            ):
                raise NetsimError(f"replica divergence on block {number}")
        now = self.now_ms()
        block = self.peers[0].ledger.blocks[number]
        for tx in block.transactions:
            ticket = tickets.get(tx.tx_id.hex())
            if ticket is not None:
                ticket.committed_at = now
                ticket.validation = tx.validation
                ticket.invalid_reason = tx.invalid_reason
                ticket.block_number = number
                if ticket.registered_at is not None:
                    ticket.event_latency_ms = now - ticket.registered_at
            self._trace(
                "tx_committed",
                tx=tx.tx_id.hex()[:12],
                block=number,
                validation=tx.validation,
            )
            if tx.validation == VALID:
                for event in tx.events:
                    payload = event.payload_dict()
                    for sub in list(self.subscriptions):
                        if sub.matches(event.name):
                            sub.deliver(
                                EventDelivery(event.name, payload, tx.tx_id.hex(), number, now)
                            )
                            self._trace(
                                "event",
                                name=event.name,
                                tx=tx.tx_id.hex()[:12],
                                sub=sub.client_id,
                            )
        # tickets finish after events so a handler that reacts to its own
        # commit already sees the full delivery record
        for tx in block.transactions:
            ticket = tickets.get(tx.tx_id.hex())
            if ticket is not None:
                ticket._finish()

    def wait_for(self, ticket: TxTicket, timeout: float = 30.0) -> None:
        if self.mode == VIRTUAL:
            self.run(until=ticket.done)
            if not ticket.done():
                raise NetsimError("ticket never settled; simulation drained")
            return
        if not ticket.wait(timeout):
            raise NetsimError("timed out waiting for transaction")

    # --- reads ------------------------------------------------------------

    def query(self, client: ClientHandle, function: str, args: list[str]) -> object:
        """Read-only execution against one peer's committed state."""

        def go() -> object:
            peer = self.peers[self._rotation % len(self.peers)]
            nonce = client._next_nonce()
            proposal = Proposal(function, list(args), client.cert, int(self.now_ms()), nonce)
            proposal.client_signature = sign(client.secret, proposal.signing_payload())
            response = peer.endorse(proposal, proposal.tx_id())
            if not response.ok:
                raise error_from_wire(response.error or "ChaincodeError: query failed")
            if not response.payload:
                return None
            return json.loads(response.payload.decode("utf-8"))

        return self._on_loop(go)

    def read_state(self, key: str) -> bytes | None:
        def go() -> bytes | None:
            return self.peers[0].ledger.state.get(key)

        return self._on_loop(go)  # type: ignore[return-value]

    def scan_state(self, prefix: str) -> list[tuple[str, bytes]]:
        def go() -> list[tuple[str, bytes]]:
            return list(self.peers[0].ledger.state.items_with_prefix(prefix))

        return self._on_loop(go)  # type: ignore[return-value]

    def state_hashes(self) -> list[str]:
        return [p.ledger.state_hash().hex() for p in self.peers]

    def chains_identical(self) -> bool:
        blobs = {
            b"".join(block.to_bytes() for block in peer.ledger.blocks) for peer in self.peers
        }
        blobs.add(b"".join(block.to_bytes() for block in self.orderer.replica.blocks))
        return len(blobs) == 1


def build_network(config: TopologyConfig, mode: str = VIRTUAL) -> Network:
    """Issue every certificate, commit genesis on every peer, and wire
    the pipeline. Raises InvalidTopology on a config the network cannot
    honor."""
    return Network(config, mode)
