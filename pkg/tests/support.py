"""Shared test rig: a single-replica contract runner.

Executes contract calls directly against one ledger, committing each
successful invocation in its own block. Contract errors propagate as
exceptions instead of being folded into rejected responses, which keeps
assertion code direct. Consensus-path behavior (endorsement digests,
policies, block cutting) is exercised by the ledger and netsim tests.
"""

from __future__ import annotations

from dataclasses import dataclass

from hailchain.chaincode import RideHailingContract
from hailchain.identity import Certificate, CertificateRegistry, Role, sign
from hailchain.ledger import (
    Block,
    ChaincodeEvent,
    Endorsement,
    EndorsementPolicy,
    KVContext,
    Ledger,
    Proposal,
    ProposalResponse,
    ReadWriteSet,
    Transaction,
    compute_tx_id,
    make_genesis,
    response_digest,
)


@dataclass
class Client:
    cert: Certificate
    secret: bytes
    user_id: str


class ContractRunner:
    def __init__(self, pickup_radius_m: float = 100.0, orgs: tuple[str, ...] = ("Org1PeerOrgMSP", "Org2PeerOrgMSP")):
        self.registry = CertificateRegistry()
        self.orgs = {name: self.registry.create_org(name) for name in orgs}
        self.contract = RideHailingContract(pickup_radius_m)
        self.ledger = Ledger(make_genesis())
        peer_org = next(iter(self.orgs.values()))
        self.peer_cert, self.peer_secret = peer_org.issue_certificate("peer0", Role.PEER)
        self.policy = EndorsementPolicy.any_n(1)
        self.peer_keys = {"peer0": self.peer_cert.public_key}
        self.clock_ms = 1_000_000
        self._nonce = 0
        self.last_rwset: ReadWriteSet | None = None
        self.last_events: list[ChaincodeEvent] = []
        self.event_log: list[ChaincodeEvent] = []

    def new_client(self, local_id: str, org: str | None = None, role: Role = Role.CLIENT) -> Client:
        org_name = org or next(iter(self.orgs))
        cert, secret = self.orgs[org_name].issue_certificate(local_id, role)
        return Client(cert, secret, f"{local_id}@{org_name}")

    def invoke(self, client: Client, function: str, args: list[str], timestamp_ms: int | None = None) -> object:
        """Execute and commit one call; returns the handler's payload.
        Contract errors raise; nothing is committed for them."""
        if timestamp_ms is None:
            self.clock_ms += 1_000
            timestamp_ms = self.clock_ms
        self._nonce += 1
        nonce = self._nonce.to_bytes(8, "big")
        tx_id = compute_tx_id(client.cert, nonce, function, args)
        snapshot = self.ledger.state.snapshot()
        kv = KVContext(snapshot)
        result = self.contract.execute(kv, function, args, client.cert, tx_id, timestamp_ms)

        rwset = kv.rwset()
        self.last_rwset = rwset
        self.last_events = list(kv.events)
        self.event_log.extend(kv.events)

        import json

        payload = b"" if result is None else json.dumps(result, sort_keys=True, separators=(",", ":")).encode()
        digest = response_digest(tx_id, True, payload, rwset, kv.events)
        tx = Transaction(
            tx_id,
            Proposal(function, list(args), client.cert, timestamp_ms, nonce),
            [Endorsement("peer0", digest, sign(self.peer_secret, digest))],
            rwset,
            kv.events,
            payload,
        )
        head = self.ledger.head
        block = Block(head.number + 1, timestamp_ms, head.hash, [tx])
        report = self.ledger.append_block(block, self.policy, self.peer_keys)
        assert report.flags[0][1] == "valid", report.flags
        return result

    def query(self, client: Client, function: str, args: list[str]) -> object:
        """Read-only execution; nothing committed."""
        snapshot = self.ledger.state.snapshot()
        kv = KVContext(snapshot)
        tx_id = compute_tx_id(client.cert, b"query", function, args)
        return self.contract.execute(kv, function, args, client.cert, tx_id, self.clock_ms)

    # common flows -------------------------------------------------------

    def register(self, local_id: str, org: str | None = None, password_hash: str = "ab" * 32, salt: str = "cd" * 16) -> Client:
        client = self.new_client(local_id, org)
        self.invoke(client, "registerUser", [password_hash, salt])
        return client

    def register_driver(self, local_id: str, org: str | None = None, name: str = "Pat", make: str = "Nissan", model: str = "Leaf", year: int = 2020) -> Client:
        client = self.register(local_id, org)
        self.invoke(client, "upgradeToDriver", [name, make, model, str(year)])
        return client
