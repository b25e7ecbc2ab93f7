"""Hash-chained block ledger over a versioned world state.

Execution and commit are split the way an endorse/order/validate
pipeline needs them to be: a proposal runs against a state snapshot and
captures the versions of everything it read plus a buffer of everything
it wrote (reads after a write in the same invocation are served from
the buffer and record nothing). At commit time each transaction's read
versions are checked against the live state, so endorsements that went
stale between execution and ordering are flagged invalid and apply
nothing. Invalid transactions stay in the block with their reason.

Blocks hash their full canonical serialization, validation flags
included, and chain by prev_hash; the genesis block's prev_hash is all
zeros. The same canonical bytes double as the append-only file format.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .canonical import (
    ByteReader,
    DecodeError,
    enc_bytes,
    enc_seq,
    enc_str,
    enc_u64,
)
from .identity import Certificate, verify_sig

HASH_LEN = 32
ZERO_HASH = b"\x00" * HASH_LEN

Version = tuple[int, int]  # (block number, tx position within block)

VALID = "valid"
INVALID = "invalid"
PENDING = "pending"

READ_CONFLICT = "ReadConflict"
POLICY_UNMET = "PolicyUnmet"
BAD_SIGNATURE = "BadSignature"


class LedgerError(Exception):
    pass


class BrokenChain(LedgerError):
    """Candidate block does not extend the current chain head."""


class ChaincodeError(Exception):
    """Base class for deliberate contract failures.

    Raising one of these during execution turns the proposal response
    into a rejection; any other exception is a bug and propagates.
    """

    code = "ChaincodeError"

    def wire_message(self) -> str:
        return f"{self.code}: {self}"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# --- read/write sets ----------------------------------------------------

@dataclass(frozen=True)
class KVRead:
    key: str
    version: Version | None  # None when the key was absent

    def to_bytes(self) -> bytes:
        if self.version is None:
            return enc_str(self.key) + b"\x00"
        return enc_str(self.key) + b"\x01" + enc_u64(self.version[0]) + enc_u64(self.version[1])


@dataclass(frozen=True)
class KVWrite:
    key: str
    value: bytes | None  # None is a delete marker

    def to_bytes(self) -> bytes:
        if self.value is None:
            return enc_str(self.key) + b"\x00"
        return enc_str(self.key) + b"\x01" + enc_bytes(self.value)


@dataclass
class ReadWriteSet:
    reads: list[KVRead] = field(default_factory=list)
    writes: list[KVWrite] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        return enc_seq(r.to_bytes() for r in self.reads) + enc_seq(
            w.to_bytes() for w in self.writes
        )

    @classmethod
    def read_from(cls, reader: ByteReader) -> "ReadWriteSet":
        reads = reader.seq(_read_kvread)
        writes = reader.seq(_read_kvwrite)
        return cls(reads, writes)

    def to_json_dict(self) -> dict:
        return {
            "reads": [
                {"key": r.key, "version": list(r.version) if r.version else None}
                for r in self.reads
            ],
            "writes": [
                {
                    "key": w.key,
                    "delete": w.value is None,
                    "value": w.value.decode("utf-8", "replace") if w.value is not None else None,
                }
                for w in self.writes
            ],
        }


def _read_kvread(reader: ByteReader) -> KVRead:
    key = reader.str_()
    if reader.byte():
        return KVRead(key, (reader.u64(), reader.u64()))
    return KVRead(key, None)


def _read_kvwrite(reader: ByteReader) -> KVWrite:
    key = reader.str_()
    if reader.byte():
        return KVWrite(key, reader.bytes_())
    return KVWrite(key, None)


# --- events -------------------------------------------------------------

@dataclass(frozen=True)
class ChaincodeEvent:
    """Named event emitted by a contract invocation.

    Payload values are strings (keys, hex ids, formatted points) so the
    canonical form is a sorted compact JSON object.
    """

    name: str
    payload: tuple[tuple[str, str], ...]

    @classmethod
    def make(cls, name: str, payload: dict[str, str]) -> "ChaincodeEvent":
        return cls(name, tuple(sorted(payload.items())))

    def payload_dict(self) -> dict[str, str]:
        return dict(self.payload)

    def payload_json(self) -> str:
        return json.dumps(self.payload_dict(), sort_keys=True, separators=(",", ":"))

    def to_bytes(self) -> bytes:
        return enc_str(self.name) + enc_str(self.payload_json())

    @classmethod
    def read_from(cls, reader: ByteReader) -> "ChaincodeEvent":
        name = reader.str_()
        payload = json.loads(reader.str_())
        return cls.make(name, payload)


def events_bytes(events: Iterable[ChaincodeEvent]) -> bytes:
    return enc_seq(e.to_bytes() for e in events)


# --- proposals and transactions ------------------------------------------

def compute_tx_id(cert: Certificate, nonce: bytes, function: str, args: list[str]) -> bytes:
    return sha256(
        enc_bytes(cert.to_bytes())
        + enc_bytes(nonce)
        + enc_str(function)
        + enc_seq(enc_str(a) for a in args)
    )


@dataclass
class Proposal:
    """Client-signed invocation request.

    The client timestamp, not any peer clock, is the time the contract
    sees, which keeps execution deterministic across endorsers.
    """

    function: str
    args: list[str]
    client_cert: Certificate
    timestamp_ms: int
    nonce: bytes
    client_signature: bytes = b""

    def tx_id(self) -> bytes:
        return compute_tx_id(self.client_cert, self.nonce, self.function, self.args)

    def signing_payload(self) -> bytes:
        return (
            enc_bytes(self.client_cert.to_bytes())
            + enc_bytes(self.nonce)
            + enc_str(self.function)
            + enc_seq(enc_str(a) for a in self.args)
            + enc_u64(self.timestamp_ms)
        )

    def to_bytes(self) -> bytes:
        return self.signing_payload() + enc_bytes(self.client_signature)

    @classmethod
    def read_from(cls, reader: ByteReader) -> "Proposal":
        cert = Certificate.from_bytes(reader.bytes_())
        nonce = reader.bytes_()
        function = reader.str_()
        args = reader.seq(lambda r: r.str_())
        timestamp = reader.u64()
        signature = reader.bytes_()
        return cls(function, args, cert, timestamp, nonce, signature)


@dataclass(frozen=True)
class Endorsement:
    peer_id: str
    response_digest: bytes
    signature: bytes

    def to_bytes(self) -> bytes:
        return enc_str(self.peer_id) + enc_bytes(self.response_digest) + enc_bytes(self.signature)

    @classmethod
    def read_from(cls, reader: ByteReader) -> "Endorsement":
        return cls(reader.str_(), reader.bytes_(), reader.bytes_())


def response_digest(
    tx_id: bytes, ok: bool, payload: bytes, rwset: ReadWriteSet, events: list[ChaincodeEvent]
) -> bytes:
    return sha256(
        enc_bytes(tx_id)
        + (b"\x01" if ok else b"\x00")
        + enc_bytes(payload)
        + rwset.to_bytes()
        + events_bytes(events)
    )


@dataclass
class Transaction:
    tx_id: bytes
    proposal: Proposal
    endorsements: list[Endorsement]
    rwset: ReadWriteSet
    events: list[ChaincodeEvent]
    response: bytes = b""
    validation: str = PENDING
    invalid_reason: str | None = None

    def expected_digest(self) -> bytes:
        return response_digest(self.tx_id, True, self.response, self.rwset, self.events)

    def to_bytes(self) -> bytes:
        return (
            enc_bytes(self.tx_id)
            + self.proposal.to_bytes()
            + enc_seq(e.to_bytes() for e in self.endorsements)
            + self.rwset.to_bytes()
            + events_bytes(self.events)
            + enc_bytes(self.response)
            + enc_str(self.validation)
            + enc_str(self.invalid_reason or "")
        )

    @classmethod
    def read_from(cls, reader: ByteReader) -> "Transaction":
        tx_id = reader.bytes_()
        proposal = Proposal.read_from(reader)
        endorsements = reader.seq(Endorsement.read_from)
        rwset = ReadWriteSet.read_from(reader)
        events = reader.seq(ChaincodeEvent.read_from)
        response = reader.bytes_()
        validation = reader.str_()
        reason = reader.str_()
        return cls(
            tx_id,
            proposal,
            endorsements,
            rwset,
            events,
            response,
            validation,
            reason or None,
        )

    def to_json_dict(self) -> dict:
        return {
            "tx_id": self.tx_id.hex(),
            "function": self.proposal.function,
            "args": list(self.proposal.args),
            "client": self.proposal.client_cert.to_json_dict(),
            "timestamp_ms": self.proposal.timestamp_ms,
            "nonce": self.proposal.nonce.hex(),
            "endorsements": [
                {
                    "peer_id": e.peer_id,
                    "response_digest": e.response_digest.hex(),
                    "signature": e.signature.hex(),
                }
                for e in self.endorsements
            ],
            "rwset": self.rwset.to_json_dict(),
            "events": [
                {"name": e.name, "payload": e.payload_dict()} for e in self.events
            ],
            "response": self.response.decode("utf-8", "replace"),
            "validation": self.validation,
            "invalid_reason": self.invalid_reason,
        }


# --- blocks ---------------------------------------------------------------

@dataclass
class Block:
    number: int
    timestamp_ms: int
    prev_hash: bytes
    transactions: list[Transaction]
    hash: bytes | None = None

    def canonical_bytes(self) -> bytes:
        return (
            enc_u64(self.number)
            + enc_u64(self.timestamp_ms)
            + enc_bytes(self.prev_hash)
            + enc_seq(tx.to_bytes() for tx in self.transactions)
        )

    def compute_hash(self) -> bytes:
        return sha256(self.canonical_bytes())

    def seal(self) -> "Block":
        self.hash = self.compute_hash()
        return self

    def to_bytes(self) -> bytes:
        if self.hash is None:
            raise LedgerError("cannot serialize an unsealed block")
        return self.canonical_bytes() + enc_bytes(self.hash)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        reader = ByteReader(data)
        block = cls.read_from(reader)
        reader.expect_end()
        return block

    @classmethod
    def read_from(cls, reader: ByteReader) -> "Block":
        block = cls.read_candidate(reader)
        block.hash = reader.bytes_()
        if len(block.hash) != HASH_LEN:
            raise DecodeError("bad block hash length")
        return block

    @classmethod
    def read_candidate(cls, reader: ByteReader) -> "Block":
        number = reader.u64()
        timestamp = reader.u64()
        prev_hash = reader.bytes_()
        if len(prev_hash) != HASH_LEN:
            raise DecodeError("bad prev_hash length")
        txs = reader.seq(Transaction.read_from)
        return cls(number, timestamp, prev_hash, txs)

    def candidate_bytes(self) -> bytes:
        return self.canonical_bytes()

    @classmethod
    def from_candidate_bytes(cls, data: bytes) -> "Block":
        reader = ByteReader(data)
        block = cls.read_candidate(reader)
        reader.expect_end()
        return block

    def to_json_dict(self) -> dict:
        return {
            "number": self.number,
            "timestamp_ms": self.timestamp_ms,
            "prev_hash": self.prev_hash.hex(),
            "hash": self.hash.hex() if self.hash else None,
            "transactions": [tx.to_json_dict() for tx in self.transactions],
        }


def make_genesis(timestamp_ms: int = 0) -> Block:
    return Block(0, timestamp_ms, ZERO_HASH, []).seal()


# --- world state -----------------------------------------------------------

class StateSnapshot:
    """Point-in-time immutable view used during proposal execution."""

    __slots__ = ("_entries",)

    def __init__(self, entries: dict[str, tuple[bytes, Version]]):
        self._entries = entries

    def get(self, key: str) -> tuple[bytes, Version] | None:
        return self._entries.get(key)


_DIGEST_MOD = 1 << 256


def _entry_term(key: str, value: bytes, version: Version) -> int:
    data = enc_str(key) + enc_bytes(value) + enc_u64(version[0]) + enc_u64(version[1])
    return int.from_bytes(hashlib.sha256(data).digest(), "big")


class WorldState:
    """Latest value and write version per key. Deletes drop the key;
    only the newest version is retained.

    A running additive digest over the entries is kept alongside, so a
    commit pays for the block's writes instead of a rescan of the whole
    state. Equal entry sets always produce equal digests."""

    def __init__(self) -> None:
        self._entries: dict[str, tuple[bytes, Version]] = {}
        self._acc = 0

    def get(self, key: str) -> tuple[bytes, Version] | None:
        return self._entries.get(key)

    def get_version(self, key: str) -> Version | None:
        entry = self._entries.get(key)
        return entry[1] if entry else None

    def snapshot(self) -> StateSnapshot:
        return StateSnapshot(dict(self._entries))

    def apply_write(self, write: KVWrite, version: Version) -> None:
        old = self._entries.get(write.key)
        if old is not None:
            self._acc = (self._acc - _entry_term(write.key, old[0], old[1])) % _DIGEST_MOD
        if write.value is None:
            self._entries.pop(write.key, None)
        else:
            self._entries[write.key] = (write.value, version)
            self._acc = (self._acc + _entry_term(write.key, write.value, version)) % _DIGEST_MOD

    def digest(self) -> bytes:
        return self._acc.to_bytes(32, "big")

    def items(self) -> list[tuple[str, bytes, Version]]:
        return [(k, v, ver) for k, (v, ver) in self._entries.items()]

    def items_with_prefix(self, prefix: str) -> list[tuple[str, bytes]]:
        return sorted(
            (k, v) for k, (v, _ver) in self._entries.items() if k.startswith(prefix)
        )

    def __len__(self) -> int:
        return len(self._entries)


def state_hash(state: WorldState) -> bytes:
    """Digest over sorted (key, value, version); equal states hash equal
    regardless of insertion order."""
    h = hashlib.sha256()
    for key, value, version in sorted(state.items()):
        h.update(enc_str(key))
        h.update(enc_bytes(value))
        h.update(enc_u64(version[0]))
        h.update(enc_u64(version[1]))
    return h.digest()


# --- execution --------------------------------------------------------------

class KVContext:
    """Key/value facade handed to contract code during simulation.

    Buffers writes and serves re-reads of written keys from the buffer;
    reads of untouched keys record the snapshot version (or absence)
    exactly once, in first-read order.
    """

    def __init__(self, snapshot: StateSnapshot):
        self._snapshot = snapshot
        self._reads: dict[str, Version | None] = {}
        self._writes: dict[str, bytes | None] = {}
        self.events: list[ChaincodeEvent] = []

    def get(self, key: str) -> bytes | None:
        if key in self._writes:
            return self._writes[key]
        entry = self._snapshot.get(key)
        if key not in self._reads:
            self._reads[key] = entry[1] if entry else None
        return entry[0] if entry else None

    def put(self, key: str, value: bytes) -> None:
        if not isinstance(value, bytes):
            raise TypeError("state values are bytes")
        self._writes[key] = value

    def delete(self, key: str) -> None:
        self._writes[key] = None

    def emit(self, name: str, payload: dict[str, str]) -> None:
        self.events.append(ChaincodeEvent.make(name, payload))

    def rwset(self) -> ReadWriteSet:
        reads = [KVRead(k, v) for k, v in self._reads.items()]
        writes = [KVWrite(k, v) for k, v in self._writes.items()]
        return ReadWriteSet(reads, writes)


@dataclass
class ProposalResponse:
    """Endorser-side result of simulating one proposal."""

    ok: bool
    payload: bytes
    error: str | None
    rwset: ReadWriteSet
    events: list[ChaincodeEvent]
    digest: bytes

    @classmethod
    def success(
        cls,
        tx_id: bytes,
        payload: bytes,
        rwset: ReadWriteSet,
        events: list[ChaincodeEvent],
    ) -> "ProposalResponse":
        return cls(True, payload, None, rwset, events, response_digest(tx_id, True, payload, rwset, events))

    @classmethod
    def rejection(cls, tx_id: bytes, error: str) -> "ProposalResponse":
        empty = ReadWriteSet()
        return cls(
            False,
            b"",
            error,
            empty,
            [],
            response_digest(tx_id, False, error.encode("utf-8"), empty, []),
        )


def execute_readset_capture(
    snapshot: StateSnapshot,
    tx_id: bytes,
    program: Callable[[KVContext], object],
) -> ProposalResponse:
    """Run contract code against a snapshot, capturing its rwset.

    Contract failures (ChaincodeError) become rejected responses; any
    other exception propagates as a bug.
    """
    ctx = KVContext(snapshot)
    try:
        result = program(ctx)
    except ChaincodeError as exc:
        return ProposalResponse.rejection(tx_id, exc.wire_message())
    if result is None:
        payload = b""
    else:
        payload = json.dumps(result, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return ProposalResponse.success(tx_id, payload, ctx.rwset(), ctx.events)


# --- endorsement policy -------------------------------------------------------

@dataclass(frozen=True)
class EndorsementPolicy:
    """How many distinct peers must endorse a transaction.

    kind "all" needs every peer in the network, "any" needs at least n,
    "balanced" routes each proposal to a single rotating peer and needs
    that one endorsement.
    """

    kind: str  # "all" | "any" | "balanced"
    n: int = 1
    total_peers: int = 0

    @classmethod
    def all_peers(cls, total_peers: int) -> "EndorsementPolicy":
        return cls("all", total_peers, total_peers)

    @classmethod
    def any_n(cls, n: int) -> "EndorsementPolicy":
        return cls("any", n)

    @classmethod
    def load_balanced(cls) -> "EndorsementPolicy":
        return cls("balanced", 1)

    def required_count(self) -> int:
        if self.kind == "all":
            return self.total_peers
        if self.kind == "any":
            return self.n
        return 1

    def satisfied(self, distinct_endorsers: int) -> bool:
        return distinct_endorsers >= self.required_count()

    def describe(self) -> str:
        if self.kind == "all":
            return f"AllPeers({self.total_peers})"
        if self.kind == "any":
            return f"AnyN({self.n})"
        return "LoadBalanced"


# --- validation and commit ------------------------------------------------------

def validate_transaction(
    tx: Transaction,
    state: WorldState,
    policy: EndorsementPolicy,
    peer_keys: Mapping[str, bytes] | None = None,
) -> tuple[bool, str | None]:
    """Commit-time check of one transaction against the live state.

    Returns (True, None) or (False, reason) with reason one of
    BadSignature, PolicyUnmet, ReadConflict, in that order of
    precedence.
    """
    expected = tx.expected_digest()
    endorsers: set[str] = set()
    for end in tx.endorsements:
        if end.response_digest != expected:
            return False, BAD_SIGNATURE
        if peer_keys is not None:
            key = peer_keys.get(end.peer_id)
            if key is None or not verify_sig(key, end.response_digest, end.signature):
                return False, BAD_SIGNATURE
        endorsers.add(end.peer_id)
    if not policy.satisfied(len(endorsers)):
        return False, POLICY_UNMET
    for read in tx.rwset.reads:
        if state.get_version(read.key) != read.version:
            return False, READ_CONFLICT
    return True, None


@dataclass
class CommitReport:
    block_number: int
    block_hash: bytes
    flags: list[tuple[str, str, str | None]]  # (tx_id hex, validation, reason)
    state_digest: bytes

    @property
    def valid_count(self) -> int:
        return sum(1 for _, v, _ in self.flags if v == VALID)


class Ledger:
    """One replica: the block chain plus the world state it induces."""

    def __init__(self, genesis: Block | None = None):
        self.blocks: list[Block] = []
        self.state = WorldState()
        if genesis is not None:
            if genesis.hash is None:
                genesis.seal()
            self._append(genesis)

    @property
    def head(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    @property
    def height(self) -> int:
        return len(self.blocks)

    def _append(self, block: Block) -> None:
        self.blocks.append(block)

    def append_block(
        self,
        candidate: Block,
        policy: EndorsementPolicy,
        peer_keys: Mapping[str, bytes] | None = None,
    ) -> CommitReport:
        """Validate every transaction in order, apply the valid ones,
        seal the block, and append it (invalid transactions included).

        Within a block, later transactions validate against the writes
        of earlier valid ones, so the committed state always equals a
        serial replay of the valid prefix order.

        Raises:
            BrokenChain: candidate number or prev_hash does not extend
                the current head.
        """
        head = self.head
        if head is None:
            if candidate.number != 0 or candidate.prev_hash != ZERO_HASH:
                raise BrokenChain("first block must be genesis")
        else:
            if candidate.number != head.number + 1:
                raise BrokenChain(
                    f"expected block {head.number + 1}, got {candidate.number}"
                )
            if head.hash is None or candidate.prev_hash != head.hash:
                raise BrokenChain("prev_hash does not match chain head")

        flags: list[tuple[str, str, str | None]] = []
        for index, tx in enumerate(candidate.transactions):
            ok, reason = validate_transaction(tx, self.state, policy, peer_keys)
            tx.validation = VALID if ok else INVALID
            tx.invalid_reason = reason
            if ok:
                for write in tx.rwset.writes:
                    self.state.apply_write(write, (candidate.number, index))
            flags.append((tx.tx_id.hex(), tx.validation, reason))
        candidate.seal()
        self._append(candidate)
        return CommitReport(candidate.number, candidate.hash or b"", flags, self.state.digest())

    def state_hash(self) -> bytes:
        return state_hash(self.state)

    def verify_chain(self) -> bool:
        return verify_chain(self.blocks)


def verify_chain(blocks: list[Block]) -> bool:
    """Recompute every block hash and check the prev_hash links and the
    all-zero genesis anchor. False on any mismatch; never raises."""
    try:
        prev: Block | None = None
        for block in blocks:
            if block.hash is None or block.hash != block.compute_hash():
                return False
            if prev is None:
                if block.number != 0 or block.prev_hash != ZERO_HASH:
                    return False
            else:
                if block.number != prev.number + 1 or block.prev_hash != prev.hash:
                    return False
            prev = block
        return True
    except Exception:
        return False


# --- persistence ------------------------------------------------------------

def write_chain(blocks: list[Block], path: str) -> None:
    """Append-only file of length-prefixed canonical blocks."""
    with open(path, "wb") as fh:
        for block in blocks:
            fh.write(enc_bytes(block.to_bytes()))


def append_block_file(block: Block, path: str) -> None:
    with open(path, "ab") as fh:
        fh.write(enc_bytes(block.to_bytes()))


def read_chain(path: str) -> list[Block]:
    with open(path, "rb") as fh:
        data = fh.read()
    reader = ByteReader(data)
    blocks = []
    while not reader.exhausted:
        blocks.append(Block.from_bytes(reader.bytes_()))
    return blocks


def dump_chain_json(blocks: list[Block]) -> list[dict]:
    return [b.to_json_dict() for b in blocks]
