"""Permissioned-blockchain ride hailing.

Subsystems: identity (org CAs, certificates), ledger (hash-chained
blocks over a versioned world state), chaincode (the ride-hailing
contract), netsim (endorse/order/commit network simulator), harness
(load generation and latency sweeps), gateway (client sessions, CLI,
and HTTP + SSE API).
"""

__version__ = "0.1.0"
