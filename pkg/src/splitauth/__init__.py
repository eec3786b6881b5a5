"""Multi-server password authentication with a split verifier.

Passwords are reduced to a SHA-256 digest that is split across ``n`` servers,
and logins are confirmed with a per-session nonce challenge.
"""

from .core import (
    DigestShare,
    SplitMode,
    compute_digest,
    compute_login_proof,
    compute_server_proof,
    constant_time_eq,
    derive_session_key,
    generate_nonce,
    recombine_shares,
    split_digest,
)
from .harness import SimCluster, run_comparison_report
from .node import NodeConfig, run_node, start_cluster, start_node
from .store import ShareStore

__all__ = [
    "DigestShare",
    "NodeConfig",
    "ShareStore",
    "SimCluster",
    "SplitMode",
    "compute_digest",
    "compute_login_proof",
    "compute_server_proof",
    "constant_time_eq",
    "derive_session_key",
    "generate_nonce",
    "recombine_shares",
    "run_comparison_report",
    "run_node",
    "split_digest",
    "start_cluster",
    "start_node",
]

__version__ = "0.1.0"
