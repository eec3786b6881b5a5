"""Password digests, digest shares, nonces and the challenge-response primitives.

Everything here is a pure function of its arguments.  Randomness is always
passed in as an ``rng`` object exposing ``randbytes(n)``; ``random.Random``
(seeded, for tests and simulation) and ``random.SystemRandom`` (backed by
``os.urandom``) both qualify.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import random
from dataclasses import dataclass

DIGEST_SIZE = 32
NONCE_SIZE = 16
PROOF_SIZE = 32

LOGIN_PROOF_TAG = b"\x01"
SESSION_KEY_TAG = b"\x02"
SERVER_PROOF_TAG = b"\x03"


class SplitMode(str, enum.Enum):
    SEGMENT = "segment"
    XOR = "xor"


class ShareError(ValueError):
    """A share set cannot be recombined."""


class MissingShareError(ShareError):
    pass


class DuplicateShareError(ShareError):
    pass


class InconsistentSharesError(ShareError):
    pass


class ShareLengthError(ShareError):
    pass


@dataclass(frozen=True)
class DigestShare:
    index: int
    total: int
    mode: SplitMode
    payload: bytes

    def __post_init__(self):
        object.__setattr__(self, "mode", SplitMode(self.mode))


def system_rng() -> random.SystemRandom:
    return random.SystemRandom()


def compute_digest(password: str) -> bytes:
    if not isinstance(password, str):
        raise TypeError("password must be str")
    if not password:
        raise ValueError("empty password")
    return hashlib.sha256(password.encode("utf-8")).digest()


def segment_lengths(total: int) -> list[int]:
    """Payload sizes of a Segment split; the first ``32 % total`` shares get the extra byte."""
    if not 1 <= total <= DIGEST_SIZE:
        raise ValueError(f"segment split needs 1 <= n <= {DIGEST_SIZE}, got {total}")
    base, extra = divmod(DIGEST_SIZE, total)
    return [base + 1 if i < extra else base for i in range(total)]


def expected_share_length(index: int, total: int, mode: SplitMode) -> int:
    if not 1 <= index <= total:
        raise ValueError(f"share index {index} outside 1..{total}")
    if SplitMode(mode) is SplitMode.XOR:
        return DIGEST_SIZE
    return segment_lengths(total)[index - 1]


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def split_digest(digest: bytes, n: int, mode: SplitMode = SplitMode.SEGMENT, rng=None) -> list[DigestShare]:
    """Split ``digest`` into ``n`` shares, indexed 1..n.

    Segment shares are contiguous slices in index order.  Xor shares 1..n-1
    are drawn from ``rng`` and share n is the digest masked by all of them.
    """
    if len(digest) != DIGEST_SIZE:
        raise ValueError(f"digest must be {DIGEST_SIZE} bytes")
    mode = SplitMode(mode)
    if mode is SplitMode.SEGMENT:
        shares = []
        offset = 0
        for i, size in enumerate(segment_lengths(n), start=1):
            shares.append(DigestShare(i, n, mode, digest[offset:offset + size]))
            offset += size
        return shares

    if n < 1:
        raise ValueError(f"xor split needs n >= 1, got {n}")
    if rng is None:
        rng = system_rng()
    masks = [rng.randbytes(DIGEST_SIZE) for _ in range(n - 1)]
    last = digest
    for m in masks:
        last = _xor(last, m)
    return [DigestShare(i, n, mode, m) for i, m in enumerate(masks, start=1)] + [DigestShare(n, n, mode, last)]


def recombine_shares(shares) -> bytes:
    shares = list(shares)
    if not shares:
        raise MissingShareError("no shares supplied")
    total, mode = shares[0].total, shares[0].mode
    for s in shares:
        if s.total != total or s.mode != mode:
            raise InconsistentSharesError("shares disagree on total or mode")
    if mode is SplitMode.SEGMENT and not 1 <= total <= DIGEST_SIZE:
        raise InconsistentSharesError(f"segment total {total} out of range")
    by_index: dict[int, DigestShare] = {}
    for s in shares:
        if not 1 <= s.index <= total:
            raise InconsistentSharesError(f"share index {s.index} outside 1..{total}")
        if s.index in by_index:
            raise DuplicateShareError(f"share index {s.index} given twice")
        by_index[s.index] = s
    missing = sorted(set(range(1, total + 1)) - by_index.keys())
    if missing:
        raise MissingShareError(f"missing share indices {missing}")
    ordered = [by_index[i] for i in range(1, total + 1)]
    for s in ordered:
        if len(s.payload) != expected_share_length(s.index, total, mode):
            raise ShareLengthError(f"share {s.index} has {len(s.payload)} payload bytes")

    if mode is SplitMode.SEGMENT:
        return b"".join(s.payload for s in ordered)
    out = bytes(DIGEST_SIZE)
    for s in ordered:
        out = _xor(out, s.payload)
    return out


def generate_nonce(rng=None) -> bytes:
    if rng is None:
        rng = system_rng()
    return rng.randbytes(NONCE_SIZE)


def _tagged_hash(tag: bytes, server_nonce: bytes, client_nonce: bytes, digest: bytes) -> bytes:
    return hashlib.sha256(tag + server_nonce + client_nonce + digest).digest()


def compute_login_proof(server_nonce: bytes, client_nonce: bytes, digest: bytes) -> bytes:
    return _tagged_hash(LOGIN_PROOF_TAG, server_nonce, client_nonce, digest)


def derive_session_key(server_nonce: bytes, client_nonce: bytes, digest: bytes) -> bytes:
    return _tagged_hash(SESSION_KEY_TAG, server_nonce, client_nonce, digest)


def compute_server_proof(server_nonce: bytes, client_nonce: bytes, digest: bytes) -> bytes:
    return _tagged_hash(SERVER_PROOF_TAG, server_nonce, client_nonce, digest)


def constant_time_eq(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(bytes(a), bytes(b))
