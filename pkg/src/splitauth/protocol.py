"""Wire messages, the length-prefixed JSON codec, and sans-I/O state machines.

A frame is a 4-byte big-endian payload length followed by a compact JSON
object whose first member is ``"type"``.  Remaining members follow the field
order of the message dataclass.  Byte fields travel as lowercase hex.

The client and gateway machines never touch a socket: they take a session
value and a message and hand back a new session value plus whatever should
happen next (a reply, an :class:`Event`, or a list of effects the runtime must
carry out).
"""

from __future__ import annotations

import dataclasses
import enum
import json
import re
import struct
import unicodedata
from dataclasses import dataclass, field
from typing import ClassVar, Optional

from .core import (
    DIGEST_SIZE,
    NONCE_SIZE,
    PROOF_SIZE,
    DigestShare,
    ShareError,
    SplitMode,
    compute_digest,
    compute_login_proof,
    compute_server_proof,
    constant_time_eq,
    derive_session_key,
    expected_share_length,
    generate_nonce,
    recombine_shares,
)

HEADER = struct.Struct(">I")
MAX_FRAME = 1 << 20
MAX_USERNAME = 64

_HEX = re.compile(r"(?:[0-9a-f]{2})*")

# Failure reasons carried in LoginErr / RegisterErr.
INVALID = "invalid"
PROTOCOL = "protocol"
UNAVAILABLE = "unavailable"
USERNAME_EXISTS = "username already exists"
REGISTRATION_ABORTED = "registration aborted"


class FrameError(ValueError):
    """Connection-fatal framing or schema problem."""


class OversizeFrame(FrameError):
    pass


class MalformedFrame(FrameError):
    pass


class ProtocolViolation(Exception):
    """A state machine received a message it cannot accept in its current stage."""


def validate_username(username) -> str:
    if not isinstance(username, str) or not 1 <= len(username) <= MAX_USERNAME:
        raise ValueError(f"username must be 1..{MAX_USERNAME} characters")
    if any(unicodedata.category(ch) == "Cc" for ch in username):
        raise ValueError("username contains control characters")
    return username


def _check_hex(value, nbytes: Optional[int], name: str) -> None:
    if not isinstance(value, str) or not _HEX.fullmatch(value):
        raise ValueError(f"{name} must be lowercase even-length hex")
    if nbytes is not None and len(value) != 2 * nbytes:
        raise ValueError(f"{name} must encode {nbytes} bytes")


def _check_int(value, name: str) -> None:
    if type(value) is not int:
        raise ValueError(f"{name} must be an integer")


def _check_reason(value) -> None:
    if not isinstance(value, str):
        raise ValueError("reason must be a string")


def _check_share_fields(index, total, mode, payload_hex) -> None:
    _check_int(index, "index")
    _check_int(total, "total")
    if mode not in ("segment", "xor"):
        raise ValueError(f"unknown split mode {mode!r}")
    if total < 1 or (mode == "segment" and total > DIGEST_SIZE):
        raise ValueError(f"share total {total} out of range")
    if not 1 <= index <= total:
        raise ValueError(f"share index {index} outside 1..{total}")
    _check_hex(payload_hex, expected_share_length(index, total, SplitMode(mode)), "payload_hex")


MESSAGE_TYPES: dict[str, type] = {}


def _message(tag: str):
    def register(cls):
        cls = dataclass(frozen=True)(cls)
        cls.TYPE = tag
        MESSAGE_TYPES[tag] = cls
        return cls
    return register


class Message:
    """Base for wire messages.

    Construction does not validate; :func:`encode_frame` and
    :func:`decode_frame` do, and the state machines treat an invalid message
    like an out-of-order one.
    """

    TYPE: ClassVar[str]

    def validate(self) -> None:
        pass

    def is_valid(self) -> bool:
        try:
            self.validate()
        except (TypeError, ValueError):
            return False
        return True


@_message("register")
class Register(Message):
    username: str
    digest_hex: str

    def validate(self):
        validate_username(self.username)
        _check_hex(self.digest_hex, DIGEST_SIZE, "digest_hex")


@_message("register_ok")
class RegisterOk(Message):
    pass


@_message("register_err")
class RegisterErr(Message):
    reason: str

    def validate(self):
        _check_reason(self.reason)


@_message("login")
class Login(Message):
    username: str
    client_nonce_hex: str

    def validate(self):
        validate_username(self.username)
        _check_hex(self.client_nonce_hex, NONCE_SIZE, "client_nonce_hex")


@_message("challenge")
class Challenge(Message):
    server_nonce_hex: str

    def validate(self):
        _check_hex(self.server_nonce_hex, NONCE_SIZE, "server_nonce_hex")


@_message("challenge_response")
class ChallengeResponse(Message):
    proof_hex: str

    def validate(self):
        _check_hex(self.proof_hex, PROOF_SIZE, "proof_hex")


@_message("login_ok")
class LoginOk(Message):
    server_proof_hex: str

    def validate(self):
        _check_hex(self.server_proof_hex, PROOF_SIZE, "server_proof_hex")


@_message("login_err")
class LoginErr(Message):
    reason: str

    def validate(self):
        _check_reason(self.reason)


@_message("logout")
class Logout(Message):
    pass


@_message("logout_ok")
class LogoutOk(Message):
    pass


@_message("share_put")
class SharePut(Message):
    username: str
    index: int
    total: int
    mode: str
    payload_hex: str

    def validate(self):
        validate_username(self.username)
        _check_share_fields(self.index, self.total, self.mode, self.payload_hex)

    @classmethod
    def from_share(cls, username: str, share: DigestShare) -> "SharePut":
        return cls(username, share.index, share.total, share.mode.value, share.payload.hex())

    def share(self) -> DigestShare:
        return DigestShare(self.index, self.total, SplitMode(self.mode), bytes.fromhex(self.payload_hex))


@_message("share_put_ok")
class SharePutOk(Message):
    pass


@_message("share_put_err")
class SharePutErr(Message):
    reason: str

    def validate(self):
        _check_reason(self.reason)


@_message("share_get")
class ShareGet(Message):
    username: str

    def validate(self):
        validate_username(self.username)


@_message("share_data")
class ShareData(Message):
    index: int
    total: int
    mode: str
    payload_hex: str

    def validate(self):
        _check_share_fields(self.index, self.total, self.mode, self.payload_hex)

    @classmethod
    def from_share(cls, share: DigestShare) -> "ShareData":
        return cls(share.index, share.total, share.mode.value, share.payload.hex())

    def share(self) -> DigestShare:
        return DigestShare(self.index, self.total, SplitMode(self.mode), bytes.fromhex(self.payload_hex))


@_message("share_missing")
class ShareMissing(Message):
    pass


# Compensating delete used to roll back a partially applied registration.
@_message("share_del")
class ShareDel(Message):
    username: str

    def validate(self):
        validate_username(self.username)


@_message("share_del_ok")
class ShareDelOk(Message):
    pass


# ---------------------------------------------------------------------------
# Codec


def encode_frame(message: Message) -> bytes:
    if not isinstance(message, Message):
        raise TypeError(f"not a protocol message: {message!r}")
    message.validate()
    obj = {"type": message.TYPE}
    for f in dataclasses.fields(message):
        obj[f.name] = getattr(message, f.name)
    payload = json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    if len(payload) > MAX_FRAME:
        raise OversizeFrame(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(payload)) + payload


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def decode_frame(buffer: bytes):
    """Decode the first frame in ``buffer``.

    Returns ``(message, rest)``, or ``None`` when the buffer does not yet hold
    a complete frame.
    """
    if len(buffer) < HEADER.size:
        return None
    (length,) = HEADER.unpack_from(buffer)
    if length > MAX_FRAME:
        raise OversizeFrame(f"frame declares {length} bytes, limit is {MAX_FRAME}")
    end = HEADER.size + length
    if len(buffer) < end:
        return None
    payload = bytes(buffer[HEADER.size:end])
    try:
        obj = json.loads(payload.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedFrame(f"bad JSON payload: {exc}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("type"), str):
        raise MalformedFrame("payload is not an object with a string 'type'")
    cls = MESSAGE_TYPES.get(obj.pop("type"))
    if cls is None:
        raise MalformedFrame("unknown message type")
    names = [f.name for f in dataclasses.fields(cls)]
    if set(obj) != set(names):
        raise MalformedFrame(f"{cls.TYPE} expects fields {names}, got {sorted(obj)}")
    try:
        message = cls(**obj)
        message.validate()
    except (TypeError, ValueError) as exc:
        raise MalformedFrame(f"invalid {cls.TYPE}: {exc}") from None
    return message, bytes(buffer[end:])


def decode_one(frame: bytes) -> Message:
    """Decode a buffer that must contain exactly one complete frame."""
    result = decode_frame(frame)
    if result is None:
        raise MalformedFrame("incomplete frame")
    message, rest = result
    if rest:
        raise MalformedFrame("trailing bytes after frame")
    return message


# ---------------------------------------------------------------------------
# Client


class ClientStage(str, enum.Enum):
    IDLE = "idle"
    AWAIT_REGISTER_ACK = "await_register_ack"
    AWAIT_CHALLENGE = "await_challenge"
    AWAIT_LOGIN_OK = "await_login_ok"
    AUTHENTICATED = "authenticated"
    FAILED = "failed"


@dataclass(frozen=True)
class Event:
    pass


@dataclass(frozen=True)
class Registered(Event):
    username: str


@dataclass(frozen=True)
class RegisterFailed(Event):
    reason: str


@dataclass(frozen=True)
class LoginSucceeded(Event):
    username: str


@dataclass(frozen=True)
class LoginFailed(Event):
    reason: str


@dataclass(frozen=True)
class ServerAuthFailed(Event):
    pass


@dataclass(frozen=True)
class ProtocolError(Event):
    detail: str


@dataclass(frozen=True)
class ClientSession:
    stage: ClientStage
    username: str
    digest: bytes = field(repr=False)
    client_nonce: Optional[bytes] = None
    server_nonce: Optional[bytes] = None
    session_key: Optional[bytes] = field(default=None, repr=False)

    @property
    def terminal(self) -> bool:
        return self.stage in (ClientStage.AUTHENTICATED, ClientStage.FAILED, ClientStage.IDLE)


def client_start_register(username: str, password: str):
    validate_username(username)
    digest = compute_digest(password)
    session = ClientSession(ClientStage.AWAIT_REGISTER_ACK, username, digest)
    return session, Register(username, digest.hex())


def client_start_login(username: str, password: str, rng=None):
    validate_username(username)
    digest = compute_digest(password)
    nonce = generate_nonce(rng)
    session = ClientSession(ClientStage.AWAIT_CHALLENGE, username, digest, client_nonce=nonce)
    return session, Login(username, nonce.hex())


def _fail(session, event):
    return dataclasses.replace(session, stage=ClientStage.FAILED, session_key=None), None, event


def client_on_message(session: ClientSession, message: Message):
    """Advance a client session by one inbound message.

    Returns ``(session, reply_or_None, event_or_None)``.  Anything arriving
    out of order moves the session to FAILED with a :class:`ProtocolError`.
    """
    stage = session.stage
    if not message.is_valid():
        return _fail(session, ProtocolError(f"invalid {message.TYPE}"))
    if stage is ClientStage.AWAIT_REGISTER_ACK:
        if isinstance(message, RegisterOk):
            return dataclasses.replace(session, stage=ClientStage.IDLE), None, Registered(session.username)
        if isinstance(message, RegisterErr):
            return _fail(session, RegisterFailed(message.reason))
    elif stage is ClientStage.AWAIT_CHALLENGE:
        if isinstance(message, Challenge):
            ns = bytes.fromhex(message.server_nonce_hex)
            proof = compute_login_proof(ns, session.client_nonce, session.digest)
            session = dataclasses.replace(session, stage=ClientStage.AWAIT_LOGIN_OK, server_nonce=ns)
            return session, ChallengeResponse(proof.hex()), None
        if isinstance(message, LoginErr):
            return _fail(session, LoginFailed(message.reason))
    elif stage is ClientStage.AWAIT_LOGIN_OK:
        if isinstance(message, LoginOk):
            ns, nc = session.server_nonce, session.client_nonce
            expected = compute_server_proof(ns, nc, session.digest)
            if not constant_time_eq(bytes.fromhex(message.server_proof_hex), expected):
                return _fail(session, ServerAuthFailed())
            key = derive_session_key(ns, nc, session.digest)
            session = dataclasses.replace(session, stage=ClientStage.AUTHENTICATED, session_key=key)
            return session, None, LoginSucceeded(session.username)
        if isinstance(message, LoginErr):
            return _fail(session, LoginFailed(message.reason))
    else:
        return _fail(session, ProtocolError(f"session already {stage.value}"))
    if isinstance(message, RegisterErr):
        return _fail(session, RegisterFailed(message.reason))
    return _fail(session, ProtocolError(f"unexpected {message.TYPE} while {stage.value}"))


# ---------------------------------------------------------------------------
# Gateway


class GatewayStage(str, enum.Enum):
    AWAIT_SHARES = "await_shares"
    AWAIT_RESPONSE = "await_response"
    GRANTED = "granted"
    DENIED = "denied"


@dataclass(frozen=True)
class GatewaySession:
    stage: GatewayStage
    username: str
    client_nonce: bytes
    server_nonce: bytes
    expected_digest: Optional[bytes] = field(default=None, repr=False)
    dummy: bool = False
    session_key: Optional[bytes] = field(default=None, repr=False)

    @property
    def in_progress(self) -> bool:
        return self.stage in (GatewayStage.AWAIT_SHARES, GatewayStage.AWAIT_RESPONSE)


@dataclass(frozen=True)
class Effect:
    pass


@dataclass(frozen=True)
class SplitAndStore(Effect):
    username: str
    digest: bytes = field(repr=False)


@dataclass(frozen=True)
class FetchShares(Effect):
    username: str


@dataclass(frozen=True)
class Reply(Effect):
    message: Message


def _deny(session, reason):
    if session is not None:
        session = dataclasses.replace(session, stage=GatewayStage.DENIED, session_key=None)
    return session, [Reply(LoginErr(reason))]


def gateway_on_client_message(session: Optional[GatewaySession], message: Message, rng=None):
    """Handle one client-originated message.

    Returns ``(session, effects)``.  ``session`` is ``None`` until the first
    Login on a connection.  Register leaves the session untouched and asks the
    runtime to split and store; the runtime answers it with
    :func:`gateway_on_register_result`.
    """
    if not message.is_valid():
        return _deny(session, PROTOCOL)
    in_progress = session is not None and session.in_progress
    if isinstance(message, Register) and not in_progress:
        return session, [SplitAndStore(message.username, bytes.fromhex(message.digest_hex))]
    if isinstance(message, Login) and not in_progress:
        fresh = GatewaySession(
            GatewayStage.AWAIT_SHARES,
            message.username,
            client_nonce=bytes.fromhex(message.client_nonce_hex),
            server_nonce=generate_nonce(rng),
        )
        return fresh, [FetchShares(message.username)]
    if isinstance(message, ChallengeResponse) and session is not None and session.stage is GatewayStage.AWAIT_RESPONSE:
        ns, nc = session.server_nonce, session.client_nonce
        proof = bytes.fromhex(message.proof_hex)
        if session.dummy:
            # Same work as a real check so the decoy is indistinguishable.
            constant_time_eq(proof, compute_login_proof(ns, nc, bytes(DIGEST_SIZE)))
            return _deny(session, INVALID)
        digest = session.expected_digest
        if not constant_time_eq(proof, compute_login_proof(ns, nc, digest)):
            return _deny(session, INVALID)
        granted = dataclasses.replace(
            session, stage=GatewayStage.GRANTED, session_key=derive_session_key(ns, nc, digest)
        )
        return granted, [Reply(LoginOk(compute_server_proof(ns, nc, digest).hex()))]
    if isinstance(message, Logout) and not in_progress:
        return None, [Reply(LogoutOk())]
    return _deny(session, PROTOCOL)


def gateway_on_register_result(error: Optional[str]) -> Message:
    """Reply for a finished SplitAndStore: ``error`` is None on success."""
    return RegisterOk() if error is None else RegisterErr(error)


def gateway_on_shares(session: GatewaySession, shares):
    """Feed the outcome of FetchShares into a session awaiting shares.

    ``shares`` is the list of shares found (``None`` in place of any node that
    had none).  An unknown user, or a share set that does not recombine, turns
    the session into a decoy: it still gets a Challenge but can never be granted.
    """
    if session is None or session.stage is not GatewayStage.AWAIT_SHARES:
        return _deny(session, PROTOCOL)
    digest = None
    if shares and all(s is not None for s in shares):
        try:
            digest = recombine_shares(shares)
        except ShareError:
            digest = None
    session = dataclasses.replace(
        session, stage=GatewayStage.AWAIT_RESPONSE, expected_digest=digest, dummy=digest is None
    )
    return session, [Reply(Challenge(session.server_nonce.hex()))]


def gateway_on_fetch_failed(session: GatewaySession):
    """A share server could not be reached in time."""
    return _deny(session, UNAVAILABLE)


# ---------------------------------------------------------------------------
# Share server


def shareserver_on_message(message: Message, store) -> Message:
    """Answer one share-server request against ``store`` (a ShareStore)."""
    if isinstance(message, SharePut):
        if not message.is_valid():
            return SharePutErr("malformed")
        share = message.share()
        if not store.put(message.username, share):
            return SharePutErr("exists")
        return SharePutOk()
    if not message.is_valid():
        raise ProtocolViolation(f"invalid {message.TYPE}")
    if isinstance(message, ShareGet):
        share = store.get(message.username)
        return ShareMissing() if share is None else ShareData.from_share(share)
    if isinstance(message, ShareDel):
        store.delete(message.username)
        return ShareDelOk()
    raise ProtocolViolation(f"share server cannot handle {message.TYPE}")
