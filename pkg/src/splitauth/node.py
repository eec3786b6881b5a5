"""Networked gateway and share-server nodes.

The gateway is the only client-facing node.  It keeps share 1 of every user
in its own store and holds shares 2..n on its peers, in configured order.
:class:`Gateway` and :class:`GatewayConnection` carry out the protocol effects
against abstract peers (callables taking a request message and returning the
reply).  The TCP servers in this module and the in-process simulator in
:mod:`splitauth.harness` both drive them.
"""

from __future__ import annotations

import logging
import random
import socket
import socketserver
import threading
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .core import DigestShare, SplitMode, split_digest, system_rng
from .protocol import (
    REGISTRATION_ABORTED,
    USERNAME_EXISTS,
    FetchShares,
    FrameError,
    GatewaySession,
    Message,
    ProtocolViolation,
    Reply,
    ShareData,
    ShareDel,
    ShareGet,
    ShareMissing,
    SharePut,
    SharePutErr,
    SharePutOk,
    SplitAndStore,
    decode_frame,
    encode_frame,
    gateway_on_client_message,
    gateway_on_fetch_failed,
    gateway_on_register_result,
    gateway_on_shares,
    shareserver_on_message,
)
from .store import ShareStore, StorageError

log = logging.getLogger(__name__)

Peer = Callable[[Message], Message]


class PeerUnavailable(Exception):
    """A share server could not be reached or answered too late."""


class RegistrationError(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class NodeStartupError(RuntimeError):
    pass


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


@dataclass
class NodeConfig:
    role: str
    listen: str
    peers: list[str] = field(default_factory=list)
    mode: SplitMode = SplitMode.SEGMENT
    store_path: Optional[str] = None
    fetch_timeout_ms: int = 2000
    n: Optional[int] = None

    def __post_init__(self):
        self.mode = SplitMode(self.mode)
        if self.role not in ("gateway", "shareserver"):
            raise ValueError(f"unknown role {self.role!r}")
        parse_address(self.listen)
        for p in self.peers:
            parse_address(p)
        if self.role == "shareserver":
            if self.peers:
                raise ValueError("a share server takes no peers")
        else:
            if self.n is None:
                self.n = len(self.peers) + 1
            if self.n != len(self.peers) + 1:
                raise ValueError(f"n={self.n} but {len(self.peers)} peers configured")
            if self.mode is SplitMode.SEGMENT and self.n > 32:
                raise ValueError("segment mode supports at most 32 nodes")
        if self.fetch_timeout_ms <= 0:
            raise ValueError("fetch timeout must be positive")


class _LockedRng:
    """Serializes ``randbytes`` on a shared generator."""

    def __init__(self, rng):
        self._rng = rng
        self._lock = threading.Lock()

    def randbytes(self, n: int) -> bytes:
        with self._lock:
            return self._rng.randbytes(n)


def gateway_register(username: str, digest: bytes, store: ShareStore, peers: Sequence[Peer], mode, rng) -> None:
    """Split ``digest`` over the local store and ``peers``, all or nothing.

    Share 1 is stored locally, share i goes to ``peers[i - 2]``.  If any peer
    refuses or fails, every share written during this call is deleted again
    and :class:`RegistrationError` is raised.
    """
    if store.get(username) is not None:
        raise RegistrationError(USERNAME_EXISTS)
    shares = split_digest(digest, len(peers) + 1, mode, rng)
    if not store.put(username, shares[0]):
        raise RegistrationError(USERNAME_EXISTS)
    written: list[Peer] = []
    for peer, share in zip(peers, shares[1:]):
        try:
            reply = peer(SharePut.from_share(username, share))
        except PeerUnavailable as exc:
            log.warning("registration of %r aborted: %s", username, exc)
            reply = None
        if isinstance(reply, SharePutOk):
            written.append(peer)
            continue
        store.delete(username)
        for done in written:
            try:
                done(ShareDel(username))
            except PeerUnavailable:
                log.error("could not roll back share of %r on a peer", username)
        if isinstance(reply, SharePutErr) and reply.reason == "exists":
            raise RegistrationError(USERNAME_EXISTS)
        raise RegistrationError(REGISTRATION_ABORTED)


def fetch_share(peer: Peer, username: str) -> Optional[DigestShare]:
    reply = peer(ShareGet(username))
    if isinstance(reply, ShareData):
        return reply.share()
    if isinstance(reply, ShareMissing):
        return None
    raise PeerUnavailable(f"unexpected reply {reply.TYPE} to share_get")


class Gateway:
    """Gateway state shared by all client connections."""

    def __init__(
        self,
        store: ShareStore,
        peers: Sequence[Peer] = (),
        mode: SplitMode = SplitMode.SEGMENT,
        rng=None,
        fetch_timeout: float = 2.0,
        parallel: bool = False,
    ):
        self.store = store
        self.peers = list(peers)
        self.mode = SplitMode(mode)
        self.rng = _LockedRng(rng if rng is not None else system_rng())
        self.fetch_timeout = fetch_timeout
        self._register_lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=4 * len(self.peers)) if parallel and self.peers else None

    @property
    def n(self) -> int:
        return len(self.peers) + 1

    def register(self, username: str, digest: bytes) -> Optional[str]:
        with self._register_lock:
            try:
                gateway_register(username, digest, self.store, self.peers, self.mode, self.rng)
            except RegistrationError as exc:
                return exc.reason
            except StorageError:
                log.exception("local store failure while registering %r", username)
                return REGISTRATION_ABORTED
        return None

    def fetch_shares(self, username: str) -> list[Optional[DigestShare]]:
        """Shares 1..n for ``username`` in index order, ``None`` where a node has none."""
        local = self.store.get(username)
        if self._pool is None:
            return [local] + [fetch_share(p, username) for p in self.peers]
        futures = [self._pool.submit(fetch_share, p, username) for p in self.peers]
        _, pending = wait(futures, timeout=self.fetch_timeout)
        if pending:
            for f in pending:
                f.cancel()
            raise PeerUnavailable("share fetch timed out")
        return [local] + [f.result() for f in futures]

    def connection(self) -> "GatewayConnection":
        return GatewayConnection(self)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=False, cancel_futures=True)


class GatewayConnection:
    """One client connection: a single gateway session at a time, one reply per request."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway
        self.session: Optional[GatewaySession] = None

    def handle(self, message: Message) -> Message:
        session, pending = gateway_on_client_message(self.session, message, self.gateway.rng)
        reply = None
        while pending:
            effect = pending.pop(0)
            if isinstance(effect, Reply):
                reply = effect.message
            elif isinstance(effect, SplitAndStore):
                error = self.gateway.register(effect.username, effect.digest)
                reply = gateway_on_register_result(error)
            elif isinstance(effect, FetchShares):
                try:
                    shares = self.gateway.fetch_shares(effect.username)
                except PeerUnavailable as exc:
                    log.warning("login for %r unavailable: %s", effect.username, exc)
                    session, more = gateway_on_fetch_failed(session)
                else:
                    session, more = gateway_on_shares(session, shares)
                pending.extend(more)
        self.session = session
        return reply


# ---------------------------------------------------------------------------
# Socket plumbing


def iter_frames(sock: socket.socket):
    """Yield messages from ``sock`` until EOF.  Raises FrameError on garbage."""
    buf = b""
    while True:
        result = decode_frame(buf)
        if result is not None:
            message, buf = result
            yield message
            continue
        chunk = sock.recv(65536)
        if not chunk:
            return
        buf += chunk


class FrameConnection:
    """Blocking client side of a framed TCP connection."""

    def __init__(self, address: str, timeout: Optional[float] = None):
        host, port = parse_address(address)
        self.address = address
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._buf = b""
        self.sent: list[bytes] = []
        self.received: list[bytes] = []

    def send_raw(self, frame: bytes) -> None:
        self.sent.append(frame)
        self.sock.sendall(frame)

    def recv(self) -> Message:
        while True:
            result = decode_frame(self._buf)
            if result is not None:
                message, rest = result
                self.received.append(self._buf[: len(self._buf) - len(rest)])
                self._buf = rest
                return message
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError("connection closed by peer")
            self._buf += chunk

    def request(self, message: Message) -> Message:
        self.send_raw(encode_frame(message))
        return self.recv()

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def tcp_peer(address: str, timeout: float) -> Peer:
    """A peer callable that performs one request per fresh TCP connection."""

    def call(message: Message) -> Message:
        try:
            with FrameConnection(address, timeout=timeout) as conn:
                return conn.request(message)
        except (OSError, FrameError) as exc:
            raise PeerUnavailable(f"{address}: {exc}") from exc

    return call


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, handler, node):
        self.node = node
        self.live: set[socket.socket] = set()
        self.live_lock = threading.Lock()
        super().__init__(address, handler)


class _Handler(socketserver.BaseRequestHandler):
    def setup(self):
        with self.server.live_lock:
            self.server.live.add(self.request)

    def finish(self):
        with self.server.live_lock:
            self.server.live.discard(self.request)

    def handle(self):
        node = self.server.node
        reply_to = node.connection_handler()
        try:
            for message in iter_frames(self.request):
                reply = reply_to(message)
                if reply is None:
                    return
                self.request.sendall(encode_frame(reply))
        except FrameError as exc:
            log.info("dropping connection from %s: %s", self.client_address, exc)
        except ProtocolViolation as exc:
            log.info("dropping connection from %s: %s", self.client_address, exc)
        except OSError:
            pass


class Node:
    """A running node: listening socket, serving thread and store."""

    def __init__(self, config: NodeConfig, rng=None):
        self.config = config
        self.store = ShareStore(config.store_path)
        self.gateway: Optional[Gateway] = None
        if config.role == "gateway":
            timeout = config.fetch_timeout_ms / 1000
            peers = [tcp_peer(p, timeout) for p in config.peers]
            self.gateway = Gateway(self.store, peers, config.mode, rng, timeout, parallel=True)
        try:
            self.server = _Server(parse_address(config.listen), _Handler, self)
        except OSError as exc:
            self.store.close()
            raise NodeStartupError(f"cannot listen on {config.listen}: {exc}") from exc
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self.server.server_address[:2]
        return f"{host}:{port}"

    def connection_handler(self):
        if self.gateway is not None:
            return self.gateway.connection().handle
        return lambda message: shareserver_on_message(message, self.store)

    def serve_forever(self) -> None:
        log.info("%s listening on %s", self.config.role, self.address)
        self.server.serve_forever(poll_interval=0.05)

    def start(self) -> "Node":
        self._thread = threading.Thread(target=self.serve_forever, name=f"{self.config.role}@{self.address}", daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        """Stop serving, drop live connections and close the store (a simulated kill)."""
        self.server.shutdown()
        self.server.server_close()
        with self.server.live_lock:
            for s in list(self.server.live):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
        if self._thread is not None:
            self._thread.join(timeout=5)
        if self.gateway is not None:
            self.gateway.close()
        self.store.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def start_node(config: NodeConfig, rng=None) -> Node:
    """Start a node serving in a background thread."""
    return Node(config, rng).start()


def run_node(config: NodeConfig) -> None:
    """Serve in the foreground until interrupted."""
    node = Node(config)
    try:
        node.serve_forever()
    finally:
        node.store.close()


def start_cluster(n: int, mode: SplitMode, store_dir, host: str = "127.0.0.1", rng=None, fetch_timeout_ms: int = 2000,
                  ports: Optional[Sequence[int]] = None) -> list[Node]:
    """Launch ``n - 1`` share servers and a gateway on loopback; the gateway is first in the list.

    ``ports`` pins listen ports (gateway first); by default every node gets an
    ephemeral port.
    """
    ports = list(ports) if ports is not None else [0] * n
    servers = []
    try:
        for i in range(1, n):
            cfg = NodeConfig("shareserver", f"{host}:{ports[i]}", store_path=f"{store_dir}/node{i + 1}.jsonl")
            servers.append(start_node(cfg))
        gw_cfg = NodeConfig(
            "gateway",
            f"{host}:{ports[0]}",
            peers=[s.address for s in servers],
            mode=mode,
            store_path=f"{store_dir}/node1.jsonl",
            fetch_timeout_ms=fetch_timeout_ms,
        )
        gateway = start_node(gw_cfg, rng)
    except BaseException:
        for s in servers:
            s.close()
        raise
    return [gateway] + servers


def default_rng(seed=None):
    return system_rng() if seed is None else random.Random(seed)
