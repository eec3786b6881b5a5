"""Deterministic in-process cluster and the attack lab.

:class:`SimCluster` runs the same gateway and share-server code as the TCP
nodes, but delivers every frame synchronously in-process and keeps stores in
memory.  Every frame crossing a simulated link is recorded, so a run is
reproducible byte for byte from its seed.

The adversaries only use what their threat model grants them: recorded
frames (replay, eavesdropping), a fresh client connection (impersonation),
or read access to some nodes' stores (compromise).
"""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .core import (
    NONCE_SIZE,
    PROOF_SIZE,
    ShareError,
    SplitMode,
    compute_digest,
    compute_login_proof,
    recombine_shares,
    segment_lengths,
)
from .node import Gateway
from .protocol import (
    Challenge,
    ChallengeResponse,
    ClientStage,
    FrameError,
    Login,
    LoginOk,
    Message,
    Register,
    client_on_message,
    client_start_login,
    client_start_register,
    decode_one,
    encode_frame,
    shareserver_on_message,
)
from .store import ShareStore

CLIENT_TO_GATEWAY = "c2g"
GATEWAY_TO_CLIENT = "g2c"


class ConnectionClosed(ConnectionError):
    pass


@dataclass
class Transcript:
    """Raw frames of one client/gateway exchange, in order."""

    frames: list[tuple[str, bytes]] = field(default_factory=list)

    def messages(self) -> list[tuple[str, Message]]:
        return [(d, decode_one(f)) for d, f in self.frames]

    def find(self, cls, direction: Optional[str] = None):
        """First (message, raw frame) of type ``cls``; None if absent."""
        for d, f in self.frames:
            if direction is not None and d != direction:
                continue
            m = decode_one(f)
            if isinstance(m, cls):
                return m, f
        return None


@dataclass
class AttackReport:
    attack: str
    trials: int
    successes: int
    parameters: dict = field(default_factory=dict)
    notes: str = ""

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError("successes must lie in 0..trials")

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


class SimConnection:
    """A client connection to the simulated gateway."""

    def __init__(self, cluster: "SimCluster", name: str):
        self.cluster = cluster
        self.name = name
        self.handler = cluster.gateway.connection()
        self.transcript = Transcript()
        self.closed = False

    def send_raw(self, frame: bytes) -> bytes:
        """Deliver one frame and return the gateway's reply frame.

        A frame the gateway cannot decode kills the connection, as over TCP.
        """
        if self.closed:
            raise ConnectionClosed(f"{self.name}: connection closed")
        self.transcript.frames.append((CLIENT_TO_GATEWAY, frame))
        self.cluster.log.append((self.name, "gateway", frame))
        try:
            message = decode_one(frame)
        except FrameError:
            self.close()
            raise ConnectionClosed(f"{self.name}: gateway dropped malformed frame") from None
        reply = encode_frame(self.handler.handle(message))
        self.transcript.frames.append((GATEWAY_TO_CLIENT, reply))
        self.cluster.log.append(("gateway", self.name, reply))
        return reply

    def request(self, message: Message) -> Message:
        return decode_one(self.send_raw(encode_frame(message)))

    def close(self) -> None:
        self.closed = True


class SimCluster:
    """Gateway plus ``n - 1`` share servers wired together in memory.

    Node ``i`` (1-based) holds share index ``i``; node 1 is the gateway.
    ``seed`` fixes every random draw the servers make.  Clients created
    through :meth:`client_rng` get their own seeded streams.
    """

    def __init__(self, n: int = 2, mode: SplitMode = SplitMode.SEGMENT, seed=0):
        self.n = n
        self.mode = SplitMode(mode)
        self.seed = seed
        self.rng = random.Random(seed)
        self.stores = [ShareStore() for _ in range(n)]
        self.log: list[tuple[str, str, bytes]] = []
        self.gateway = Gateway(self.stores[0], [self._peer(i) for i in range(2, n + 1)], self.mode, rng=self.rng)
        self.passwords: dict[str, str] = {}
        self._clients = 0

    def _peer(self, index: int):
        store = self.stores[index - 1]
        name = f"node{index}"

        def call(message: Message) -> Message:
            frame = encode_frame(message)
            self.log.append(("gateway", name, frame))
            reply = encode_frame(shareserver_on_message(decode_one(frame), store))
            self.log.append((name, "gateway", reply))
            return decode_one(reply)

        return call

    def connect(self, name: str = "client") -> SimConnection:
        return SimConnection(self, name)

    def client_rng(self) -> random.Random:
        self._clients += 1
        return random.Random(f"{self.seed}/client/{self._clients}")

    def node_store(self, index: int) -> ShareStore:
        return self.stores[index - 1]

    def register(self, username: str, password: str, conn: Optional[SimConnection] = None) -> Transcript:
        conn = conn or self.connect()
        start = len(conn.transcript.frames)
        session, msg = client_start_register(username, password)
        session, _, event = client_on_message(session, conn.request(msg))
        if session.stage is ClientStage.IDLE:
            self.passwords[username] = password
        return Transcript(conn.transcript.frames[start:])

    def login(self, username: str, password: str, conn: Optional[SimConnection] = None, rng=None):
        """Run a full login; returns ``(client_session, gateway_session, transcript)``."""
        conn = conn or self.connect()
        start = len(conn.transcript.frames)
        session, msg = client_start_login(username, password, rng or self.client_rng())
        while msg is not None:
            session, msg, _ = client_on_message(session, conn.request(msg))
        return session, conn.handler.session, Transcript(conn.transcript.frames[start:])


# ---------------------------------------------------------------------------
# Adversaries


def replay_attack(cluster: SimCluster, transcript: Transcript, trials: int = 100) -> AttackReport:
    """Re-send a recorded Login and ChallengeResponse on fresh connections."""
    login = transcript.find(Login, CLIENT_TO_GATEWAY)
    response = transcript.find(ChallengeResponse, CLIENT_TO_GATEWAY)
    if login is None or response is None:
        raise ValueError("transcript holds no login exchange")
    successes = 0
    for t in range(trials):
        conn = cluster.connect(f"replayer{t}")
        conn.send_raw(login[1])
        reply = decode_one(conn.send_raw(response[1]))
        successes += isinstance(reply, LoginOk)
        conn.close()
    return AttackReport("replay", trials, successes, {"n": cluster.n, "mode": cluster.mode.value},
                        "recorded proof is bound to the old server nonce")


def impersonation_attack(cluster: SimCluster, username: str, trials: int, rng) -> AttackReport:
    """Log in with fresh random nonces and uniformly random proofs."""
    successes = 0
    for t in range(trials):
        conn = cluster.connect(f"impostor{t}")
        reply = conn.request(Login(username, rng.randbytes(NONCE_SIZE).hex()))
        if isinstance(reply, Challenge):
            reply = conn.request(ChallengeResponse(rng.randbytes(PROOF_SIZE).hex()))
        successes += isinstance(reply, LoginOk)
        conn.close()
    return AttackReport("impersonation", trials, successes, {"n": cluster.n, "mode": cluster.mode.value},
                        "random 32-byte proofs")


def _digests(dictionary: Sequence[str]) -> list[bytes]:
    return [compute_digest(w) for w in dictionary]


def shares_consistent_words(shares, dictionary: Sequence[str], digests: Optional[list[bytes]] = None):
    """Dictionary words whose digest agrees with the captured ``shares``.

    Returns ``None`` when the shares admit no deterministic test (an
    incomplete Xor set): every word is then equally plausible.
    """
    shares = [s for s in shares if s is not None]
    if digests is None:
        digests = _digests(dictionary)
    if not shares:
        return None
    total, mode = shares[0].total, shares[0].mode
    if len({s.index for s in shares}) == total:
        try:
            target = recombine_shares(shares)
        except ShareError:
            return []
        return [w for w, d in zip(dictionary, digests) if d == target]
    if mode is SplitMode.XOR:
        return None
    offsets = [0]
    for size in segment_lengths(total):
        offsets.append(offsets[-1] + size)
    checks = [(offsets[s.index - 1], offsets[s.index], s.payload) for s in shares]
    return [w for w, d in zip(dictionary, digests) if all(d[a:b] == p for a, b, p in checks)]


def compromise_attack(cluster: SimCluster, compromised: Iterable[int], dictionary: Sequence[str],
                      digests: Optional[list[bytes]] = None) -> AttackReport:
    """Read the stores of the ``compromised`` nodes and try to identify each user's password.

    One trial per registered user.  A trial succeeds when the captured shares
    single out exactly that user's true password within ``dictionary``.
    """
    compromised = sorted(set(compromised))
    if not compromised or compromised[0] < 1 or compromised[-1] > cluster.n:
        raise ValueError(f"compromised nodes must lie in 1..{cluster.n}")
    if digests is None:
        digests = _digests(dictionary)
    users = sorted(cluster.passwords)
    successes = 0
    testable = True
    for user in users:
        shares = [cluster.node_store(i).get(user) for i in compromised]
        candidates = shares_consistent_words(shares, dictionary, digests)
        if candidates is None:
            testable = False
            continue
        successes += candidates == [cluster.passwords[user]]
    note = "captured shares admit no dictionary test" if not testable else "dictionary test on captured digest bytes"
    params = {"n": cluster.n, "mode": cluster.mode.value, "compromised": len(compromised),
              "dictionary": len(dictionary)}
    return AttackReport("compromise", len(users), successes, params, note)


def eavesdrop_dictionary_attack(transcript: Transcript, dictionary: Sequence[str],
                                password: Optional[str] = None) -> AttackReport:
    """Offline dictionary attack on one observed exchange.

    A registration exchange exposes the unsalted digest directly.  A login
    exchange exposes both nonces and the login proof, which any candidate
    password can be checked against.  Success is a unique matching word (and
    the true one, when ``password`` is given).
    """
    register = transcript.find(Register, CLIENT_TO_GATEWAY)
    if register is not None:
        target = bytes.fromhex(register[0].digest_hex)
        candidates = [w for w in dictionary if compute_digest(w) == target]
        kind = "register"
    else:
        login = transcript.find(Login, CLIENT_TO_GATEWAY)
        challenge = transcript.find(Challenge, GATEWAY_TO_CLIENT)
        response = transcript.find(ChallengeResponse, CLIENT_TO_GATEWAY)
        if login is None or challenge is None or response is None:
            raise ValueError("transcript holds neither a registration nor a login exchange")
        nc = bytes.fromhex(login[0].client_nonce_hex)
        ns = bytes.fromhex(challenge[0].server_nonce_hex)
        proof = bytes.fromhex(response[0].proof_hex)
        candidates = [w for w in dictionary if compute_login_proof(ns, nc, compute_digest(w)) == proof]
        kind = "login"
    hit = len(candidates) == 1 and (password is None or candidates[0] == password)
    return AttackReport(f"eavesdrop-{kind}", 1, int(hit), {"dictionary": len(dictionary)},
                        f"{len(candidates)} matching word(s)")


# ---------------------------------------------------------------------------
# Comparison report

CONFIGURATIONS = (
    (1, SplitMode.SEGMENT, (1,)),
    (2, SplitMode.SEGMENT, (1, 2)),
    (2, SplitMode.XOR, (1, 2)),
    (3, SplitMode.XOR, (1, 2, 3)),
)

CSV_COLUMNS = ("attack", "n", "mode", "compromised", "trials", "successes")


@dataclass
class ReportRow:
    attack: str
    n: int
    mode: str
    compromised: int
    trials: int
    successes: int
    notes: str = ""

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


def comparison_rows(seed, dictionary: Sequence[str], replay_trials: int = 100,
                    impersonation_trials: int = 1000, username: str = "Alex") -> list[ReportRow]:
    words = list(dict.fromkeys(w for w in dictionary if w))
    if not words:
        raise ValueError("dictionary is empty")
    digests = _digests(words)
    password = random.Random(f"{seed}/victim").choice(words)
    rows = []
    for n, mode, counts in CONFIGURATIONS:
        cluster = SimCluster(n, mode, seed)
        reg = cluster.register(username, password)
        _, _, login = cluster.login(username, password)

        def row(report, compromised=0):
            rows.append(ReportRow(report.attack, n, mode.value, compromised, report.trials, report.successes,
                                  report.notes))

        row(replay_attack(cluster, login, replay_trials))
        row(impersonation_attack(cluster, username, impersonation_trials,
                                 random.Random(f"{seed}/impostor/{n}/{mode.value}")))
        for k in counts:
            row(compromise_attack(cluster, range(1, k + 1), words, digests), k)
        row(eavesdrop_dictionary_attack(login, words, password))
        row(eavesdrop_dictionary_attack(reg, words, password))
    return rows


def format_report(rows: Sequence[ReportRow], seed, dictionary_size: int) -> str:
    out = io.StringIO()
    out.write(f"Split-verifier attack lab  seed={seed}  dictionary={dictionary_size} words\n\n")
    header = f"{'attack':<18} {'n':>2} {'mode':<8} {'compromised':>11} {'trials':>7} {'successes':>9} {'rate':>8}  notes\n"
    out.write(header)
    out.write("-" * (len(header) + 20) + "\n")
    for r in rows:
        comp = f"{r.compromised}/{r.n}" if r.attack == "compromise" else "-"
        out.write(f"{r.attack:<18} {r.n:>2} {r.mode:<8} {comp:>11} {r.trials:>7} {r.successes:>9} "
                  f"{r.rate:>8.2%}  {r.notes}\n")

    def rate(attack, n, mode, k):
        for r in rows:
            if (r.attack, r.n, r.mode, r.compromised) == (attack, n, mode, k):
                return r.rate
        return None

    out.write("\nLeak of n-1 stores:\n")
    for n, mode, counts in CONFIGURATIONS:
        if n < 2:
            continue
        out.write(f"  n={n} {mode.value:<7} {n - 1} of {n} nodes read: password identified in "
                  f"{rate('compromise', n, mode.value, n - 1):.0%} of trials\n")
    baseline = rate("compromise", 1, "segment", 1)
    out.write(f"  single-server baseline: {baseline:.0%}\n")
    return out.getvalue()


def rows_to_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.attack, r.n, r.mode, r.compromised, r.trials, r.successes])
    return buf.getvalue()


def run_comparison_report(seed, dictionary: Sequence[str], **kwargs) -> str:
    rows = comparison_rows(seed, dictionary, **kwargs)
    return format_report(rows, seed, len(dict.fromkeys(w for w in dictionary if w)))
