"""Command-line entry points: interactive client, node server, local demo cluster, attack lab."""

from __future__ import annotations

import argparse
import getpass
import logging
import random
import sys
import tempfile
from pathlib import Path

from .core import SplitMode, system_rng
from .harness import comparison_rows, format_report, rows_to_csv
from .node import FrameConnection, NodeConfig, NodeStartupError, default_rng, run_node, start_cluster
from .protocol import (
    UNAVAILABLE,
    USERNAME_EXISTS,
    FrameError,
    LoginFailed,
    LoginSucceeded,
    Logout,
    Registered,
    RegisterFailed,
    ServerAuthFailed,
    client_on_message,
    client_start_login,
    client_start_register,
)

BANNER = "Welcome to the system. Kindly register to login."
OPTIONS_LOGGED_OUT = "Options: register/login/logout"
OPTIONS_LOGGED_IN = "Options: logout"
INVALID_CREDENTIALS = "Invalid username or password"
SERVICE_UNAVAILABLE = "Service unavailable"


class Repl:
    """The Figure-1 style dialogue over one gateway connection.

    ``conn`` needs a ``request(message) -> message`` method.  With ``echo``
    set, typed input is written back to ``stdout`` so that a piped session
    reads like a terminal transcript.
    """

    def __init__(self, stdin, stdout, conn, rng=None, echo=False, mask=False):
        self.stdin = stdin
        self.stdout = stdout
        self.conn = conn
        self.rng = rng if rng is not None else system_rng()
        self.echo = echo
        self.mask = mask
        self.user = None

    def say(self, line: str) -> None:
        self.stdout.write(line + "\n")
        self.stdout.flush()

    def ask(self, prompt: str, secret: bool = False):
        if secret and self.mask:
            try:
                return getpass.getpass(prompt, stream=self.stdout)
            except EOFError:
                return None
        self.stdout.write(prompt)
        self.stdout.flush()
        line = self.stdin.readline()
        if not line:
            self.stdout.write("\n")
            return None
        line = line.rstrip("\r\n")
        if self.echo:
            self.stdout.write(line + "\n")
        return line

    def run(self) -> int:
        self.say(BANNER)
        self.say(OPTIONS_LOGGED_OUT)
        try:
            while True:
                line = self.ask("> " if self.user is None else f"{self.user} > ")
                if line is None:
                    return 0
                command = line.strip()
                if self.user is None:
                    if command == "register":
                        if not self.register():
                            return 0
                    elif command == "login":
                        if not self.login():
                            return 0
                    else:
                        self.say(OPTIONS_LOGGED_OUT)
                elif command == "logout":
                    self.conn.request(Logout())
                    self.user = None
                    self.say("Logging out...")
                else:
                    self.say(OPTIONS_LOGGED_IN)
        except (OSError, FrameError):
            self.say(SERVICE_UNAVAILABLE)
            return 1

    def register(self) -> bool:
        username = self.ask("New username: ")
        password = None if username is None else self.ask("New password: ", secret=True)
        if password is None:
            return False
        self.say("Creating account...")
        try:
            session, message = client_start_register(username, password)
        except ValueError:
            self.say(INVALID_CREDENTIALS)
            return True
        _, _, event = client_on_message(session, self.conn.request(message))
        if isinstance(event, Registered):
            self.say("Account has been created")
        elif isinstance(event, RegisterFailed) and event.reason == USERNAME_EXISTS:
            self.say("Username already exists")
        else:
            self.say("Registration failed")
        return True

    def login(self) -> bool:
        username = self.ask("Username: ")
        password = None if username is None else self.ask("Password: ", secret=True)
        if password is None:
            return False
        try:
            session, message = client_start_login(username, password, self.rng)
        except ValueError:
            self.say(INVALID_CREDENTIALS)
            return True
        event = None
        while message is not None:
            session, message, event = client_on_message(session, self.conn.request(message))
        if isinstance(event, LoginSucceeded):
            self.user = username
            self.say("Login successful")
            self.say(f"Welcome to your account {username}")
            self.say(OPTIONS_LOGGED_IN)
        elif isinstance(event, LoginFailed) and event.reason == UNAVAILABLE:
            self.say(SERVICE_UNAVAILABLE)
        elif isinstance(event, ServerAuthFailed):
            self.say("Server authentication failed")
        else:
            self.say(INVALID_CREDENTIALS)
        return True


def repl(stdin, stdout, conn, rng=None, echo=False, mask=False) -> int:
    return Repl(stdin, stdout, conn, rng, echo, mask).run()


def demo(n: int, mode, seed=None, stdin=None, stdout=None, echo=None, mask=False) -> int:
    """Start a loopback cluster with temporary stores and attach a REPL to it."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    if echo is None:
        echo = not stdin.isatty()
    with tempfile.TemporaryDirectory(prefix="splitauth-demo-") as tmp:
        try:
            nodes = start_cluster(n, SplitMode(mode), tmp, rng=default_rng(seed))
        except (NodeStartupError, OSError) as exc:
            print(f"cannot start demo cluster: {exc}", file=sys.stderr)
            return 2
        try:
            with FrameConnection(nodes[0].address) as conn:
                client_rng = system_rng() if seed is None else random.Random(f"{seed}/client")
                return repl(stdin, stdout, conn, client_rng, echo=echo, mask=mask)
        finally:
            for node in nodes:
                node.close()


def _cmd_client(args) -> int:
    try:
        conn = FrameConnection(args.gateway, timeout=args.timeout_ms / 1000)
    except (OSError, ValueError):
        print(SERVICE_UNAVAILABLE)
        return 1
    echo = args.echo if args.echo is not None else not sys.stdin.isatty()
    with conn:
        return repl(sys.stdin, sys.stdout, conn, echo=echo, mask=args.mask)


def _cmd_serve(args) -> int:
    try:
        config = NodeConfig(args.role, args.listen, peers=args.peer, mode=args.mode, store_path=args.store,
                            fetch_timeout_ms=args.timeout_ms)
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        run_node(config)
    except NodeStartupError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_demo(args) -> int:
    echo = args.echo if args.echo is not None else None
    return demo(args.n, args.mode, args.seed, echo=echo, mask=args.mask)


def _cmd_attacklab(args) -> int:
    try:
        words = Path(args.dict).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        print(f"cannot read dictionary: {exc}", file=sys.stderr)
        return 2
    words = [w.strip() for w in words if w.strip()]
    if not words:
        print("dictionary is empty", file=sys.stderr)
        return 2
    rows = comparison_rows(args.seed, words, replay_trials=args.replay_trials,
                           impersonation_trials=args.impersonation_trials)
    sys.stdout.write(format_report(rows, args.seed, len(dict.fromkeys(words))))
    if args.csv:
        Path(args.csv).write_text(rows_to_csv(rows), encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitauth", description="Split-verifier password authentication")
    parser.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def echo_flags(p):
        p.add_argument("--echo", dest="echo", action="store_true", default=None,
                       help="echo typed input (default when stdin is not a terminal)")
        p.add_argument("--no-echo", dest="echo", action="store_false")
        p.add_argument("--mask", action="store_true", help="read passwords without echo")

    p = sub.add_parser("client", help="interactive client")
    p.add_argument("--gateway", required=True, metavar="HOST:PORT")
    p.add_argument("--timeout-ms", type=int, default=10000)
    echo_flags(p)
    p.set_defaults(func=_cmd_client)

    p = sub.add_parser("serve", help="run a gateway or share server")
    p.add_argument("--role", choices=("gateway", "shareserver"), required=True)
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--peer", action="append", default=[], metavar="HOST:PORT")
    p.add_argument("--mode", choices=("segment", "xor"), default="segment")
    p.add_argument("--store", required=True, metavar="PATH")
    p.add_argument("--timeout-ms", type=int, default=2000)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("demo", help="local cluster plus interactive client")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--mode", choices=("segment", "xor"), default="segment")
    p.add_argument("--seed", type=int, default=None)
    echo_flags(p)
    p.set_defaults(func=_cmd_demo)

    p = sub.add_parser("attacklab", help="run the attack comparison report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dict", required=True, metavar="PATH")
    p.add_argument("--csv", metavar="PATH")
    p.add_argument("--replay-trials", type=int, default=100)
    p.add_argument("--impersonation-trials", type=int, default=1000)
    p.set_defaults(func=_cmd_attacklab)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
