"""Live Isabelle server adapter behind the VerifierBackend interface.

Speaks the TCP protocol of ``isabelle server``: password handshake, then
newline-delimited commands whose arguments and replies are JSON.  Theories
are materialized under a scratch directory and checked with
``use_theories``.  This adapter is interface-complete but exercised only
against a live server, never in the test matrix.
"""

from __future__ import annotations

import json
import re
import socket
import tempfile
import time
from pathlib import Path
from typing import Optional

from .errors import BackendDown, VerifierTimeout
from .verifier import CounterexampleReport, TheoryOutcome

_LINE_RE = re.compile(r"line\s+(\d+)")


class IsabelleBackend:
    """VerifierBackend over a running ``isabelle server`` instance."""

    def __init__(
        self,
        address: str = "127.0.0.1:0",
        password: str = "",
        session: str = "HOL",
        startup_timeout_s: float = 120.0,
    ):
        host, _, port = address.partition(":")
        self.host = host or "127.0.0.1"
        self.port = int(port or 0)
        self.password = password
        self.session = session
        self.startup_timeout_s = startup_timeout_s
        self.scratch = Path(tempfile.mkdtemp(prefix="proofsearch_thy_"))
        self._sock: Optional[socket.socket] = None
        self._buf = b""
        self._session_id: Optional[str] = None
        self._serial = 0
        self.serialize_requests = True  # one theory check at a time per session

    # -- wire helpers -------------------------------------------------------

    def _connect(self) -> None:
        self._sock = socket.create_connection((self.host, self.port), timeout=30.0)
        self._buf = b""
        self._send_raw(self.password)
        greeting = self._read_message(30.0)
        if not greeting.startswith("OK"):
            raise BackendDown(f"server refused password: {greeting!r}")
        self._session_id = None

    def _send_raw(self, line: str) -> None:
        assert self._sock is not None
        self._sock.sendall(line.encode("utf-8") + b"\n")

    def _read_message(self, timeout_s: float) -> str:
        assert self._sock is not None
        self._sock.settimeout(timeout_s)
        deadline = time.monotonic() + timeout_s
        while b"\n" not in self._buf:
            if time.monotonic() > deadline:
                raise VerifierTimeout("isabelle server read timed out")
            chunk = self._sock.recv(65536)
            if not chunk:
                raise BackendDown("isabelle server closed the connection")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        text = line.decode("utf-8", "replace").strip()
        # Long replies are length-prefixed: "<n>" then n bytes of payload.
        if text.isdigit():
            need = int(text)
            while len(self._buf) < need:
                chunk = self._sock.recv(65536)
                if not chunk:
                    raise BackendDown("isabelle server closed mid-message")
                self._buf += chunk
            payload, self._buf = self._buf[:need], self._buf[need:]
            return payload.decode("utf-8", "replace").strip()
        return text

    def _command(self, name: str, args: dict, timeout_s: float) -> dict:
        if self._sock is None:
            self._connect()
        self._send_raw(f"{name} {json.dumps(args)}")
        deadline = time.monotonic() + timeout_s
        task_id = None
        while True:
            remaining = max(0.5, deadline - time.monotonic())
            msg = self._read_message(remaining)
            kind, _, body = msg.partition(" ")
            payload = json.loads(body) if body.strip().startswith("{") else {}
            if kind == "OK" and task_id is None and "task" in payload:
                task_id = payload["task"]
                continue
            if kind == "OK":
                return payload
            if kind == "FINISHED":
                return payload
            if kind == "FAILED" or kind == "ERROR":
                raise BackendDown(f"isabelle command {name} failed: {payload or msg}")
            if kind == "NOTE":
                continue
            if time.monotonic() > deadline:
                raise VerifierTimeout(f"isabelle command {name} timed out")

    def _ensure_session(self, timeout_s: float) -> str:
        if self._session_id is None:
            reply = self._command(
                "session_start", {"session": self.session}, self.startup_timeout_s
            )
            self._session_id = reply.get("session_id")
            if not self._session_id:
                raise BackendDown(f"no session id in reply: {reply}")
        return self._session_id

    # -- VerifierBackend ----------------------------------------------------

    def check_theory(self, theory_text: str, timeout_s: float | None = None) -> TheoryOutcome:
        timeout = timeout_s or 60.0
        session_id = self._ensure_session(timeout)
        self._serial += 1
        name = f"Scratch{self._serial}"
        text = theory_text.replace("theory Scratch", f"theory {name}", 1)
        # print_state is our internal marker; the server emits state output
        # for the enclosing command, so strip it for the real prover.
        text = "\n".join(ln for ln in text.split("\n") if ln.strip() != "print_state")
        (self.scratch / f"{name}.thy").write_text(text, encoding="utf-8")
        t0 = time.perf_counter()
        try:
            reply = self._command(
                "use_theories",
                {
                    "session_id": session_id,
                    "theories": [name],
                    "master_dir": str(self.scratch),
                    "check_limit": 0,
                },
                timeout,
            )
        except VerifierTimeout:
            raise
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        ok = bool(reply.get("ok", False))
        errors: list[tuple[int, str]] = []
        output_lines: list[str] = []
        for node in reply.get("nodes", ()):
            for msg in node.get("messages", ()):
                body = msg.get("message", "")
                if msg.get("kind") == "error":
                    m = _LINE_RE.search(body)
                    errors.append((int(m.group(1)) - 1 if m else -1, body))
                elif msg.get("kind") in ("writeln", "state"):
                    output_lines.append(body)
        for err in reply.get("errors", ()):
            body = err.get("message", str(err))
            m = _LINE_RE.search(body)
            errors.append((int(m.group(1)) - 1 if m else -1, body))
        return TheoryOutcome(ok and not errors, "\n".join(output_lines), tuple(errors), elapsed_ms)

    def restart(self) -> None:
        try:
            if self._sock is not None and self._session_id is not None:
                self._command("session_stop", {"session_id": self._session_id}, 30.0)
        except Exception:
            pass
        finally:
            if self._sock is not None:
                try:
                    self._sock.close()
                except OSError:
                    pass
            self._sock = None
            self._session_id = None

    def refute(
        self, goal_or_state: str, timeout_s: float | None = None
    ) -> Optional[CounterexampleReport]:
        # Counterexample search is not wired through the server protocol here.
        return None
