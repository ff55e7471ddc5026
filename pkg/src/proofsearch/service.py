"""Local HTTP service exposing the prover and the planner.

One backend session is initialized at startup and shared across requests;
backend failures restart the session instead of killing the process.  Prove
responses are filtered down to lines directly usable in a proof document.
"""

from __future__ import annotations

import json
import socket
import threading
import uuid
from dataclasses import dataclass, field, replace
from time import monotonic
from typing import Any, Optional

from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse

from .datalog import LogSink, RunLogger
from .errors import BindFailure
from .hints import HintLexicon, load_lexicon
from .planner import (
    Components,
    PlannerConfig,
    combine_hints,
    plan_auto,
    sample_outlines,
    score_outline,
)
from .premises import PremiseEntry, PremiseIndex, finalize
from .proposer import HttpProposer, OracleProposer, ScriptedProposer
from .rerank import RerankModel, load_model
from .script import find_holes
from .stepwise import SearchConfig, prove
from .verifier import LruCache, MockBackend, RunStats, SyntheticSpace

DEFAULT_BIND = "127.0.0.1:8642"
REQUEST_QUEUE_LIMIT = 4

APPROVED_PREFIXES = ("apply ", "by ")


def approved_lines(lines) -> list[str]:
    """Keep only lines usable verbatim inside a proof document."""
    out = []
    for line in lines:
        cmd = line.strip()
        if cmd.startswith(APPROVED_PREFIXES) or cmd == "done":
            out.append(cmd)
    return out


@dataclass
class ServiceConfig:
    bind: str = DEFAULT_BIND
    allow_remote: bool = False
    backend: str = "mock"
    space_path: Optional[str] = None
    proposer: str = "oracle"
    proposer_url: Optional[str] = None
    proposer_fixture: Optional[str] = None
    isabelle_address: Optional[str] = None
    isabelle_password: str = ""
    log_dir: Optional[str] = None
    model_path: Optional[str] = None
    lexicon_path: Optional[str] = None
    premises_path: Optional[str] = None
    search: SearchConfig = field(default_factory=SearchConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)


def build_backend(cfg: ServiceConfig):
    if cfg.backend == "mock":
        if not cfg.space_path:
            raise ValueError("mock backend needs --space")
        return MockBackend(SyntheticSpace.load(cfg.space_path))
    if cfg.backend == "isabelle":
        from .isabelle import IsabelleBackend

        return IsabelleBackend(
            address=cfg.isabelle_address or "127.0.0.1:0", password=cfg.isabelle_password
        )
    raise ValueError(f"unknown backend: {cfg.backend}")


def build_proposer(cfg: ServiceConfig, backend) -> Any:
    if cfg.proposer == "oracle":
        if not isinstance(backend, MockBackend):
            raise ValueError("oracle proposer needs the mock backend")
        return OracleProposer(backend.space)
    if cfg.proposer == "scripted":
        if not cfg.proposer_fixture:
            raise ValueError("scripted proposer needs --proposer-fixture")
        with open(cfg.proposer_fixture, encoding="utf-8") as fh:
            return ScriptedProposer(json.load(fh))
    if cfg.proposer == "http":
        if not cfg.proposer_url:
            raise ValueError("http proposer needs --proposer-url")
        return HttpProposer(cfg.proposer_url)
    raise ValueError(f"unknown proposer: {cfg.proposer}")


def load_premise_index(path) -> PremiseIndex:
    index = PremiseIndex()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            index.add(PremiseEntry(doc["id"], doc["text"], {"source": doc.get("source")}))
    return finalize(index)


@dataclass
class ServiceState:
    config: ServiceConfig
    backend: Any
    proposer: Any
    reranker: Optional[RerankModel] = None
    premise_index: Optional[PremiseIndex] = None
    lexicon: Optional[HintLexicon] = None
    sink: Optional[LogSink] = None
    global_cache: LruCache = field(default_factory=LruCache)


def build_state(cfg: ServiceConfig) -> ServiceState:
    backend = build_backend(cfg)
    state = ServiceState(cfg, backend, build_proposer(cfg, backend))
    if cfg.model_path:
        state.reranker = load_model(cfg.model_path)
    if cfg.lexicon_path:
        state.lexicon = load_lexicon(cfg.lexicon_path)
    if cfg.premises_path:
        state.premise_index = load_premise_index(cfg.premises_path)
    if cfg.log_dir:
        state.sink = LogSink(cfg.log_dir)
    return state


class _RequestGate:
    """One in-flight prove/plan; a bounded queue absorbs excess requests."""

    def __init__(self, queue_limit: int = REQUEST_QUEUE_LIMIT):
        self._busy = threading.Semaphore(1)
        self._admitted = 0  # in-flight plus queued
        self._lock = threading.Lock()
        self.queue_limit = queue_limit

    def __enter__(self):
        with self._lock:
            if self._admitted >= 1 + self.queue_limit:
                raise BufferError("request queue full")
            self._admitted += 1
        self._busy.acquire()
        return self

    def __exit__(self, *exc):
        self._busy.release()
        with self._lock:
            self._admitted -= 1


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse({"ok": False, "error": message}, status_code=400)


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="proofsearch", docs_url=None, redoc_url=None)
    app.state.service = state
    gate = _RequestGate()

    def logger_for(goal: str) -> Optional[RunLogger]:
        if state.sink is None:
            return None
        return RunLogger(state.sink, uuid.uuid4().hex, goal)

    @app.get("/health")
    def health():
        return {"ok": True, "backend": state.config.backend}

    @app.post("/prove")
    def prove_endpoint(payload: dict = Body(...)):
        goal = payload.get("goal")
        if not goal or not str(goal).strip():
            return _bad_request("missing goal")
        search = replace(
            state.config.search,
            budget_s=float(payload.get("budget", state.config.search.budget_s)),
            beam_width=int(payload.get("beam", state.config.search.beam_width)),
            max_depth=int(payload.get("depth", state.config.search.max_depth)),
        )
        t0 = monotonic()
        try:
            with gate:
                result = prove(
                    str(goal), search, state.backend, state.proposer, state.reranker,
                    state.premise_index, global_cache=state.global_cache,
                    logger=logger_for(str(goal)), stats=RunStats(),
                )
        except BufferError:
            return JSONResponse({"ok": False, "error": "busy"}, status_code=429)
        except Exception as exc:
            state.backend.restart()
            return JSONResponse(
                {"ok": False, "error": f"backend failure: {exc}"}, status_code=500
            )
        commands = approved_lines(result.script.lines) if result.solved else []
        return {"ok": result.solved, "commands": commands, "elapsed": monotonic() - t0}

    @app.post("/plan")
    def plan_endpoint(payload: dict = Body(...)):
        goal = payload.get("goal")
        if not goal or not str(goal).strip():
            return _bad_request("missing goal")
        mode = payload.get("mode", "auto")
        if mode not in ("outline", "auto"):
            return _bad_request(f"invalid mode: {mode}")
        planner_cfg = replace(
            state.config.planner,
            mode=mode,
            global_budget_s=float(payload.get("budget", state.config.planner.global_budget_s)),
            samples_per_temp=int(payload.get("samples", state.config.planner.samples_per_temp)),
            enforce_holes=bool(payload.get("enforce_holes", state.config.planner.enforce_holes)),
        )
        comps = Components(
            backend=state.backend,
            proposer=state.proposer,
            reranker=state.reranker,
            premise_index=state.premise_index,
            lexicon=state.lexicon,
            global_cache=state.global_cache,
            logger=logger_for(str(goal)),
            stats=RunStats(),
        )
        t0 = monotonic()
        try:
            with gate:
                if mode == "outline":
                    hints = combine_hints([], [], planner_cfg.k_hint)
                    outlines = sample_outlines(
                        str(goal), hints, planner_cfg, comps.for_outlines()
                    )
                    best = None
                    best_key = None
                    for outline in outlines:
                        score = score_outline(
                            outline, state.backend, hints,
                            (planner_cfg.alpha, planner_cfg.beta, planner_cfg.gamma),
                            planner_cfg.k_hint,
                        )
                        key = (-score, len(outline.lines))
                        if best_key is None or key < best_key:
                            best, best_key = outline, key
                    if best is None:
                        return {
                            "ok": False, "script": "", "holes_remaining": 0,
                            "stats": {"outlines": 0, "elapsed": monotonic() - t0},
                        }
                    return {
                        "ok": True,
                        "script": best.text,
                        "holes_remaining": len(find_holes(best)),
                        "stats": {"outlines": len(outlines), "elapsed": monotonic() - t0},
                    }
                result = plan_auto(str(goal), planner_cfg, comps)
        except BufferError:
            return JSONResponse({"ok": False, "error": "busy"}, status_code=429)
        except Exception as exc:
            state.backend.restart()
            return JSONResponse(
                {"ok": False, "error": f"backend failure: {exc}"}, status_code=500
            )
        return {
            "ok": result.solved,
            "script": result.script.text,
            "holes_remaining": len(find_holes(result.script)),
            "stats": {
                "outlines": result.outlines_sampled,
                "fills": result.fills_attempted,
                "repairs": result.repairs_attempted,
                "regenerations": result.regenerations,
                "elapsed": result.elapsed_s,
            },
        }

    return app


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    return host or "127.0.0.1", int(port)


def check_bindable(host: str, port: int, allow_remote: bool) -> None:
    """Raise BindFailure for non-loopback binds (unless allowed) or taken ports."""
    if not allow_remote and host not in ("127.0.0.1", "localhost", "::1"):
        raise BindFailure(f"refusing non-loopback bind {host!r} without --allow-remote")
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host if host != "localhost" else "127.0.0.1", port))
    except OSError as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
    finally:
        probe.close()


def serve(cfg: ServiceConfig) -> None:
    """Run the long-lived service; backend crashes never exit the process."""
    import uvicorn

    host, port = parse_bind(cfg.bind)
    check_bindable(host, port, cfg.allow_remote)
    app = create_app(build_state(cfg))
    uvicorn.run(app, host=host, port=port, log_level="warning")
