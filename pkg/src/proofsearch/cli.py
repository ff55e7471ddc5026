"""Command-line entry points.

Exit codes: 0 success, 1 unsolved goal or failed job, 2 usage error.
``prove``/``plan`` print the proof script on stdout and stats on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import uuid
from dataclasses import replace

from .datalog import (
    LogSink,
    RunLogger,
    build_premise_dataset,
    build_repair_dataset,
    build_reranker_dataset,
    build_trajectories,
)
from .errors import ProofSearchError
from .hints import mine_lexicon, save_lexicon
from .planner import Components, PlannerConfig, combine_hints, plan_auto, sample_outlines, score_outline
from .rerank import save_model, train_awr, train_fitted_q, train_logistic
from .script import find_holes
from .service import ServiceConfig, build_state, serve
from .stepwise import SearchConfig, prove
from .verifier import RunStats, generate_space


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("mock", "isabelle"), default="mock")
    p.add_argument("--space", help="synthetic-space fixture for the mock backend")
    p.add_argument("--isabelle-address", help="host:port of a running isabelle server")
    p.add_argument("--isabelle-password", default="")
    p.add_argument("--proposer", choices=("scripted", "oracle", "http"), default="oracle")
    p.add_argument("--proposer-url", help="endpoint for the http proposer")
    p.add_argument("--proposer-fixture", help="JSON fixture for the scripted proposer")
    p.add_argument("--log-dir", help="directory for runs.jsonl / attempts.jsonl")
    p.add_argument("--model", help="reranker model file")
    p.add_argument("--lexicon", help="hint lexicon JSON")
    p.add_argument("--premises", help="premise corpus JSONL")


def _service_config(args) -> ServiceConfig:
    return ServiceConfig(
        backend=args.backend,
        space_path=args.space,
        proposer=args.proposer,
        proposer_url=args.proposer_url,
        proposer_fixture=args.proposer_fixture,
        isabelle_address=args.isabelle_address,
        isabelle_password=args.isabelle_password,
        log_dir=args.log_dir,
        model_path=args.model,
        lexicon_path=args.lexicon,
        premises_path=args.premises,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proofsearch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prove", help="run the stepwise prover on one goal")
    p.add_argument("--goal", required=True)
    p.add_argument("--budget", type=float, default=120.0)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--minimise", action="store_true", help="shrink the proof after solving")
    _add_backend_flags(p)

    for name in ("plan", "outline"):
        p = sub.add_parser(name, help=f"run the planner ({name} mode)")
        p.add_argument("--goal", required=True)
        p.add_argument("--budget", type=float, default=120.0)
        p.add_argument("--samples", type=int, default=3)
        _add_backend_flags(p)

    p = sub.add_parser("serve", help="start the local HTTP service")
    p.add_argument("--bind", default="127.0.0.1:8642")
    p.add_argument("--allow-remote", action="store_true")
    _add_backend_flags(p)

    p = sub.add_parser("gen-space", help="generate a synthetic proof space")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--branching", type=int, required=True)
    p.add_argument("--solutions", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("mine-lexicon", help="mine a hint lexicon from a proof corpus")
    p.add_argument("--corpus", required=True, help="JSONL of {goal, lemmas: [...]}")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("build-dataset", help="turn attempt logs into training data")
    p.add_argument("--attempts", required=True, help="attempts.jsonl path")
    p.add_argument(
        "--kind",
        choices=("binary", "q", "awr", "trajectories", "premises", "repair"),
        default="binary",
    )
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train-reranker", help="train a reranker from attempt logs")
    p.add_argument("--attempts", required=True)
    p.add_argument("--mode", choices=("logistic", "awr", "q"), default="logistic")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("-o", "--output", required=True)

    return parser


def _components(args, goal: str) -> tuple[Components, "LogSink | None"]:
    state = build_state(_service_config(args))
    logger = None
    if state.sink is not None:
        logger = RunLogger(state.sink, uuid.uuid4().hex, goal)
    comps = Components(
        backend=state.backend,
        proposer=state.proposer,
        reranker=state.reranker,
        premise_index=state.premise_index,
        lexicon=state.lexicon,
        global_cache=state.global_cache,
        logger=logger,
        stats=RunStats(),
    )
    return comps, state.sink


def _cmd_prove(args) -> int:
    comps, sink = _components(args, args.goal)
    cfg = SearchConfig(beam_width=args.beam, max_depth=args.depth, budget_s=args.budget)
    try:
        result = prove(
            args.goal, cfg, comps.backend, comps.proposer, comps.reranker,
            comps.premise_index, global_cache=comps.global_cache,
            logger=comps.logger, stats=comps.stats,
        )
        if result.solved and args.minimise:
            from .stepwise import minimise

            result = replace(result, script=minimise(result.script, comps.backend))
    finally:
        if sink is not None:
            sink.close()
    print(result.script.text)
    print(
        f"solved={result.solved} depth={result.depth_reached} "
        f"expansions={result.expansions} elapsed={result.elapsed_s:.3f}s",
        file=sys.stderr,
    )
    return 0 if result.solved else 1


def _cmd_plan(args, mode: str) -> int:
    comps, sink = _components(args, args.goal)
    cfg = PlannerConfig(mode=mode, samples_per_temp=args.samples, global_budget_s=args.budget)
    try:
        if mode == "outline":
            hints = combine_hints([], [], cfg.k_hint)
            outlines = sample_outlines(args.goal, hints, cfg, comps.for_outlines())
            if not outlines:
                print("", end="")
                print("no outline produced", file=sys.stderr)
                return 1
            best = max(
                outlines,
                key=lambda o: (
                    score_outline(o, comps.backend, hints, (cfg.alpha, cfg.beta, cfg.gamma), cfg.k_hint),
                    -len(o.lines),
                ),
            )
            print(best.text)
            print(f"outlines={len(outlines)} holes={len(find_holes(best))}", file=sys.stderr)
            return 0
        result = plan_auto(args.goal, cfg, comps)
    finally:
        if sink is not None:
            sink.close()
    print(result.script.text)
    print(
        f"solved={result.solved} outlines={result.outlines_sampled} "
        f"fills={result.fills_attempted} repairs={result.repairs_attempted} "
        f"regenerations={result.regenerations} elapsed={result.elapsed_s:.3f}s",
        file=sys.stderr,
    )
    return 0 if result.solved else 1


def _cmd_gen_space(args) -> int:
    space = generate_space(args.depth, args.branching, args.solutions, args.seed)
    space.dump(args.output)
    print(f"wrote {args.output}: {len(space.nodes)} nodes, {len(space.edges)} edges", file=sys.stderr)
    return 0


def _cmd_mine_lexicon(args) -> int:
    corpus = []
    with open(args.corpus, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                corpus.append((doc["goal"], list(doc.get("lemmas", ()))))
    save_lexicon(mine_lexicon(corpus), args.output)
    print(f"mined lexicon from {len(corpus)} proofs -> {args.output}", file=sys.stderr)
    return 0


def _cmd_build_dataset(args) -> int:
    if args.kind in ("binary", "q", "awr"):
        data, skipped = build_reranker_dataset(args.attempts, args.kind)
        with open(args.output, "w", encoding="utf-8") as fh:
            if args.kind == "binary":
                for x, y in data:
                    fh.write(json.dumps({"x": x, "y": y}) + "\n")
            else:
                for t in data:
                    fh.write(
                        json.dumps(
                            {
                                "x": [float(v) for v in t.x],
                                "y": t.y,
                                "reward": t.reward,
                                "next_min_subgoals": t.next_min_subgoals,
                                "terminal": t.terminal,
                                "next_x": [float(v) for v in t.next_x] if t.next_x is not None else None,
                            }
                        )
                        + "\n"
                    )
        count = len(data)
    elif args.kind == "trajectories":
        episodes, skipped = build_trajectories(args.attempts)
        with open(args.output, "w", encoding="utf-8") as fh:
            for ep in episodes:
                fh.write(
                    json.dumps(
                        [
                            {"x": [float(v) for v in t.x], "y": t.y, "reward": t.reward, "terminal": t.terminal}
                            for t in ep
                        ]
                    )
                    + "\n"
                )
        count = len(episodes)
    elif args.kind == "premises":
        pairs, skipped = build_premise_dataset(args.attempts)
        with open(args.output, "w", encoding="utf-8") as fh:
            for goal, pos, negs in pairs:
                fh.write(json.dumps({"goal": goal, "pos": pos, "negs": negs}) + "\n")
        count = len(pairs)
    else:
        records, skipped = build_repair_dataset(args.attempts)
        with open(args.output, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
        count = len(records)
    print(f"wrote {count} records to {args.output} ({skipped} lines skipped)", file=sys.stderr)
    return 0


def _cmd_train_reranker(args) -> int:
    if args.mode == "logistic":
        examples, skipped = build_reranker_dataset(args.attempts, "binary")
        if not examples:
            print("no training examples in log", file=sys.stderr)
            return 1
        model = train_logistic(examples, args.epochs, args.lr, args.l2)
    else:
        transitions, skipped = build_reranker_dataset(args.attempts, args.mode)
        if not transitions:
            print("no transitions in log", file=sys.stderr)
            return 1
        if args.mode == "awr":
            model = train_awr(transitions, beta=args.beta, epochs=args.epochs, learning_rate=args.lr, l2=args.l2)
        else:
            model = train_fitted_q(transitions, gamma=args.gamma)
    save_model(model, args.output)
    print(
        f"trained {model.kind} model -> {args.output} ({skipped} lines skipped)",
        file=sys.stderr,
    )
    return 0


def cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        if args.command == "prove":
            return _cmd_prove(args)
        if args.command in ("plan", "outline"):
            return _cmd_plan(args, "auto" if args.command == "plan" else "outline")
        if args.command == "serve":
            cfg = _service_config(args)
            cfg.bind = args.bind
            cfg.allow_remote = args.allow_remote
            serve(cfg)
            return 0
        if args.command == "gen-space":
            return _cmd_gen_space(args)
        if args.command == "mine-lexicon":
            return _cmd_mine_lexicon(args)
        if args.command == "build-dataset":
            return _cmd_build_dataset(args)
        if args.command == "train-reranker":
            return _cmd_train_reranker(args)
    except (ProofSearchError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def main() -> None:
    sys.exit(cli())
