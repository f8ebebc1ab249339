"""Command-line client; runs the service in-process unless ``--server`` is given.

Exit status: 0 on success, 1 when a consistency suite fails, 2 on bad
arguments or a refused request.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Any

import httpx

EXIT_OK, EXIT_SUITE_FAILED, EXIT_ERROR = 0, 1, 2
SUITE_NAMES = ("bop", "op", "native", "faults", "malicious", "bounds", "memory", "rounds")
DEFAULT_SUITES = ("bop", "op", "native")


class RequestFailed(Exception):
    def __init__(self, status: int, detail: Any):
        super().__init__(f"HTTP {status}: {detail}")
        self.status = status
        self.detail = detail


class Client:
    """POST/GET JSON against a remote server or an in-process app."""

    def __init__(self, server: str | None = None, timeout: float = 3600.0):
        if server:
            self._http = httpx.Client(base_url=server, timeout=timeout)
        else:
            with warnings.catch_warnings():
                # newer starlette nudges towards a renamed httpx package
                warnings.filterwarnings("ignore", message=".*starlette.testclient")
                from fastapi.testclient import TestClient

            from .service import create_app
            self._http = TestClient(create_app())

    def call(self, method: str, path: str, body: dict | None = None) -> Any:
        resp = self._http.request(method, path, json=body)
        if resp.status_code >= 400:
            try:
                detail = resp.json()
            except ValueError:
                detail = resp.text
            raise RequestFailed(resp.status_code, detail)
        return resp.json()

    def post(self, path: str, body: dict) -> Any:
        return self.call("POST", path, body)

    def get(self, path: str) -> Any:
        return self.call("GET", path)


def _model_ref(text: str) -> str | dict:
    """Corpus name, or the path of a model document."""
    path = Path(text)
    if path.suffix == ".json" or path.is_file():
        return json.loads(path.read_text())
    return text


def _inputs(args) -> dict | None:
    return json.loads(Path(args.inputs).read_text()) if args.inputs else None


def _emit(args, payload: Any, text: str | None = None) -> None:
    body = text if text is not None else json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(body)
    else:
        sys.stdout.write(body)


def _threads(text: str) -> int | str:
    return text if text == "max" else int(text)


# --- verbs -------------------------------------------------------------------

def cmd_lower(client: Client, args) -> int:
    res = client.post("/lower", {"model": _model_ref(args.model), "node": args.node, "format": args.format})
    _emit(args, res, res["text"] if args.format == "text" else None)
    return EXIT_OK


def cmd_eval(client: Client, args) -> int:
    if args.trace == "bop" and not args.node:
        raise SystemExit("--trace bop needs --node")
    body = {"model": _model_ref(args.model), "inputs": _inputs(args), "seed": args.seed, "k": args.k,
            "trace": args.trace or "none", "node": args.node, "threads": _threads(args.threads)}
    _emit(args, client.post("/eval", body))
    return EXIT_OK


def cmd_commit(client: Client, args) -> int:
    body = {"model": _model_ref(args.model), "inputs": _inputs(args), "seed": args.seed, "k": args.k}
    _emit(args, client.post("/commit", body))
    return EXIT_OK


def cmd_dispute(client: Client, args) -> int:
    faults = [f for f in (args.fault or []) if f != "none"]
    body = {"model": _model_ref(args.model), "inputs": _inputs(args), "seed": args.seed, "k": args.k,
            "quorum": args.quorum, "faults": faults, "t_v": args.t_v, "t_op": args.t_op,
            "t_bop": args.t_bop, "stall_verifiers": args.stall_verifiers,
            "late_challenge": args.late_challenge, "stall_submitter": args.stall_submitter,
            "transcript": not args.no_transcript}
    res = client.post("/dispute", body)
    _emit(args, res)
    if args.out:
        v = res["verdict"]
        where = f" op={v['op']} ({v['node_id']}) bop={v['bop']}" if v["op"] else ""
        print(f"{v['outcome']}: {v['cause']} at tick {v['tick']}{where}", file=sys.stderr)
    return EXIT_OK


def cmd_profile(client: Client, args) -> int:
    body = {"model": _model_ref(args.model) if args.model else None, "per_op": not args.summary}
    _emit(args, client.post("/profile", body))
    return EXIT_OK


def cmd_sweep_k(client: Client, args) -> int:
    ks = [int(x) for x in args.ks.split(",")]
    _emit(args, client.post("/sweep-k", {"model": args.model, "ks": ks, "seed": args.seed}))
    return EXIT_OK


def cmd_corners(client: Client, args) -> int:
    res = client.post("/corners", {"kind": args.kind})
    _emit(args, res, res["text"])
    return EXIT_OK


def cmd_consistency(client: Client, args) -> int:
    suites = list(SUITE_NAMES) if args.suite == ["all"] else (args.suite or list(DEFAULT_SUITES))
    res = client.post("/consistency", {"suites": suites, "quick": args.quick, "seed": args.seed})
    _emit(args, res)
    for r in res["results"]:
        print(f"{r['suite']:>10}: {'pass' if r['ok'] else 'FAIL'} ({r['seconds']:.1f}s)", file=sys.stderr)
    return EXIT_OK if res["ok"] else EXIT_SUITE_FAILED


def cmd_serve(client: Client | None, args) -> int:
    import uvicorn

    uvicorn.run("fraudproof.service:app", host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def _model_opts(p: argparse.ArgumentParser, inputs: bool = True) -> None:
    p.add_argument("--model", required=True, help="corpus model name or model JSON file")
    if inputs:
        p.add_argument("--inputs", help="input JSON file; seeded inputs when omitted")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--k", type=int, default=32, help="tree arity")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fraudproof", description=__doc__.splitlines()[0])
    parser.add_argument("--server", default=os.environ.get("FRAUDPROOF_SERVER"),
                        help="base URL of a running service")
    sub = parser.add_subparsers(dest="verb", required=True)

    def verb(name: str, fn, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        if name != "serve":
            p.add_argument("--out", help="write the result here instead of stdout")
        return p

    p = verb("lower", cmd_lower, "lower one node to its basic-operation circuit")
    _model_opts(p, inputs=False)
    p.add_argument("--node", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")

    p = verb("eval", cmd_eval, "evaluate a model")
    _model_opts(p)
    p.add_argument("--trace", choices=("op", "bop"))
    p.add_argument("--node")
    p.add_argument("--threads", default="1", help="an integer or 'max'")

    p = verb("commit", cmd_commit, "commitment roots of a model and inputs")
    _model_opts(p)

    p = verb("dispute", cmd_dispute, "simulate a claim and its disputes")
    _model_opts(p)
    p.add_argument("--quorum", type=int, default=2, help="quorum size m, submitter included")
    p.add_argument("--fault", action="append", help="fault spec, repeatable (e.g. bop:1:0, omit:commit_p1)")
    p.add_argument("--t-v", type=int, dest="t_v")
    p.add_argument("--t-op", type=int, dest="t_op", default=10)
    p.add_argument("--t-bop", type=int, dest="t_bop", default=10)
    p.add_argument("--stall-verifiers", action="store_true")
    p.add_argument("--late-challenge", action="store_true")
    p.add_argument("--stall-submitter", action="store_true")
    p.add_argument("--no-transcript", action="store_true")

    p = verb("profile", cmd_profile, "basic-operation counts, before and after deduplication")
    p.add_argument("--model", help="one model; the whole corpus when omitted")
    p.add_argument("--summary", action="store_true", help="omit per-op rows")

    p = verb("sweep-k", cmd_sweep_k, "dispute rounds and tree build time per arity")
    p.add_argument("--model", default="chain-1024")
    p.add_argument("--ks", default="2,4,8,16,32,64")
    p.add_argument("--seed", type=int, default=0)

    p = verb("corners", cmd_corners, "export the corner-case suite of one basic operation")
    p.add_argument("--kind", required=True)

    p = verb("consistency", cmd_consistency, "run evaluator and protocol suites")
    p.add_argument("--suite", action="append", choices=SUITE_NAMES + ("all",),
                   help=f"repeatable; default {' '.join(DEFAULT_SUITES)}")
    p.add_argument("--quick", action="store_true", help="reduced case counts")
    p.add_argument("--seed", type=int, default=0)

    p = verb("serve", cmd_serve, "run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "consistency" and args.suite and "all" in args.suite:
        args.suite = ["all"]
    try:
        client = None if args.verb == "serve" else Client(args.server)
        return args.fn(client, args)
    except BrokenPipeError:
        return EXIT_OK
    except RequestFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
