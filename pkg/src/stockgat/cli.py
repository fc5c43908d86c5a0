"""Thin command-line client for the pipeline service.

Subcommands map one-to-one onto service stage endpoints. By default the
client mounts the FastAPI app in-process (no server needed); pass
--server URL to target a running instance instead. Exit codes: 0 success,
1 config or stage error, 2 usage error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx
import yaml
from pathlib import Path

from .errors import ConfigError
from .pipeline import STAGES


def _post(server: str | None, endpoint: str, payload: dict) -> httpx.Response:
    """POST to a remote service, or mount the app in-process when no server
    is given (the ASGI transport is async-only, hence the asyncio.run)."""
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(endpoint, json=payload)

    from .service import app

    async def call() -> httpx.Response:
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport, base_url="http://stockgat.local", timeout=None) as client:
            return await client.post(endpoint, json=payload)

    return asyncio.run(call())


def _parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def _parse_cluster(item: str) -> dict:
    # "A,B,C:0.9" -> {"members": ["A","B","C"], "correlation": 0.9}
    if ":" not in item:
        raise ConfigError(f"--cluster expects MEMBERS:CORR, got {item!r}")
    members, corr = item.rsplit(":", 1)
    try:
        value = float(corr)
    except ValueError as exc:
        raise ConfigError(f"--cluster correlation must be a number, got {corr!r}") from exc
    return {"members": [m.strip() for m in members.split(",") if m.strip()], "correlation": value}


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    for flag, key in (
        ("out", "out_dir"),
        ("seed", "seed"),
        ("epochs", "epochs"),
        ("tau", "tau"),
        ("lookback", "lookback"),
        ("n_stocks", "n_stocks"),
        ("n_days", "n_days"),
        ("k", "k"),
        ("backtest_k", "backtest_k"),
        ("ablation", "ablation"),
        ("data_source", "data_source"),
        ("csv_path", "csv_path"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "cluster", None):
        overrides["clusters"] = [_parse_cluster(c) for c in args.cluster]
    for item in getattr(args, "set", None) or []:
        key, value = _parse_override(item)
        overrides[key] = value
    return overrides


def _add_stage_parser(subparsers, name: str, help_text: str) -> None:
    p = subparsers.add_parser(name, help=help_text)
    p.add_argument("--config", help="flat YAML/JSON config file")
    p.add_argument("--server", help="remote service URL (default: in-process)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--lookback", type=int)
    p.add_argument("--n-stocks", dest="n_stocks", type=int)
    p.add_argument("--n-days", dest="n_days", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--backtest-k", dest="backtest_k", type=int)
    p.add_argument("--ablation", choices=["full", "noenc", "notemp", "nohete"])
    p.add_argument("--data-source", dest="data_source", choices=["synthetic", "planted", "csv"])
    p.add_argument("--csv-path", dest="csv_path")
    p.add_argument("--cluster", action="append", metavar="MEMBERS:CORR",
                   help="synthetic cluster, e.g. S000,S001,S002:0.9 (repeatable)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--json", action="store_true", help="print the raw JSON response")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stockgat", description=__doc__)
    subparsers = parser.add_subparsers(dest="command", required=True)
    _add_stage_parser(subparsers, "gen-data", "materialize prices.csv from CSV or a seeded synthetic market")
    _add_stage_parser(subparsers, "build-graphs", "build per-day correlation relation graphs")
    _add_stage_parser(subparsers, "train", "train the movement model on the chronological train split")
    _add_stage_parser(subparsers, "predict", "score the test days and export attention traces")
    _add_stage_parser(subparsers, "backtest", "replay the daily protocol over persisted scores")
    _add_stage_parser(subparsers, "report", "serialize metrics and return curves from the persisted ledger")
    _add_stage_parser(subparsers, "run-all", "run every stage in order")
    _add_stage_parser(subparsers, "validate-config", "resolve and validate a config document")

    serve = subparsers.add_parser("serve", help="run the pipeline service with uvicorn")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _run_stage_command(args: argparse.Namespace) -> int:
    try:
        overrides = _collect_overrides(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.config and not Path(args.config).exists():
        print(f"config error: config file not found: {args.config}", file=sys.stderr)
        return 1
    payload = {"config": overrides, "config_path": args.config}

    endpoint = "/config/validate" if args.command == "validate-config" else f"/stages/{args.command}"
    try:
        response = _post(args.server, endpoint, payload)
    except httpx.HTTPError as exc:
        print(f"service error: {exc}", file=sys.stderr)
        return 1
    body = response.json()
    if response.status_code != 200:
        detail = body.get("detail", body)
        print(f"error ({response.status_code}): {detail}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(body, indent=2, sort_keys=True))
        return 0
    if args.command == "validate-config":
        print(f"config ok, hash={body['config_hash']}")
        print(json.dumps(body["config"], indent=2, sort_keys=True))
        return 0
    print(f"[{body['stage']}] seed={body['seed']} config_hash={body['config_hash']}")
    for artifact in body["artifacts"]:
        print(f"  wrote {artifact}")
    if body.get("detail"):
        print(f"  {json.dumps(body['detail'], sort_keys=True, default=str)}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    return _run_stage_command(args)


if __name__ == "__main__":
    sys.exit(main())
