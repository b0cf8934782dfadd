"""Command-line entry point.

Verbs map one-to-one onto pipeline operations and share its artifact cache,
so `quality rank` then `caption generate` continues where the first left off.
Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, InsufficientEvidence, MinelensError, SyncFailed
from .pipeline import Pipeline, PipelineConfig
from .sites import SiteRecord


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minelens")
    parser.add_argument("--root", default="data", help="data root directory")
    parser.add_argument("--config", default=None, help="path to a config JSON file")
    sub = parser.add_subparsers(dest="command", required=True)

    sites = sub.add_parser("sites").add_subparsers(dest="action", required=True)
    sites.add_parser("list")
    add = sites.add_parser("add")
    add.add_argument("--id", required=True)
    add.add_argument("--name", required=True)
    add.add_argument("--country", required=True)
    add.add_argument("--lat", type=float, required=True)
    add.add_argument("--lon", type=float, required=True)
    add.add_argument("--commodity", default="", help="comma-separated list")

    scenes = sub.add_parser("scenes").add_subparsers(dest="action", required=True)
    fetch = scenes.add_parser("fetch")
    fetch.add_argument("--site", required=True)

    quality = sub.add_parser("quality").add_subparsers(dest="action", required=True)
    rank = quality.add_parser("rank")
    rank.add_argument("--site", required=True)

    indices = sub.add_parser("indices").add_subparsers(dest="action", required=True)
    make = indices.add_parser("make")
    make.add_argument("--site", required=True)

    udm = sub.add_parser("udm").add_subparsers(dest="action", required=True)
    for action in ("train", "apply"):
        p = udm.add_parser(action)
        p.add_argument("--site", required=True)

    caption = sub.add_parser("caption").add_subparsers(dest="action", required=True)
    generate = caption.add_parser("generate")
    generate.add_argument("--site", required=True)

    judge = sub.add_parser("judge").add_subparsers(dest="action", required=True)
    jrun = judge.add_parser("run")
    jrun.add_argument("--site", required=True)

    review = sub.add_parser("review").add_subparsers(dest="action", required=True)
    review.add_parser("list")

    rag = sub.add_parser("rag").add_subparsers(dest="action", required=True)
    rag.add_parser("sync")
    q = rag.add_parser("query")
    q.add_argument("--query", required=True)
    q.add_argument("--mode", default="flat", choices=("flat", "agentic"))

    serve = sub.add_parser("serve")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _run_until(pipeline: Pipeline, site_id: str, until: str | None) -> int:
    run = pipeline.run_site(site_id, until=until)
    for stage, result in run.stages.items():
        detail = f" ({result.detail})" if result.detail else ""
        print(f"{stage}: {result.status}{detail}")
    if run.status == "failed":
        print(f"run {run.run_id or '-'} failed", file=sys.stderr)
        return 3
    print(f"run {run.run_id or '-'}: {run.status}")
    return 0


def _dispatch(pipeline: Pipeline, args: argparse.Namespace) -> int:
    if args.command == "sites" and args.action == "list":
        for site in pipeline.registry.list_sites():
            print(f"{site.site_id}\t{site.name}\t{site.country}\t{site.status}")
        return 0
    if args.command == "sites" and args.action == "add":
        commodity = [c.strip() for c in args.commodity.split(",") if c.strip()]
        site = SiteRecord(
            site_id=args.id, name=args.name, country=args.country,
            lat=args.lat, lon=args.lon, commodity=commodity,
        )
        pipeline.registry.save_site(site)
        print(f"added {site.site_id}")
        return 0
    if args.command == "scenes":
        return _run_until(pipeline, args.site, "catalog")
    if args.command == "quality":
        code = _run_until(pipeline, args.site, "quality")
        if code == 0:
            run = pipeline.latest_run(args.site)
            doc = json.loads(
                (pipeline.run_dir(args.site, run.run_id) / "quality.json").read_text()
            )
            print("ranking: " + ", ".join(doc["ranking"]))
        return code
    if args.command == "indices":
        return _run_until(pipeline, args.site, "indices")
    if args.command == "udm" and args.action == "train":
        print(json.dumps(pipeline.train_udm(args.site), indent=2))
        return 0
    if args.command == "udm" and args.action == "apply":
        print(json.dumps(pipeline.classify_udm(args.site), indent=2))
        return 0
    if args.command == "caption":
        return _run_until(pipeline, args.site, "caption")
    if args.command == "judge":
        return _run_until(pipeline, args.site, None)
    if args.command == "review":
        for rec in pipeline.reviews():
            print(f"{rec['caption_id']}\t{rec['decision']}\t{rec['reviewer']}")
        return 0
    if args.command == "rag" and args.action == "sync":
        print(json.dumps(pipeline.rag_sync(), indent=2))
        return 0
    if args.command == "rag" and args.action == "query":
        try:
            answer, _trace = pipeline.rag_query(args.query, args.mode)
        except InsufficientEvidence as exc:
            print(f"no answer: {exc}")
            return 0
        print(answer.text)
        return 0
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(pipeline), host=args.host, port=args.port)
        return 0
    raise AssertionError(f"unhandled command {args.command}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = PipelineConfig.load(args.config) if args.config else None
        pipeline = Pipeline(Path(args.root), config=config)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _dispatch(pipeline, args)
    except SyncFailed as exc:
        print(f"sync failed: {exc}", file=sys.stderr)
        return 3
    except KeyError as exc:
        print(f"unknown id: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MinelensError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
