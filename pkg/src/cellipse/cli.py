"""Command line client for the detection service.

The CLI never runs the pipeline itself: it talks to the HTTP service,
by default an in-process instance, or a remote one when --server is
given.  `serve` starts the service standalone.
"""

from __future__ import annotations

import argparse
import base64
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .errors import ConfigError
from .pipeline import resolve_thread_cap


class _Parser(argparse.ArgumentParser):
    """argparse flavor whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="cellipse", description=__doc__)
    parser.add_argument(
        "--server",
        default=None,
        metavar="URL",
        help="base URL of a running service (default: in-process)",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    analyze = sub.add_parser("analyze", help="detect cells in images")
    analyze.add_argument("inputs", nargs="+", metavar="image", help="PNG or PPM files")
    analyze.add_argument("--config", metavar="FILE", help="key = value config file")
    analyze.add_argument("--out", default=".", metavar="DIR", help="output directory")
    analyze.add_argument("--seed", type=int, default=None)
    analyze.add_argument(
        "--emit-annotated", action="store_true", help="write <stem>_annotated.png"
    )
    analyze.add_argument(
        "--emit-csv", action="store_true", help="write per-cell <stem>.csv"
    )
    analyze.add_argument(
        "--emit-hist",
        action="store_true",
        help="write per-class area histograms <stem>_class<k>_hist.csv",
    )

    bench = sub.add_parser("bench", help="run the synthetic benchmark")
    bench.add_argument("--scenes", type=int, default=5)
    bench.add_argument("--spec", metavar="FILE", help="key = value scene spec file")
    bench.add_argument("--out", default=".", metavar="DIR")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--config", metavar="FILE", help="pipeline config file")

    sub.add_parser("print-config", help="emit the default configuration")

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    return parser


def _make_client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=300.0)
    import warnings

    with warnings.catch_warnings():
        # the in-process test client drags in a deprecation notice that
        # would otherwise print on every CLI run
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _request(client, method: str, path: str, **kwargs):
    """One service call as (response, error); network failures become text."""
    import httpx

    try:
        return client.request(method, path, **kwargs), None
    except httpx.HTTPError as exc:
        return None, f"cannot reach server: {exc}"


def _analyze_one(client, path: Path, args, config_text):
    try:
        raw = path.read_bytes()
    except OSError as exc:
        return path, None, f"cannot read {path}: {exc}"
    body = {
        "image_b64": base64.b64encode(raw).decode("ascii"),
        "image_id": path.stem,
        "config_text": config_text,
        "seed": args.seed,
        "include_csv": args.emit_csv,
        "include_histograms": args.emit_hist,
        "include_annotated": args.emit_annotated,
    }
    response, error = _request(client, "POST", "/analyze", json=body)
    if error is not None:
        return path, None, error
    if response.status_code != 200:
        detail = response.json().get("detail", response.text)
        return path, None, f"{path}: {detail}"
    return path, response.json(), None


def _write_analysis_outputs(payload: dict, out_dir: Path, stem: str) -> None:
    if payload.get("csv") is not None:
        (out_dir / f"{stem}.csv").write_text(payload["csv"], encoding="utf-8")
    for label, text in (payload.get("histograms") or {}).items():
        (out_dir / f"{stem}_class{label}_hist.csv").write_text(text, encoding="utf-8")
    if payload.get("annotated_png_b64"):
        (out_dir / f"{stem}_annotated.png").write_bytes(
            base64.b64decode(payload["annotated_png_b64"])
        )


def _cmd_analyze(args) -> int:
    config_text = None
    if args.config:
        try:
            config_text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
            return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in args.inputs]
    try:
        cap = resolve_thread_cap()
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2

    local = threading.local()

    def client_for_thread():
        if not hasattr(local, "client"):
            local.client = _make_client(args.server)
        return local.client

    def task(path: Path):
        return _analyze_one(client_for_thread(), path, args, config_text)

    workers = min(cap, len(paths))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(task, paths))
    else:
        outcomes = [task(p) for p in paths]

    failed = False
    for path, payload, error in outcomes:
        if error is not None:
            failed = True
            print(error, file=sys.stderr)
            continue
        _write_analysis_outputs(payload, out_dir, path.stem)
        counts = ", ".join(
            f"class {label}: {count}"
            for label, count in sorted(payload["per_class_counts"].items())
        )
        total = len(payload["cells"])
        print(f"{payload['image_id']}: {total} cell(s)" + (f" ({counts})" if counts else ""))
        for warning in payload["warnings"]:
            print(f"{payload['image_id']}: warning: {warning}", file=sys.stderr)
    return 2 if failed else 0


def _parse_spec_overrides(text: str) -> dict:
    """key = value lines -> field dict for the bench request."""
    from dataclasses import fields

    from .synthbench import BenchSpec

    kinds = {f.name: type(getattr(BenchSpec(), f.name)) for f in fields(BenchSpec)}
    out: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, raw = line.partition("=")
        key = key.strip()
        if not eq or key not in kinds:
            raise ValueError(f"line {lineno}: unknown or malformed entry {raw_line!r}")
        out[key] = kinds[key](raw.strip())
    return out


def _cmd_bench(args) -> int:
    body = {"scenes": args.scenes, "seed": args.seed}
    if args.spec:
        try:
            body.update(_parse_spec_overrides(Path(args.spec).read_text(encoding="utf-8")))
        except (OSError, ValueError) as exc:
            print(f"bad bench spec: {exc}", file=sys.stderr)
            return 2
    if args.config:
        try:
            body["config_text"] = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
            return 2
    client = _make_client(args.server)
    response, error = _request(client, "POST", "/bench", json=body)
    if error is not None:
        print(error, file=sys.stderr)
        return 2
    if response.status_code != 200:
        detail = response.json().get("detail", response.text)
        print(f"bench failed: {detail}", file=sys.stderr)
        return 2
    payload = response.json()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bench_metrics.csv").write_text(payload["csv"], encoding="utf-8")
    rows = payload["scenes"]
    n = len(rows)
    if n:
        mean = lambda key: sum(r[key] for r in rows) / n  # noqa: E731
        print(
            f"{n} scene(s): mean count_error {mean('count_error'):.4f}, "
            f"mean matched_frac {mean('matched_frac'):.4f}, "
            f"mean center_rmse {mean('center_rmse'):.4f} px, "
            f"mean area_mae {mean('area_mae'):.2f} px^2"
        )
    return 0


def _cmd_print_config(args) -> int:
    client = _make_client(args.server)
    response, error = _request(client, "GET", "/config/default")
    if error is not None:
        print(error, file=sys.stderr)
        return 2
    if response.status_code != 200:
        print("could not fetch default config", file=sys.stderr)
        return 2
    sys.stdout.write(response.text)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "analyze": _cmd_analyze,
        "bench": _cmd_bench,
        "print-config": _cmd_print_config,
        "serve": _cmd_serve,
    }
    return handlers[args.command](args)


def main() -> None:
    raise SystemExit(cli_main())
