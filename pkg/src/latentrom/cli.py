"""Command-line client for the pipeline service.

The CLI carries no business logic: it assembles a run config from an optional
JSON file plus flag overrides, sends it to a service (``--server URL``), and
polls the job until completion. Without ``--server`` it starts a private
local server for the duration of the command, so single-machine use needs no
separate daemon. ``latentrom serve`` runs the service in the foreground.

Exit codes: 0 on success, 2 for configuration errors, 1 otherwise; failures
print one machine-parsable line ``<category>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
import threading
import time

import httpx

ENDPOINTS = {
    "generate": "/datasets/generate",
    "train": "/models/train",
    "predict": "/models/predict",
    "evaluate": "/models/evaluate",
    "ingest": "/datasets/ingest",
}


def _parse_floats(text):
    return [float(v) for v in str(text).split(",") if v != ""]


def _parse_segments(text):
    values = [int(v) for v in str(text).split(",") if v != ""]
    return values[0] if len(values) == 1 else values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentrom", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (flat keys or per-command sections)")
        p.add_argument("--server", help="service URL; omit to run an ephemeral local server")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="run directory (default: timestamped under ./runs)")
        p.add_argument("--workers", type=int)
        p.add_argument("--poll", type=float, default=0.5, help="job polling interval seconds")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config key (VALUE parsed as JSON when possible)",
        )

    p = sub.add_parser("generate", help="simulate trajectories for sampled parameter points")
    common(p)
    p.add_argument("--n-samples", type=int, dest="n_samples")
    p.add_argument("--sampling", choices=["random", "uniform-grid"])
    p.add_argument("--segments", type=_parse_segments, help="e.g. 50 or 50,60,70 for multiscale")
    p.add_argument("--box", type=_parse_floats, help="a_min,a_max,w_min,w_max")

    p = sub.add_parser("train", help="train bundles from a dataset archive")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--ns", dest="n_latent", help="latent dimension: 5, or a sweep like 2..7")
    p.add_argument("--iterations", type=int)
    p.add_argument("--subsample", dest="spatial_subsample", help="points per iteration or 'all'")

    p = sub.add_parser("predict", help="predict fields at one parameter point")
    common(p)
    p.add_argument("--bundle")
    p.add_argument("--mu", type=_parse_floats, help="e.g. 0.64,1.21")
    p.add_argument("--coords", help="'grid:<n>', 'dataset:<path>[:i]' or a .npy/.csv path")

    p = sub.add_parser("evaluate", help="evaluate a bundle against a truth archive")
    common(p)
    p.add_argument("--bundle")
    p.add_argument("--truth")

    p = sub.add_parser("serve", help="run the service in the foreground")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    return parser


def load_config_file(path: str | None, command: str) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        loaded = json.load(fh)
    if command in loaded and isinstance(loaded[command], dict):
        return dict(loaded[command])
    return {k: v for k, v in loaded.items() if not isinstance(v, dict)}


def assemble_overrides(args: argparse.Namespace, command: str) -> dict:
    cfg = load_config_file(args.config, command)
    flag_keys = {
        "generate": ["seed", "out", "workers", "n_samples", "sampling", "segments", "box"],
        "train": ["seed", "out", "workers", "dataset", "n_latent", "iterations", "spatial_subsample"],
        "predict": ["seed", "out", "workers", "bundle", "mu", "coords"],
        "evaluate": ["seed", "out", "workers", "bundle", "truth"],
        "ingest": ["seed", "out"],
    }[command]
    for key in flag_keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    for item in args.set:
        key, _, raw = item.partition("=")
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[key] = raw
    if command == "generate" and isinstance(cfg.get("box"), list) and cfg["box"] and not isinstance(cfg["box"][0], list):
        flat = cfg["box"]
        cfg["box"] = [[flat[0], flat[1]], [flat[2], flat[3]]]
    return cfg


@contextlib.contextmanager
def local_server():
    """Private in-process service on an ephemeral port."""
    import uvicorn

    from .service import create_app

    config = uvicorn.Config(create_app(), host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if not thread.is_alive() or time.time() > deadline:
            raise RuntimeError("local service failed to start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10)


def run_job(base_url: str, command: str, overrides: dict, poll: float) -> dict:
    with httpx.Client(base_url=base_url, timeout=60.0) as client:
        resp = client.post(ENDPOINTS[command], params={"wait": "false"}, json=overrides)
        if resp.status_code >= 400:
            raise SystemExitError(resp.json())
        job = resp.json()
        started = time.time()
        last_note = started
        while job["status"] in ("queued", "running"):
            time.sleep(poll)
            job = client.get(f"/jobs/{job['id']}").json()
            if time.time() - last_note > 15:
                print(f"[{command}] running ({time.time() - started:.0f}s)", flush=True)
                last_note = time.time()
        return job


class SystemExitError(Exception):
    def __init__(self, payload):
        self.payload = payload if isinstance(payload, dict) else {"category": "internal-error", "message": str(payload)}


def _fail(category: str, message: str) -> int:
    print(f"{category}: {message}", file=sys.stderr)
    return 2 if category == "config-error" else 1


def _print_summary(command: str, result: dict):
    if command == "generate":
        print(
            f"dataset: {result['dataset']} ({result['n_trajectories']} trajectories, "
            f"{result['n_failures']} failures, solver {result['solver_seconds']:.1f}s)"
        )
    elif command == "train":
        for b in result["bundles"]:
            print(
                f"bundle: {b['bundle']} (n_latent={b['n_latent']}, {b['stop_reason']}, "
                f"loss={b['final_loss']:.3e}, latent r_L2={b['latent_rl2']:.3f}%, "
                f"{b['train_seconds']:.0f}s)"
            )
    elif command == "predict":
        print(f"prediction: {result['prediction']} ({result['n_points']} points, {result['online_seconds']:.2f}s online)")
    elif command == "evaluate":
        speed = result["speed_up"]
        print(
            f"aggregate r_L2: {result['aggregate_rl2_percent']:.4f}%  "
            f"(n={result['n_evaluated']}, online {result['online_seconds']:.1f}s, "
            f"speed-up {'n/a' if speed is None else f'{speed:.1f}x'})"
        )
        print(f"report: {result['report']}")
    else:
        print(json.dumps(result, indent=1))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    try:
        overrides = assemble_overrides(args, args.command)
    except (OSError, json.JSONDecodeError) as err:
        return _fail("config-error", f"cannot read config: {err}")

    try:
        if args.server:
            job = run_job(args.server.rstrip("/"), args.command, overrides, args.poll)
        else:
            with local_server() as url:
                job = run_job(url, args.command, overrides, args.poll)
    except SystemExitError as err:
        return _fail(err.payload.get("category", "internal-error"), err.payload.get("message", ""))
    except httpx.HTTPError as err:
        return _fail("connection-error", str(err))

    if job["status"] != "done":
        error = job.get("error") or {}
        return _fail(error.get("category", "internal-error"), error.get("message", "job failed"))
    _print_summary(args.command, job["result"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
