"""Command-line client for the service.

Every subcommand builds a request from the config file and sends it to the
service layer: an in-process application instance by default, or a remote
server with --server. Results are written to files by the service;
stdout carries progress only.

Exit codes: 0 success, 1 failure (e.g. gradcheck found a bad rule),
2 config/validation error, 3 divergence, 4 I/O error.
"""

from __future__ import annotations

import json
import logging
import os
import sys

import click
import httpx
import yaml

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

_KIND_TO_EXIT = {"config": EXIT_CONFIG, "divergence": EXIT_DIVERGENCE, "io": EXIT_IO}

log = logging.getLogger("cibr.cli")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("CIBR_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        click.echo(f"cannot read config {path}: {e}", err=True)
        sys.exit(EXIT_IO)
    try:
        doc = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        click.echo(f"cannot parse config {path}: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    if not isinstance(doc, dict):
        click.echo(f"config {path} must be a mapping at top level", err=True)
        sys.exit(EXIT_CONFIG)
    return doc


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def _post(server: str | None, path: str, payload: dict) -> dict:
    try:
        with _client(server) as client:
            resp = client.post(path, json=payload)
    except httpx.HTTPError as e:
        click.echo(f"cannot reach service: {e}", err=True)
        sys.exit(EXIT_IO)
    if resp.status_code == 200:
        return resp.json()
    if resp.status_code == 422:
        # request-model validation: name the offending keys/fields
        detail = resp.json().get("detail", [])
        for item in detail if isinstance(detail, list) else [detail]:
            loc = ".".join(str(p) for p in item.get("loc", [])) if isinstance(item, dict) else ""
            msg = item.get("msg", str(item)) if isinstance(item, dict) else str(item)
            click.echo(f"config error at {loc}: {msg}", err=True)
        sys.exit(EXIT_CONFIG)
    body = {}
    try:
        body = resp.json()
    except ValueError:
        pass
    kind = body.get("error_kind", "internal")
    click.echo(f"{kind} error: {body.get('detail', resp.text)}", err=True)
    sys.exit(_KIND_TO_EXIT.get(kind, EXIT_FAIL))


@click.group()
def main() -> None:
    """Train, evaluate, sweep, estimate MI, and certify gradients."""
    _setup_logging()


_server_option = click.option("--server", default=None, metavar="URL",
                              help="Remote service URL (default: run in-process).")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Config file.")
@click.option("--out", default=None, metavar="DIR", help="Output directory override.")
@click.option("--seed", type=int, default=None, help="Seed override.")
@_server_option
def train(config_path: str, out: str | None, seed: int | None, server: str | None) -> None:
    """Run training; writes steps.csv, manifest.json, checkpoint.ckpt."""
    payload = {"config": _load_config(config_path), "seed": seed, "out_dir": out}
    body = _post(server, "/train", payload)
    click.echo(f"wrote {body['step_csv']}")
    click.echo(f"wrote {body['manifest']}")
    click.echo(f"wrote {body['checkpoint']}")
    click.echo(f"config hash {body['config_hash'][:12]}... done")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(), help="Trained checkpoint.")
@click.option("--config", "config_path", required=True, type=click.Path(), help="Config file.")
@click.option("--direction", type=click.Choice(["t2v", "v2t"]), default=None)
@click.option("--out", default=None, metavar="DIR", help="Output directory override.")
@_server_option
def eval_cmd(checkpoint: str, config_path: str, direction: str | None,
             out: str | None, server: str | None) -> None:
    """Evaluate a checkpoint; writes retrieval/classification reports."""
    payload = {
        "checkpoint": checkpoint,
        "config": _load_config(config_path),
        "direction": direction,
        "out_dir": out,
    }
    body = _post(server, "/eval", payload)
    click.echo(f"wrote {body['retrieval_path']}")
    if body.get("classification_path"):
        click.echo(f"wrote {body['classification_path']}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Config file.")
@click.option("--lambdas", required=True, metavar="CSV",
              help="Comma-separated regularization weights, e.g. 0,0.1,0.5.")
@click.option("--out", default=None, metavar="DIR", help="Output directory override.")
@click.option("--seed", type=int, default=None, help="Seed override.")
@_server_option
def sweep(config_path: str, lambdas: str, out: str | None, seed: int | None,
          server: str | None) -> None:
    """Train/evaluate once per lambda; writes sweep.csv."""
    try:
        values = [float(tok) for tok in lambdas.split(",") if tok.strip() != ""]
    except ValueError:
        click.echo(f"cannot parse --lambdas {lambdas!r}", err=True)
        sys.exit(EXIT_CONFIG)
    if not values:
        click.echo("--lambdas must name at least one value", err=True)
        sys.exit(EXIT_CONFIG)
    payload = {
        "config": _load_config(config_path),
        "lambdas": values,
        "seed": seed,
        "out_dir": out,
    }
    body = _post(server, "/sweep", payload)
    click.echo(f"wrote {body['csv_path']} ({len(body['rows'])} rows)")


@main.command("estimate-mi")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="MI estimation config file.")
@click.option("--out", default=None, metavar="DIR", help="Output directory override.")
@_server_option
def estimate_mi_cmd(config_path: str, out: str | None, server: str | None) -> None:
    """Train a critic on a data pair; writes mi_estimate.json."""
    payload = {"config": _load_config(config_path), "out_dir": out}
    body = _post(server, "/estimate-mi", payload)
    click.echo(f"estimate: {body['estimate_nats']:.4f} nats")
    if body.get("oracle_nats") is not None:
        click.echo(f"oracle:   {body['oracle_nats']:.4f} nats "
                   f"(abs error {body['abs_error']:.4f})")
    click.echo(f"wrote {body['report_path']}")


@main.command()
@click.option("--sabotage", default=None, hidden=True,
              help="Inject a broken backward rule into the named op (self-test).")
@_server_option
def gradcheck(sabotage: str | None, server: str | None) -> None:
    """Certify every backward rule against finite differences."""
    body = _post(server, "/gradcheck", {"sabotage": sabotage})
    for name, err in body["ops"].items():
        status = "ok" if name not in body["failing"] else "FAIL"
        click.echo(f"{status:4s} {name:24s} max rel err {err:.3e}")
    if body["passed"]:
        click.echo(f"all {len(body['ops'])} ops within {body['tolerance']:g}")
        sys.exit(EXIT_OK)
    click.echo(f"FAILED ops: {', '.join(body['failing'])}", err=True)
    sys.exit(EXIT_FAIL)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
