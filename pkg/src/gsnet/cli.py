"""Thin command-line client for the pipeline service.

Each subcommand builds a request, sends it to the service, and renders the
response.  By default the service runs in-process (no daemon needed); pass
--server or set GSNET_SERVER to target a running instance, e.g. one started
with `gsnet serve`.

Options may also come from a config file of `key = value` lines (# starts a
comment); explicit command-line flags win over the file, the file wins over
defaults, and unknown keys are rejected.

Exit codes: 0 success, 1 runtime or tolerance failure, 2 usage error.
"""

from __future__ import annotations

import asyncio
import sys
from pathlib import Path

import click
from click.core import ParameterSource

SPLIT_CHOICES = ("train", "val", "test")
VARIANT_CHOICES = ("baseline", "cam_only", "sam_only", "full_gsam")


def _post(server: str | None, path: str, payload: dict) -> tuple[int, dict]:
    import httpx

    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            response = client.post(path, json=payload)
            return response.status_code, response.json()

    from .service import app

    async def call():
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://gsnet.local") as client:
            response = await client.post(path, json=payload, timeout=None)
            return response.status_code, response.json()

    return asyncio.run(call())


def _request(server: str | None, path: str, payload: dict) -> dict:
    status, body = _post(server, path, payload)
    if status != 200:
        detail = body.get("detail", body) if isinstance(body, dict) else body
        click.echo(f"error: {detail}", err=True)
        sys.exit(1)
    return body


def _load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise click.UsageError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise click.UsageError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def _resolve(ctx: click.Context, config_path: str | None) -> dict:
    """Merge config-file values under explicit flags; flags always win."""
    values = dict(ctx.params)
    if not config_path:
        return values
    params_by_name = {p.name: p for p in ctx.command.params}
    for key, raw in _load_config_file(config_path).items():
        name = key.replace("-", "_")
        if name == "config" or name not in params_by_name:
            raise click.UsageError(f"unknown config key {key!r}")
        if ctx.get_parameter_source(name) == ParameterSource.DEFAULT:
            param = params_by_name[name]
            values[name] = param.type.convert(raw, param, ctx)
    return values


def _require(values: dict, name: str):
    if values.get(name) is None:
        flag = "--" + name.replace("_", "-")
        raise click.UsageError(f"missing required option {flag} (flag or config file)")
    return values[name]


def _parse_numbers(text: str, kind, what: str) -> list:
    try:
        items = [kind(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise click.UsageError(f"bad {what} list {text!r}") from exc
    if not items:
        raise click.UsageError(f"empty {what} list")
    return items


server_option = click.option("--server", envvar="GSNET_SERVER", default=None,
                             help="Service URL; defaults to running in-process.")
config_option = click.option("--config", default=None,
                             help="Config file of key = value lines; flags override it.")


@click.group()
@click.version_option(package_name="gsnet")
def main():
    """Synthetic disc/cup staging pipeline: data generation, training,
    evaluation, gradient checking, and the four-variant ablation."""


@main.command("gen-data")
@click.option("--out", default=None, help="Output directory for images and manifest.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--per-class", default=200, show_default=True, type=click.IntRange(min=1),
              help="Samples per class.")
@click.option("--image-hw", default=64, show_default=True, type=click.IntRange(min=8))
@click.option("--noise-std", default=0.05, show_default=True, type=click.FloatRange(min=0.0))
@click.option("--fractions", default="0.49,0.21,0.30", show_default=True,
              help="train,val,test fractions (must sum to 1).")
@config_option
@server_option
@click.pass_context
def gen_data(ctx, **_kwargs):
    """Generate the synthetic dataset and its split manifest."""
    values = _resolve(ctx, ctx.params["config"])
    fractions = _parse_numbers(values["fractions"], float, "fraction")
    if len(fractions) != 3:
        raise click.UsageError("exactly three fractions are required")
    payload = {
        "out_dir": _require(values, "out"),
        "seed": values["seed"],
        "per_class": values["per_class"],
        "image_hw": values["image_hw"],
        "noise_std": values["noise_std"],
        "fractions": fractions,
    }
    body = _request(values["server"], "/gen-data", payload)
    click.echo(f"wrote {body['total']} samples, manifest: {body['manifest']}")
    for split, by_class in body["counts"].items():
        parts = ", ".join(f"{name}={count}" for name, count in by_class.items())
        click.echo(f"  {split}: {parts}")


@main.command()
@click.option("--manifest", default=None, help="Dataset manifest CSV.")
@click.option("--out", default=None, help="Output directory for checkpoint and log.")
@click.option("--variant", default="full_gsam", show_default=True,
              type=click.Choice(VARIANT_CHOICES))
@click.option("--epochs", default=50, show_default=True, type=click.IntRange(min=1))
@click.option("--lr", default=0.005, show_default=True,
              type=click.FloatRange(min=0.0, min_open=True))
@click.option("--batch-size", default=16, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--augment/--no-augment", default=True, show_default=True)
@click.option("--input-hw", default=64, show_default=True, type=click.IntRange(min=16))
@config_option
@server_option
@click.pass_context
def train(ctx, **_kwargs):
    """Train one variant and keep the best-validation checkpoint."""
    values = _resolve(ctx, ctx.params["config"])
    payload = {
        "manifest": _require(values, "manifest"),
        "out_dir": _require(values, "out"),
        "variant": values["variant"],
        "epochs": values["epochs"],
        "lr": values["lr"],
        "batch_size": values["batch_size"],
        "seed": values["seed"],
        "augment": values["augment"],
        "input_hw": values["input_hw"],
    }
    body = _request(values["server"], "/train", payload)
    click.echo(f"trained {body['variant']} for {body['epochs']} epochs")
    click.echo(f"best validation accuracy {body['best_val_accuracy']:.4f} "
               f"at epoch {body['best_epoch']}")
    click.echo(f"checkpoint: {body['checkpoint_dir']}")
    click.echo(f"log: {body['log_path']}")


@main.command()
@click.option("--checkpoint", default=None, help="Checkpoint directory from `train`.")
@click.option("--manifest", default=None, help="Dataset manifest CSV.")
@click.option("--split", default="test", show_default=True, type=click.Choice(SPLIT_CHOICES))
@click.option("--out", default=None, help="Optional directory for report files.")
@click.option("--dump-attention", is_flag=True, default=False,
              help="Also write attention maps (.t4b) for one batch.")
@config_option
@server_option
@click.pass_context
def eval(ctx, **_kwargs):
    """Evaluate a checkpoint on a dataset split."""
    values = _resolve(ctx, ctx.params["config"])
    payload = {
        "checkpoint": _require(values, "checkpoint"),
        "manifest": _require(values, "manifest"),
        "split": values["split"],
        "out_dir": values["out"],
        "dump_attention": values["dump_attention"],
    }
    body = _request(values["server"], "/eval", payload)
    click.echo(f"variant {body['variant']}, split {body['split']}")
    click.echo(body["report_text"])
    if body["report_path"]:
        click.echo(f"report: {body['report_path']}")
    for path in body["attention_paths"]:
        click.echo(f"attention map: {path}")


@main.command()
@click.option("--tol", default=1e-6, show_default=True,
              type=click.FloatRange(min=0.0, min_open=True),
              help="Max allowed relative error vs central differences.")
@click.option("--step", default=1e-5, show_default=True,
              type=click.FloatRange(min=0.0, min_open=True),
              help="Finite-difference step h.")
@click.option("--samples", default=32, show_default=True, type=click.IntRange(min=1),
              help="Elements checked per parameter.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, help="Optional directory for the CSV report.")
@config_option
@server_option
@click.pass_context
def gradcheck(ctx, **_kwargs):
    """Check tape gradients of all four variants on a tiny random model."""
    values = _resolve(ctx, ctx.params["config"])
    payload = {
        "tol": values["tol"],
        "step": values["step"],
        "samples": values["samples"],
        "seed": values["seed"],
        "out_dir": values["out"],
    }
    body = _request(values["server"], "/gradcheck", payload)
    click.echo(body["report_text"])
    if body["passed"]:
        click.echo(f"PASS: worst relative error {body['worst']:.3e} < {body['tol']:g}")
    else:
        click.echo(f"FAIL: worst relative error {body['worst']:.3e} >= {body['tol']:g}",
                   err=True)
        sys.exit(1)


@main.command()
@click.option("--manifest", default=None, help="Dataset manifest CSV.")
@click.option("--out", default=None, help="Output directory for tables and logs.")
@click.option("--seeds", default="7,8,9", show_default=True,
              help="Comma-separated training seeds.")
@click.option("--epochs", default=50, show_default=True, type=click.IntRange(min=1))
@click.option("--lr", default=0.005, show_default=True,
              type=click.FloatRange(min=0.0, min_open=True))
@click.option("--batch-size", default=16, show_default=True, type=click.IntRange(min=1))
@click.option("--augment/--no-augment", default=True, show_default=True)
@click.option("--input-hw", default=64, show_default=True, type=click.IntRange(min=16))
@config_option
@server_option
@click.pass_context
def ablate(ctx, **_kwargs):
    """Train all four variants across seeds and print the comparison table."""
    values = _resolve(ctx, ctx.params["config"])
    payload = {
        "manifest": _require(values, "manifest"),
        "out_dir": _require(values, "out"),
        "seeds": _parse_numbers(values["seeds"], int, "seed"),
        "epochs": values["epochs"],
        "lr": values["lr"],
        "batch_size": values["batch_size"],
        "augment": values["augment"],
        "input_hw": values["input_hw"],
    }
    body = _request(values["server"], "/ablate", payload)
    click.echo(f"seeds: {', '.join(str(s) for s in body['seeds'])} "
               f"(test-split means)")
    click.echo(body["table_text"])
    click.echo(f"table: {body['csv_path']}")
    click.echo(f"per-run detail: {body['runs_csv_path']}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("gsnet.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
