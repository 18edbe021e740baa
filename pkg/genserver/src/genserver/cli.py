"""Server entry point: load the model, refuse to start if that fails."""

from __future__ import annotations

import sys

import click

from .server import create_app
from .textgen import ModelLoadError, load_model


@click.command()
@click.option("--model", default="gpt2", show_default=True,
              help="Model spec: hub id, hub:<id>, or builtin:words.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8100, show_default=True, type=int)
@click.option("--device", default="cpu", show_default=True,
              help="Device for hub models (cpu, cuda, cuda:0, ...).")
@click.option("--max-batch", default=16, show_default=True, type=int,
              help="Largest internal generation batch; bigger n is chunked.")
def main(model, host, port, device, max_batch):
    """Serve a text-generation model over the probe wire protocol."""
    try:
        generator = load_model(model, device=device)
    except ModelLoadError as exc:
        click.echo(f"refusing to start: {exc}", err=True)
        sys.exit(1)
    app = create_app(generator, max_batch=max_batch)
    click.echo(f"serving {generator.model_id} on http://{host}:{port}")
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
