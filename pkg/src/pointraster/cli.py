"""Command-line client for the render service.

All subcommands are thin HTTP clients: by default they mount the FastAPI app
in-process (no sockets involved), with ``--server URL`` they target a running
instance instead.  Inputs are file paths or inline scene specs like
``uniform_cube:n=100000,seed=7`` / ``terrain:n=5000000,seed=1,extent=50``.
"""

from __future__ import annotations

import asyncio
import json
from pathlib import Path

import click
import httpx

from .bench import ALL_METHODS, DEFAULT_SIZE, parse_input_token
from .ordering import ORDERING_KINDS


class ServiceClient:
    """Dispatches requests either to a remote server or the in-process app."""

    def __init__(self, server: str | None):
        self.server = server
        self._app = None
        if server is None:
            from .service.app import create_app
            self._app = create_app()

    def request(self, method: str, path: str, payload: dict) -> httpx.Response:
        if self.server is not None:
            with httpx.Client(base_url=self.server, timeout=None) as client:
                return client.request(method, path, json=payload)

        async def _go():
            transport = httpx.ASGITransport(app=self._app)
            async with httpx.AsyncClient(transport=transport, timeout=None,
                                         base_url="http://pointraster") as client:
                return await client.request(method, path, json=payload)

        return asyncio.run(_go())

    def post(self, path: str, payload: dict) -> httpx.Response:
        response = self.request("POST", path, payload)
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise click.ClickException(f"{path} failed ({response.status_code}): {detail}")
        return response


def _parse_vec3(value: str):
    parts = [float(p) for p in value.split(",")]
    if len(parts) != 3:
        raise click.BadParameter(f"expected x,y,z - got {value!r}")
    return tuple(parts)


def _parse_size(value: str):
    w, _, h = value.lower().partition("x")
    try:
        return int(w), int(h)
    except ValueError:
        raise click.BadParameter(f"expected WxH - got {value!r}")


def _input_payload(token: str) -> dict:
    try:
        return parse_input_token(token)
    except ValueError as exc:
        raise click.BadParameter(str(exc))


def _viewpoint_payload(eye, target, up, fovy, near, far):
    if eye is None:
        return None
    return {
        "name": "cli",
        "eye": _parse_vec3(eye),
        "target": _parse_vec3(target) if target else (0.0, 0.0, 0.0),
        "up": _parse_vec3(up) if up else (0.0, 1.0, 0.0),
        "fovy_deg": fovy,
        "near": near,
        "far": far,
    }


def _viewpoint_options(fn):
    fn = click.option("--eye", default=None, help="camera position x,y,z "
                      "(omit for an auto-framed view)")(fn)
    fn = click.option("--target", default=None, help="look-at point x,y,z")(fn)
    fn = click.option("--up", default=None, help="up vector x,y,z")(fn)
    fn = click.option("--fovy", default=60.0, show_default=True,
                      help="vertical field of view, degrees")(fn)
    fn = click.option("--near", default=0.05, show_default=True)(fn)
    fn = click.option("--far", default=1000.0, show_default=True)(fn)
    return fn


@click.group()
@click.option("--server", envvar="POINTRASTER_SERVER", default=None,
              help="base URL of a running service; default runs in-process")
@click.pass_context
def main(ctx, server):
    """Point-cloud rasterizer and benchmark client."""
    ctx.obj = ServiceClient(server)


@main.command()
@click.argument("input_token", metavar="INPUT")
@click.option("--method", default="atomic_min", show_default=True,
              type=click.Choice(ALL_METHODS))
@click.option("--ordering", default="original", show_default=True,
              type=click.Choice(ORDERING_KINDS))
@click.option("--seed", default=0, show_default=True)
@click.option("--batch-size", default=128, show_default=True)
@click.option("--size", default=f"{DEFAULT_SIZE[0]}x{DEFAULT_SIZE[1]}",
              show_default=True, help="image size WxH")
@click.option("--workers", default=None, type=int,
              help="worker threads (default: POINTRASTER_WORKERS or CPU count)")
@click.option("--epsilon", default=1.01, show_default=True,
              help="blend acceptance factor for the hqs methods")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="output PPM path")
@click.option("--depth-out", default=None, type=click.Path(dir_okay=False),
              help="also write a grayscale linear-depth PPM")
@_viewpoint_options
@click.pass_obj
def render(client, input_token, method, ordering, seed, batch_size, size,
           workers, epsilon, out, depth_out, eye, target, up, fovy, near, far):
    """Render one frame to a PPM file."""
    width, height = _parse_size(size)
    payload = {
        "input": _input_payload(input_token),
        "method": method,
        "ordering": {"kind": ordering, "seed": seed, "batch_size": batch_size},
        "viewpoint": _viewpoint_payload(eye, target, up, fovy, near, far),
        "width": width,
        "height": height,
        "workers": workers,
        "epsilon": epsilon,
    }
    response = client.post("/render", payload)
    Path(out).write_bytes(response.content)
    click.echo(f"wrote {out} "
               f"(candidates={response.headers['X-Pointraster-Candidates']}, "
               f"min_calls={response.headers['X-Pointraster-Min-Calls']})")
    if depth_out:
        response = client.post("/render", {**payload, "channel": "depth"})
        Path(depth_out).write_bytes(response.content)
        click.echo(f"wrote {depth_out}")


@main.command()
@click.argument("input_token", metavar="INPUT")
@click.option("--ordering", default="morton", show_default=True,
              type=click.Choice(ORDERING_KINDS))
@click.option("--seed", default=0, show_default=True)
@click.option("--batch-size", default=128, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="output cloud path (raw container format)")
@click.pass_obj
def order(client, input_token, ordering, seed, batch_size, out):
    """Reorder a cloud and write it with the ordering recorded as metadata."""
    payload = {
        "input": _input_payload(input_token),
        "ordering": {"kind": ordering, "seed": seed, "batch_size": batch_size},
    }
    response = client.post("/order", payload)
    Path(out).write_bytes(response.content)
    click.echo(f"wrote {out} ({len(response.content)} bytes, "
               f"ordering={ordering}, seed={seed})")


@main.command()
@click.argument("input_token", metavar="INPUT")
@click.option("--size", default=f"{DEFAULT_SIZE[0]}x{DEFAULT_SIZE[1]}",
              show_default=True, help="image size WxH")
@click.option("--threshold", default=10_000, show_default=True,
              help="report pixels holding more candidates than this")
@click.option("--out", default=None, type=click.Path(dir_okay=False),
              help="write a log-scaled false-color heatmap PPM here")
@_viewpoint_options
@click.pass_obj
def stats(client, input_token, size, threshold, out, eye, target, up, fovy,
          near, far):
    """Per-pixel candidate histogram summary (and optional heatmap)."""
    width, height = _parse_size(size)
    payload = {
        "input": _input_payload(input_token),
        "viewpoint": _viewpoint_payload(eye, target, up, fovy, near, far),
        "width": width,
        "height": height,
        "threshold": threshold,
    }
    summary = client.post("/stats", payload).json()
    click.echo(f"candidates total: {summary['total']}")
    click.echo(f"max per pixel:    {summary['max_count']}")
    click.echo(f"mean per pixel:   {summary['mean_count']:.3f}")
    click.echo(f"pixels > {summary['threshold']}: {summary['pixels_over_threshold']}")
    if out:
        response = client.post("/heatmap", payload)
        Path(out).write_bytes(response.content)
        click.echo(f"wrote {out}")


@main.command()
@click.argument("input_token", metavar="INPUT", required=False)
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON benchmark config; flags override its fields")
@click.option("--method", "methods", multiple=True,
              type=click.Choice(ALL_METHODS))
@click.option("--ordering", "orderings", multiple=True,
              type=click.Choice(ORDERING_KINDS))
@click.option("--seed", default=0, show_default=True,
              help="seed for the shuffled orderings")
@click.option("--size", default=None, help="image size WxH")
@click.option("--frames", default=None, type=int)
@click.option("--warmup", default=None, type=int)
@click.option("--workers", default=None, type=int)
@click.option("--epsilon", default=None, type=float)
@click.option("--seconds", default=None, type=float,
              help="measure a wall-clock window instead of a frame count")
@click.option("--out", default=None, type=click.Path(dir_okay=False),
              help="CSV output path (default: stdout)")
@_viewpoint_options
@click.pass_obj
def bench(client, input_token, config_path, methods, orderings, seed, size,
          frames, warmup, workers, epsilon, seconds, out, eye, target, up,
          fovy, near, far):
    """Run the method x ordering x viewpoint benchmark matrix."""
    payload = json.loads(Path(config_path).read_text()) if config_path else {}
    if input_token:
        payload["input"] = _input_payload(input_token)
    if "input" not in payload:
        raise click.UsageError("provide INPUT or a config file with one")
    if isinstance(payload.get("input"), str):
        payload["input"] = _input_payload(payload["input"])
    if methods:
        payload["methods"] = list(methods)
    if orderings:
        payload["orderings"] = [
            {"kind": kind, "seed": seed} for kind in orderings]
    else:
        payload.setdefault("orderings", [{"kind": "original"}])
        payload["orderings"] = [
            {"kind": o} if isinstance(o, str) else o
            for o in payload["orderings"]]
    viewpoint = _viewpoint_payload(eye, target, up, fovy, near, far)
    if viewpoint:
        payload["viewpoints"] = [viewpoint]
    if size:
        payload["width"], payload["height"] = _parse_size(size)
    for key, value in (("frames", frames), ("warmup", warmup),
                       ("workers", workers), ("epsilon", epsilon),
                       ("measure_seconds", seconds)):
        if value is not None:
            payload[key] = value
    payload.setdefault("methods", ["atomic_min"])

    result = client.post("/bench", payload).json()
    for label, secs in result["ordering_seconds"].items():
        click.echo(f"ordering {label}: {secs * 1000.0:.1f} ms", err=True)
    if out:
        Path(out).write_text(result["csv"])
        click.echo(f"wrote {out} ({len(result['records'])} rows)")
    else:
        click.echo(result["csv"], nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main(prog_name="pointraster")
