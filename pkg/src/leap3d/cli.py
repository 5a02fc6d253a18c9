"""Command-line driver composing the pipeline stages.

Configuration comes from a JSON file plus flag overrides; flags win.
LEAP_LOG controls log verbosity (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline as pl
from .errors import LeapError
from .io_formats import DatasetLayout
from .metrics import MODE_COUNT_AS_WRONG, MODE_IGNORE_UNLABELED
from .synth import load_scene, load_sensor
from .taxonomy import load_taxonomy

log = logging.getLogger("leap3d")


def _setup_logging() -> None:
    level = os.environ.get("LEAP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


class _Cli(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except LeapError as exc:
            raise click.ClickException(str(exc)) from exc
        except FileNotFoundError as exc:
            raise click.UsageError(str(exc)) from exc


@click.group(cls=_Cli)
def main():
    """3D semantic pseudo-label fusion engine."""
    _setup_logging()


def _taxonomy_option(fn):
    return click.option("--taxonomy", "taxonomy_path", required=True,
                        type=click.Path(exists=True, dir_okay=False),
                        help="Taxonomy JSON (classes, prompts, maps).")(fn)


@main.command("label2d")
@_taxonomy_option
@click.option("--regions", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--threshold", default=0.25, show_default=True, type=float,
              help="Region similarity threshold.")
@click.option("--jobs", default=1, show_default=True, type=int)
def cmd_label2d(taxonomy_path, regions, out, threshold, jobs):
    """Region files to pixel probability maps (.lppm)."""
    _, pm = load_taxonomy(taxonomy_path)
    n = pl.stage_label2d(regions, out, pm, threshold, jobs)
    click.echo(f"label2d: wrote {n} pixel maps to {out}")


@main.command("paint")
@_taxonomy_option
@click.option("--clouds", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--lppm", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--calib", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--regions", default=None, type=click.Path(exists=True, file_okay=False),
              help="Region files for depth-cluster occlusion filtering.")
@click.option("--threshold", default=0.25, show_default=True, type=float)
@click.option("--gap", default=1.0, show_default=True, type=float,
              help="Depth-cluster split distance in meters.")
@click.option("--jobs", default=1, show_default=True, type=int)
def cmd_paint(taxonomy_path, clouds, lppm, calib, out, regions, threshold, gap, jobs):
    """Clouds + pixel maps + calibration to painted clouds (.lppc)."""
    _, pm = load_taxonomy(taxonomy_path)
    n = pl.stage_paint(clouds, lppm, calib, out, pm=pm, regions_dir=regions,
                       threshold=threshold, gap=gap, jobs=jobs)
    click.echo(f"paint: wrote {n} painted clouds to {out}")


@main.command("fuse")
@_taxonomy_option
@click.option("--clouds", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--painted", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--poses", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "grid_out", required=True, type=click.Path())
@click.option("--voxel-size", default=0.2, show_default=True, type=float)
@click.option("--tau", default=1.0, show_default=True, type=float,
              help="Temperature for camera observations.")
@click.option("--eps", default=1e-6, show_default=True, type=float)
@click.option("--jobs", default=1, show_default=True, type=int)
def cmd_fuse(taxonomy_path, clouds, painted, poses, grid_out, voxel_size, tau, eps, jobs):
    """Painted clouds + poses to a fused voxel grid (.lvox)."""
    tax, _ = load_taxonomy(taxonomy_path)
    frames, points = pl.stage_fuse(clouds, painted, poses, grid_out, voxel_size,
                                   tax.num_classes, tau=tau, eps=eps, jobs=jobs)
    click.echo(f"fuse: {points} labeled points from {frames} frames into {grid_out}")


@main.command("smooth")
@click.option("--grid", "grid_in", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "grid_out", required=True, type=click.Path())
@click.option("--k", default=9, show_default=True, type=int,
              help="Neighbor count for distance-weighted averaging.")
def cmd_smooth(grid_in, grid_out, k):
    """Smooth a voxel grid with k-nearest averaging."""
    n = pl.stage_smooth(grid_in, grid_out, k)
    click.echo(f"smooth: {n} voxels into {grid_out}")


@main.command("export-labels")
@_taxonomy_option
@click.option("--grid", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--clouds", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--poses", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True, type=int)
def cmd_export_labels(taxonomy_path, grid, clouds, poses, out, jobs):
    """Per-point labels (+ confidences) for every scan from a voxel grid."""
    tax, _ = load_taxonomy(taxonomy_path)
    n = pl.stage_export_labels(grid, clouds, poses, out, tax.ignore_label, jobs)
    click.echo(f"export-labels: wrote {n} label files to {out}")


@main.command("select-reliable")
@_taxonomy_option
@click.option("--grid", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--clouds", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--poses", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--percent", default=20.0, show_default=True, type=float,
              help="Per-class percentage of most confident points to keep.")
def cmd_select_reliable(taxonomy_path, grid, clouds, poses, out, percent):
    """Export the most confident per-class pseudo-ground-truth labels."""
    tax, _ = load_taxonomy(taxonomy_path)
    n = pl.stage_select_reliable(grid, clouds, poses, percent, out, tax.ignore_label)
    click.echo(f"select-reliable: selected {n} points into {out}")


@main.command("fuse-preds")
@click.option("--grid", "grid_in", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--preds", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of predicted painted clouds (.lppc).")
@click.option("--clouds", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--poses", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "grid_out", required=True, type=click.Path())
@click.option("--tau", default=1.0, show_default=True, type=float,
              help="Temperature for the prediction source.")
@click.option("--eps", default=1e-6, show_default=True, type=float)
def cmd_fuse_preds(grid_in, preds, clouds, poses, grid_out, tau, eps):
    """Fuse an external model's predictions into an existing grid."""
    n = pl.stage_fuse_preds(grid_in, preds, clouds, poses, grid_out, tau, eps)
    click.echo(f"fuse-preds: fused {n} predicted points into {grid_out}")


@main.command("eval")
@_taxonomy_option
@click.option("--pred", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--gt", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--eval-mode", default=MODE_IGNORE_UNLABELED, show_default=True,
              type=click.Choice([MODE_IGNORE_UNLABELED, MODE_COUNT_AS_WRONG]))
@click.option("--merge", is_flag=True, help="Apply the taxonomy merge map to both sides.")
def cmd_eval(taxonomy_path, pred, gt, out, eval_mode, merge):
    """Compare predicted labels with ground truth; writes a JSON report."""
    tax, _ = load_taxonomy(taxonomy_path)
    rep = pl.stage_eval(pred, gt, tax, eval_mode, out, use_merge=merge)
    click.echo(json.dumps(rep, indent=2))


@main.command("synth")
@_taxonomy_option
@click.option("--scene", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--sensor", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--noise", default=0.0, show_default=True, type=float,
              help="Per-pixel class flip probability.")
@click.option("--peak", default=1.0, show_default=True, type=float,
              help="Probability mass on the observed class.")
@click.option("--seed", default=0, show_default=True, type=int)
def cmd_synth(taxonomy_path, scene, sensor, out, noise, peak, seed):
    """Generate a synthetic dataset from scene + sensor specs."""
    tax, pm = load_taxonomy(taxonomy_path)
    n = pl.stage_synth(load_scene(scene), load_sensor(sensor), tax, pm, out, noise, peak, seed)
    click.echo(f"synth: wrote {n} frames to {out}")


@main.command("run")
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--voxel-size", default=None, type=float)
@click.option("--threshold", default=None, type=float)
@click.option("--k", default=None, type=int)
@click.option("--gap", default=None, type=float)
@click.option("--tau", default=None, type=float)
@click.option("--percent", default=None, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--jobs", default=None, type=int)
@click.option("--eval-mode", default=None,
              type=click.Choice([MODE_IGNORE_UNLABELED, MODE_COUNT_AS_WRONG]))
def cmd_run(config, voxel_size, threshold, k, gap, tau, percent, seed, jobs, eval_mode):
    """End-to-end: label2d, paint, fuse, smooth, export-labels."""
    cfg = pl.PipelineConfig.from_file(config).with_overrides(
        voxel_size=voxel_size, threshold=threshold, k=k, gap=gap, tau=tau,
        percent=percent, seed=seed, jobs=jobs, eval_mode=eval_mode)
    outputs = pl.run_pipeline(cfg)
    for name, path in outputs.items():
        click.echo(f"run: {name} -> {path}")


if __name__ == "__main__":
    main()
