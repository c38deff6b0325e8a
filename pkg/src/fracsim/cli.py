"""Command-line driver: ``fracsim run | inspect | validate``.

Exit codes: 0 success, 1 usage error, 2 parse or validation error,
3 simulation diverged.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FracsimError, ParseError, SimulationDiverged
from .fileio import CsvLog, build_mesh, export_frame, parse_mesh, parse_scene
from .sim import Simulation, energies, heuristic_dt, stable_dt

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_DIVERGED = 3

log = logging.getLogger("fracsim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracsim", description="Brittle fracture simulation on tetrahedral meshes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log fracture events and progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="simulate a scene and write frames plus a CSV log")
    run.add_argument("--scene", required=True, help="scene file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--frames-per-second", type=float, default=None, help="override io.frames_per_second")
    run.add_argument("--max-steps", type=int, default=None, help="stop after this many steps")

    inspect = sub.add_parser("inspect", help="print mesh statistics")
    inspect.add_argument("mesh", help="mesh file")
    inspect.add_argument("--rho", type=float, default=1000.0, help="density used for the mass report")

    validate = sub.add_parser("validate", help="check a scene and its meshes without running")
    validate.add_argument("--scene", required=True, help="scene file")
    return parser


def cmd_run(args) -> int:
    scene = parse_scene(args.scene)
    fps = scene.output.frames_per_second if args.frames_per_second is None else args.frames_per_second
    if not fps > 0:
        raise ParseError("--frames-per-second must be > 0")
    if args.max_steps is not None and args.max_steps < 0:
        raise ParseError("--max-steps must be >= 0")
    mesh = build_mesh(scene)
    cfg = scene.sim
    sim = Simulation(mesh, cfg)
    steps = cfg.steps if args.max_steps is None else min(cfg.steps, args.max_steps)
    stride = max(1, int(round(1.0 / (fps * cfg.dt))))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = 0
    with CsvLog(out / "log.csv") as csv_log:
        report = energies(mesh, 0.0)
        export_frame(mesh, out, frame, 0.0, scene.output.state_dump)
        csv_log.write(frame, report)
        try:
            for k in range(1, steps + 1):
                report = sim.step()
                if k % stride == 0 or k == steps:
                    frame += 1
                    export_frame(mesh, out, frame, report.time, scene.output.state_dump)
                    csv_log.write(frame, report)
                    log.info(
                        "frame %d t=%.4g nodes=%d elements=%d fragments=%d",
                        frame,
                        report.time,
                        report.node_count,
                        report.element_count,
                        report.fragment_count,
                    )
        except SimulationDiverged as exc:
            print(f"fracsim: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
    print(
        f"{steps} steps, {frame + 1} frames, {sim.fractures} fractures, "
        f"{report.fragment_count} fragments -> {out}"
    )
    return EXIT_OK


def cmd_inspect(args) -> int:
    mesh = parse_mesh(args.mesh)
    idx = mesh.live_elements()
    vol = float(mesh.vol[idx].sum())
    rep = mesh.degeneracy_report()
    lo = mesh.m[mesh.live_nodes()].min(axis=0) if mesh.node_count else np.zeros(3)
    hi = mesh.m[mesh.live_nodes()].max(axis=0) if mesh.node_count else np.zeros(3)
    print(f"nodes        {mesh.node_count}")
    print(f"elements     {mesh.element_count}")
    print(f"boundary     {len(mesh.boundary_faces())} faces")
    print(f"fragments    {mesh.fragment_count()}")
    print(f"bounds       {lo.tolist()} .. {hi.tolist()}")
    print(f"volume       {vol:.6g} m^3")
    print(f"mass         {args.rho * vol:.6g} kg (rho = {args.rho:g})")
    print(f"min volume   {rep['min_volume']:.6g}")
    print(f"max cond     {rep['max_condition']:.6g}")
    print(f"degenerate   {len(rep['degenerate'])}")
    return EXIT_OK


def cmd_validate(args) -> int:
    scene = parse_scene(args.scene)
    mesh = build_mesh(scene)
    dt_ok = stable_dt(mesh, scene.sim.integrator)
    print(f"scene ok: {len(scene.bodies)} bodies, {mesh.node_count} nodes, {mesh.element_count} elements")
    print(f"dt {scene.sim.dt:.4g} s, stable estimate {dt_ok:.4g} s, classical heuristic {heuristic_dt(mesh):.4g} s")
    if scene.sim.dt > dt_ok:
        print("warning: dt exceeds the stability estimate", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    handler = {"run": cmd_run, "inspect": cmd_inspect, "validate": cmd_validate}[args.command]
    try:
        return handler(args)
    except (FracsimError, ValueError) as exc:
        print(f"fracsim: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"fracsim: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
