"""The faultsim console script

    faultsim run --preset spring_slider --max-time 5 --refinements 3
    faultsim run --config my_scenario.yaml --output-dir out
    faultsim mesh --preset layered_5body

Exit codes are 0 for success, 2 for bad input and 3 when the simulation
itself fails. Set FAULTSIM_LOG to DEBUG, INFO, WARNING or ERROR for more or
less output.
"""
import argparse
import json
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from faultsim.exceptions import (
    CheckpointError,
    ConfigError,
    ConvergenceError,
    InvalidSpecError,
    StepFailureError,
)
from faultsim.logs import configure_from_env, get_module_logger
from faultsim.mesh import RefinementOverflowError, dump_triangulation
from faultsim.mortar import DegenerateGeometryError, NoContactError
from faultsim.scenario import (
    PRESETS,
    ScenarioConfig,
    build_hierarchy,
    dump_config,
    load_config,
    preset,
    run_scenario,
)
from faultsim.storage import RunStorage

logger = get_module_logger("cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

CONFIG_ERRORS = (
    ConfigError,
    InvalidSpecError,
    ValidationError,
    CheckpointError,
    RefinementOverflowError,
)
SOLVER_ERRORS = (
    ConvergenceError,
    StepFailureError,
    NoContactError,
    DegenerateGeometryError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faultsim",
        description="Earthquake cycles on layered 2D fault systems",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run a simulation")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", type=Path, help="YAML scenario file")
    source.add_argument(
        "--preset", choices=sorted(PRESETS), help="Builtin scenario"
    )
    run.add_argument(
        "--output-dir", type=Path, help="Overrides output.directory"
    )
    run.add_argument(
        "--max-time",
        type=float,
        help="Stop at this time (s) instead of T0. 0 writes the initial "
        "record only",
    )
    run.add_argument(
        "--refinements",
        type=int,
        help="Stop mesh refinement after this many rounds",
    )
    run.add_argument(
        "--checkpoint", type=Path, help="Write checkpoints to this file"
    )
    run.add_argument("--resume", type=Path, help="Resume from a checkpoint")

    mesh = commands.add_parser(
        "mesh", help="Build and dump the mesh hierarchy of a scenario"
    )
    mesh_source = mesh.add_mutually_exclusive_group(required=True)
    mesh_source.add_argument("--config", type=Path)
    mesh_source.add_argument("--preset", choices=sorted(PRESETS))
    mesh.add_argument("--output-dir", type=Path)
    mesh.add_argument("--refinements", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    """Config from file or preset with the command line overrides applied

    Raises
    ------
    ConfigError
        If the file cannot be read or the overrides make it invalid
    """
    if args.config is not None:
        config = load_config(args.config)
    else:
        config = preset(args.preset)
    content = config.model_dump()
    if getattr(args, "output_dir", None) is not None:
        content["output"]["directory"] = str(args.output_dir)
    if getattr(args, "refinements", None) is not None:
        content["mesh"]["rounds"] = args.refinements
    try:
        return ScenarioConfig.model_validate(content)
    except ValidationError as e:
        raise ConfigError(f"Invalid command line override: {e}") from e


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    directory = Path(config.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    dump_config(config, directory / "config.yaml")
    with RunStorage(directory, append=args.resume is not None) as storage:
        outputs = run_scenario(
            config,
            storage=storage,
            checkpoint=args.checkpoint,
            resume=args.resume,
            max_time=args.max_time,
        )
    summary = outputs.summary()
    logger.info(f"Wrote results to {directory}")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def mesh(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    directory = Path(config.output.directory)
    hierarchy = build_hierarchy(config)
    for level, meshes in enumerate(hierarchy.levels):
        path = directory / f"mesh_level_{level}.txt"
        dump_triangulation(meshes, path)
        print(f"level {level}: {hierarchy.vertex_count(level)} vertices")
    logger.info(f"Wrote {len(hierarchy)} mesh levels to {directory}")
    return EXIT_OK


COMMANDS = {"run": run, "mesh": mesh}


def main(argv: Optional[List[str]] = None) -> int:
    configure_from_env()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CONFIG_ERRORS as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except SOLVER_ERRORS as e:
        logger.error(f"Simulation failed: {e}")
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
