"""Build a microstructure library, fit a latent-variable surrogate to it, and
use the surrogate to design multiscale structures.

Commands:
  gen-library   rasterize the six unit-cell classes over a range of volume
                fractions and homogenize them (writes <out>/library/)
  fit           fit the multi-response latent-variable GP to the library
                dataset and run the repeated train/test validation
                (writes <out>/model/)
  optimize      run the multiclass design (stage 1, stage 2, assembly) or a
                single-class baseline on a benchmark problem
                (writes <out>/optimize/)
  render        re-render an optimized field to PNG images
                (writes <out>/render/)

Usage: lvto COMMAND [OPTIONS]

Options:
  --config PATH       JSON run config, merged over the built-in defaults
  --seed N            random seed (overrides the config)
  --out DIRECTORY     output root (default: out)
  --set KEY=VALUE     override one config key, e.g. --set optimize.mode=single
                      or --set fit.starts=4 (repeatable, values are parsed
                      as JSON, anything else is taken as a string)
  --field PATH        field CSV to render (render only)

Less common options:
  --debug             enable debug logging
  --verbose           enable verbose output
  --perf              print performance timers

Miscellaneous:
  --version           show the version and exit
  --help              show this message and exit

Exit codes:
  0 success (optimize: converged), 2 optimize stopped at the iteration cap,
  1 error

Examples:
- Full pipeline with the defaults:
    lvto gen-library && lvto fit && lvto optimize && lvto render

- Single-class baseline on the multi-load beam:
    lvto optimize --set optimize.mode=single --set optimize.problem.name=mbb-multi
"""

import os
import sys

import numpy as np

from lvto import fea, gp, homog, microlib, topopt
from lvto.config.loader import Config, ConfigError
from lvto.output import basic
from lvto.problems import make_problem
from lvto.utils import (
    LogLevel,
    LvtoError,
    atomic_write,
    get_version,
    is_terminal,
    logger,
    simple_stderr,
    simple_stdout,
    timer,
    timings,
)

stdout, stderr = simple_stdout, simple_stderr

COMMANDS = ("gen-library", "fit", "optimize", "render")


class BadParameterError(Exception):
    pass


def get_status():
    if is_terminal(sys.stderr):
        from lvto.output.fancy import status

        return status
    else:
        return basic.NoopStatus()


def parse_args(args: list[str]) -> Config:
    config = Config()
    args_iter = iter(args)

    for arg in args_iter:
        match arg:
            case "--version":
                raise SystemExit(f"lvto {get_version()}")
            case "--help":
                raise SystemExit(__doc__)
            case "--perf":
                config.perf = True
                logger.enable(console=stderr, level=LogLevel.TRACE)
            case "--debug":
                config.debug = True
            case "--verbose":
                config.verbose = True
            case "--config" | "--seed" | "--out" | "--set" | "--field" as flag:
                value = next(args_iter, None)
                if value is None:
                    raise BadParameterError(f"missing value after {flag}")
                match flag:
                    case "--config":
                        config.config_path = value
                    case "--seed":
                        config.seed_override = int(value)
                    case "--out":
                        config.out_dir = value
                    case "--set":
                        config.assignments.append(value)
                    case "--field":
                        config.field_path = value
            case _:
                if arg.startswith("--"):
                    raise BadParameterError(f"unknown argument: {arg}")

                if config.command:
                    raise BadParameterError(f"unexpected argument: {arg}")

                if arg not in COMMANDS:
                    expected = ", ".join(COMMANDS)
                    raise BadParameterError(f"unknown command: {arg} (expected one of {expected})")

                config.command = arg

    if not config.command:
        raise BadParameterError("no command provided")

    if config.config_path and not os.path.isfile(config.config_path):
        raise BadParameterError(f"config file does not exist: {config.config_path}")

    if config.seed_override is not None and config.seed_override < 0:
        raise BadParameterError(f"invalid seed: {config.seed_override}")

    if config.field_path and config.command != "render":
        raise BadParameterError("--field only applies to render")

    if os.path.exists(config.out_dir) and not os.path.isdir(config.out_dir):
        raise BadParameterError(f"output path is not a directory: {config.out_dir}")

    return config


def run_meta(config: Config) -> basic.Meta:
    return {"version": get_version(), "config": config.hash, "seed": config.seed}


def cmd_gen_library(config: Config) -> int:
    lib = config.section("library")
    mat = homog.BaseMaterial(**config.section("material"))
    meta = run_meta(config)

    with timer("build_library"):
        samples = microlib.build_library(
            samples_per_class=lib["samples_per_class"],
            vf_range=tuple(lib["vf_range"]),
            resolution=lib["resolution"],
            tol=lib["vf_tol"],
            min_width_px=lib["min_width_px"],
        )

    with timer("homogenize_library"):
        dataset = homog.homogenize_library(samples, mat, workers=config.workers)

    manifest: list[list[object]] = []
    for sample in samples:
        grid_file = os.path.join("grids", f"{sample.name}.pgm")
        atomic_write(config.path("library", grid_file), basic.pgm_bytes(sample.grid.cells, meta))
        row = [sample.class_id, sample.target_vf, sample.achieved_vf, grid_file, sample.thickness]
        manifest.append(row)

    header = ["class_id", "target_vf", "achieved_vf", "grid_file", "thickness"]
    basic.write_csv(config.path("library", "manifest.csv"), header, manifest, meta)
    basic.write_dataset(config.path("library", "dataset.csv"), dataset, meta)

    stderr.print(f"wrote {len(dataset)} samples to {config.path('library')}")
    return 0


def _show_timings():
    rows = timings.rows()
    if is_terminal(sys.stderr):
        from lvto.output.fancy import get_timing_table

        stderr.print(get_timing_table(rows))
    else:
        basic.print_timings(rows, console=stderr)


def _show_validation(report: gp.ValidationReport):
    assembled = None if report.assembled_mse is None else report.assembled_mse.mean(axis=0).tolist()
    if is_terminal(sys.stderr):
        from lvto.output.fancy import get_validation_table

        table = get_validation_table(report.mean.tolist(), report.variance.tolist(), assembled)
        stderr.print(table)
    else:
        basic.print_validation(
            report.mean.tolist(), report.variance.tolist(), assembled, console=stderr
        )


def cmd_fit(config: Config) -> int:
    settings = config.section("fit")
    meta = run_meta(config)
    dataset_path = config.section("paths")["dataset"] or config.path("library", "dataset.csv")
    dataset = basic.read_dataset(dataset_path)

    common = {"starts": settings["starts"], "nugget": settings["nugget"], "workers": config.workers}

    status = get_status()
    status.start()
    try:
        status.update("fitting latent-variable model")
        with timer("fit"):
            model = gp.fit(dataset, latent_dim=settings["latent_dim"], seed=config.seed, **common)

        status.update("validating")
        with timer("validate"):
            report = gp.validate(
                dataset,
                repetitions=settings["repetitions"],
                train_fraction=settings["train_fraction"],
                seed=config.seed,
                assembled=settings["assembled_baseline"],
                **common,
            )
    finally:
        status.stop()

    basic.write_json(config.path("model", "model.json"), model.to_dict(meta))

    latent_header = ["class_id", "z1", "z2"]
    basic.write_csv(config.path("model", "latent.csv"), latent_header, model.export_latent(), meta)

    rho, n_grid = settings["latent_sample_rho"], settings["latent_samples"]
    samples = gp.sample_latent(model, rho=rho, n_grid=n_grid)
    samples_header = ["z1", "z2", *fea.COMPONENTS]
    basic.write_csv(config.path("model", "latent_samples.csv"), samples_header, samples, meta)

    header = ["component", "mse_mean", "mse_var"]
    columns = [fea.COMPONENTS, report.mean, report.variance]
    if report.assembled_mse is not None:
        header += ["assembled_mse_mean", "assembled_mse_var"]
        columns += [report.assembled_mse.mean(axis=0), report.assembled_mse.var(axis=0, ddof=1)]
    table_rows = zip(*columns, strict=True)
    basic.write_csv(config.path("model", "validation.csv"), header, table_rows, meta)

    rows = ([k, seed, *report.mse[k]] for k, seed in enumerate(report.seeds))
    header = ["repetition", "seed", *fea.COMPONENTS]
    basic.write_csv(config.path("model", "validation_splits.csv"), header, rows, meta)

    _show_validation(report)
    return 0


def build_problem(config: Config, model: gp.MrLvgpModel) -> topopt.TopOptProblem:
    opt = config.section("optimize")
    preset = opt["problem"]
    bench = make_problem(
        preset["name"], preset["nx"], preset["ny"], cutout=preset["cutout"], load=preset["load"]
    )
    vmax = bench.vmax if opt["vmax"] is None else opt["vmax"]

    lo, _ = model.data.x_range
    if opt["rho_bounds"][0] < lo:
        logger.warning(f"rho_min {opt['rho_bounds'][0]} is below the library range (from {lo:.4f})")

    return topopt.TopOptProblem(
        bench.mesh,
        bench.loads,
        model,
        vmax,
        rho_bounds=tuple(opt["rho_bounds"]),
        z_margin=opt["z_margin"],
        penalty_lambda=opt["penalty"]["lambda"],
        gamma=opt["penalty"]["gamma_override"],
        gamma_schedule=opt["penalty"]["gamma_schedule"],
        filter_radius=opt["filter_radius"],
        filter_enabled=opt["filter_enabled"],
        volume_on_filtered=opt["volume_on_filtered"],
        tol=opt["tol"],
        max_iter=opt["max_iter"],
        stiffness_floor=opt["stiffness_floor"],
        mma=opt["mma"],
    )


def field_rows(problem: topopt.TopOptProblem, result: topopt.StageResult) -> list[list[object]]:
    mesh = problem.mesh
    field, ev = result.field, result.evaluation
    assert field.classes is not None

    stress = ev.f[:, None] * fea.element_stress(ev.Y, ev.solution.ue[0])
    peak = np.abs(stress[problem.active]).max(axis=0)
    stress = stress / np.where(peak > 0, peak, 1.0)
    energy = ev.energy_density

    k = {int(e): i for i, e in enumerate(problem.active)}
    ex, ey = mesh.element_indices()
    rows: list[list[object]] = []
    for e in range(mesh.n_elements):
        i = k.get(e)
        if i is None:
            values = [0, 0.0, 0.0, 0.0, 0.0, 0, 0.0, 0.0, 0.0, 0.0]
        else:
            values = [
                1, field.rho[i], field.rho_phys[i], field.z_phys[i, 0], field.z_phys[i, 1],
                int(field.classes[i]), energy[e], *stress[e],
            ]  # fmt: skip
        rows.append([e, int(ex[e]), int(ey[e]), *values])
    return rows


def _usage_rows(classes: np.ndarray, levels: list[int]) -> list[tuple[str, int, float]]:
    return [(microlib.get_class(c).name, n, p) for c, n, p in topopt.class_usage(classes, levels)]


def cmd_optimize(config: Config) -> int:
    opt = config.section("optimize")
    meta = run_meta(config)
    model_path = config.section("paths")["model"] or config.path("model", "model.json")
    model = gp.MrLvgpModel.from_dict(basic.read_json(model_path))
    problem = build_problem(config, model)

    stages: list[topopt.StageResult] = []
    match opt["mode"]:
        case "multi":
            stages.append(topopt.stage1(problem))
            stages.append(topopt.stage2(problem, stages[0]))
        case "single":
            stages.append(topopt.run_single_class(problem, opt["single_class"]))
        case mode:
            raise ConfigError(f"unknown optimize.mode {mode!r}, expected multi or single")

    for result in stages:
        header = ["iter", "c", "volume", "step"]
        rows = (row.as_tuple() for row in result.trace)
        basic.write_csv(config.path("optimize", f"trace_{result.stage}.csv"), header, rows, meta)

    final = stages[-1]
    field = final.field
    assert field.classes is not None

    rows = field_rows(problem, final)
    basic.write_csv(config.path("optimize", "field.csv"), basic.FieldTable.HEADER, rows, meta)

    table = basic.FieldTable.from_values(rows)
    vtk_fields = ("active", "rho_phys", "z1", "z2", "class", "energy")
    vtk = basic.vtk_text(
        problem.mesh,
        {name: table.column(name) for name in vtk_fields},
        meta,
    )
    atomic_write(config.path("optimize", "field.vtk"), vtk)

    basic.write_csv(
        config.path("optimize", "latent_scatter.csv"),
        ["kind", "id", "z1", "z2"],
        topopt.latent_scatter(problem, field),
        meta,
    )

    usage = _usage_rows(field.classes, problem.levels)
    usage_header = ["class", "elements", "percent"]
    basic.write_csv(config.path("optimize", "class_usage.csv"), usage_header, usage, meta)

    from lvto.output.render import structure_png

    resolution = config.section("render")["pixels_per_element"]
    with timer("assemble_structure"):
        image = topopt.assemble_structure(problem.mesh, field.classes, field.rho_phys, resolution)
    atomic_write(config.path("optimize", "structure.png"), structure_png(image, meta))

    worst = max((r.status for r in stages), key=lambda s: s.exit_code)
    summary = [(r.stage, r.c, r.iterations, r.status) for r in stages]

    if is_terminal(sys.stderr):
        from lvto.output.fancy import get_result_table, get_usage_table

        stderr.print(get_result_table(summary))
        stderr.print(get_usage_table(usage))
    else:
        lines = [(s, f"c={c:.6g} iterations={n} {st.value}") for s, c, n, st in summary]
        basic.print_summary(lines, stderr)
        basic.print_usage(usage, stderr)

    stdout.print(f"{final.c!r}")
    return worst.exit_code


def cmd_render(config: Config) -> int:
    from lvto.output.render import class_map_png, density_png, structure_png

    meta = run_meta(config)
    default = config.path("optimize", "field.csv")
    path = config.field_path or config.section("paths")["field"] or default
    table = basic.FieldTable.read(path)

    nx, ny = table.nx, table.ny
    mesh = fea.MacroMesh(nx, ny, table.column("active", int).astype(bool))
    classes_all = table.column("class", int)
    rho_all = table.column("rho_phys")
    classes = classes_all[mesh.active]

    try:
        for c in np.unique(classes).tolist():
            microlib.get_class(c)
    except KeyError as err:
        raise basic.MalformedFileError(f"{path}: {err.args[0]}") from err

    levels = [cls.id for cls in microlib.CLASSES]
    usage = {c: p for c, _, p in topopt.class_usage(classes, levels)}
    used = [c for c in levels if usage[c] > 0]
    labels = {c: f"{microlib.get_class(c).name} ({usage[c]:.1f}%)" for c in used}

    resolution = config.section("render")["pixels_per_element"]
    image = topopt.assemble_structure(mesh, classes, rho_all[mesh.active], resolution)

    atomic_write(config.path("render", "structure.png"), structure_png(image, meta))
    atomic_write(
        config.path("render", "classes.png"),
        class_map_png(nx, ny, mesh.active, classes_all, used, labels, meta),
    )
    density = density_png(nx, ny, mesh.active, rho_all, meta)
    atomic_write(config.path("render", "density.png"), density)

    stderr.print(f"rendered {nx}x{ny} field to {config.path('render')}")
    return 0


def main(args: list[str] | None = None) -> int:
    global stdout
    global stderr

    if args is None:
        args = sys.argv[1:]

    timings.clear()

    try:
        with timer("parse_args"):
            config = parse_args(args)
    except BadParameterError as err:
        stderr.print(f"error: {err}")
        return 1
    except ValueError as err:
        stderr.print(f"error: invalid argument: {err}")
        return 1
    except SystemExit as err:
        stdout.print(err)
        return 0

    # potentially replace with rich consoles if we're in an interactive terminal
    with timer("setup_consoles"):
        config.setup_consoles()

    stdout, stderr = config.stdout, config.stderr
    logger.enable(console=stderr, level=LogLevel.from_flags(config.debug, config.perf))

    try:
        config.resolve()
    except ConfigError as err:
        stderr.print(f"error: {err}")
        return 1

    if config.verbose:
        source = config.config_path or "defaults"
        where = f"output in {config.out_dir}"
        stderr.print(f"config {config.hash} ({source}), seed {config.seed}, {where}")

    commands = {
        "gen-library": cmd_gen_library,
        "fit": cmd_fit,
        "optimize": cmd_optimize,
        "render": cmd_render,
    }

    try:
        with timer(config.command or ""):
            return commands[config.command or ""](config)
    except (LvtoError, ValueError, OSError) as err:
        stderr.print(f"error: {err}")
        return 1
    finally:
        if config.perf:
            _show_timings()
