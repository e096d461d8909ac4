"""fit, shots, report and rerun: working with data and manifests already on disk."""
import argparse
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from components.command_support import (
    COMMANDS, command, execute, output_parent, recorded_args, require,
)
from core.calculator import ShotBudgetCalculator
from core.config import build_readout
from core.errors import EXIT_OK, UsageError
from core.fitting import MODELS, fit, fit_power_dependence, get_model
from core.output import (
    CommandOutput, STDOUT, config_from_manifest, load_manifest, read_csv, sibling, write_outputs,
)
from core.pdf_generator import RunReportGenerator
from core.qnd import expected_flip_fraction

logger = logging.getLogger(__name__)


def _column(table, name, position, flag):
    if name is not None:
        if name not in table.columns:
            raise UsageError(f"{flag}: no column {name!r} in {list(table.columns)}")
        return name
    default = "x" if position == 0 else "y"
    if default in table.columns:
        return default
    if len(table.columns) <= position:
        raise UsageError(f"need at least {position + 1} columns")
    return table.columns[position]


def _numeric(table, name):
    try:
        return table[name].to_numpy(dtype=float)
    except (TypeError, ValueError):
        raise UsageError(f"column {name!r} is not numeric")


def _init(text):
    if text is None:
        return None
    try:
        init = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--init is not valid JSON: {exc}")
    if not isinstance(init, (dict, list)):
        raise UsageError("--init must be a JSON object or list")
    return init


@command("fit")
def fit_command(args, config):
    try:
        table = read_csv(args.csv)
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.csv}")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise UsageError(f"cannot read {args.csv}: {exc}")
    x_col = _column(table, args.x, 0, "--x")
    y_col = _column(table, args.y, 1, "--y")
    sigma_col = args.sigma
    if sigma_col is None and "sigma" in table.columns:
        sigma_col = "sigma"
    if sigma_col is not None and sigma_col not in table.columns:
        raise UsageError(f"--sigma: no column {sigma_col!r}")
    xs = _numeric(table, x_col)
    ys = _numeric(table, y_col)
    sigmas = _numeric(table, sigma_col) if sigma_col else None
    init = _init(args.init)

    if get_model(args.model).NAME == "saturable":
        dependence = fit_power_dependence(xs, ys, sigmas, init)
        result, payload = dependence.result, dependence.to_dict()
    else:
        result = fit(args.model, xs, ys, sigmas, init)
        payload = result.to_dict()
    payload.update({"x_column": x_col, "y_column": y_col, "sigma_column": sigma_col, "n_points": int(xs.size)})

    fitted = result.value(xs)
    curve = pd.DataFrame({"x": xs, "y": ys, "fit": fitted, "residual": ys - fitted})
    return CommandOutput(curve, result=payload)


@command("shots")
def shots(args, config):
    require(0 < args.population <= 1, "--population must lie in (0, 1]")
    require(0 < args.p_bloch <= 1, "--p-bloch must lie in (0, 1]")
    require(0 < args.alpha < 1 and 0 < args.power < 1, "--alpha and --power must lie in (0, 1)")
    require(args.points >= 1, "--points must be >= 1")
    F = build_readout(config).implied_fidelity()
    baseline = expected_flip_fraction(F, 0.0)
    line = expected_flip_fraction(F, args.population, args.p_bloch)
    n = ShotBudgetCalculator.shots_for_population(F, args.population, args.p_bloch, args.alpha, args.power)
    if args.target_stderr is not None:
        require(args.target_stderr > 0, "--target-stderr must be > 0")
        n = max(n, ShotBudgetCalculator.shots_for_stderr(line, args.target_stderr))
    row = {
        "fidelity": F,
        "population": args.population,
        "p_bloch": args.p_bloch,
        "baseline": baseline,
        "line": line,
        "shots_per_point": n,
        "stderr_at_line": float(np.sqrt(line * (1 - line) / n)),
        "points": args.points,
        "runtime_s": ShotBudgetCalculator.estimate_runtime(n, args.points, args.shot_rate),
    }
    return CommandOutput(pd.DataFrame([row]))


def report(args):
    manifest = load_manifest(args.manifest)
    table = None
    output = manifest.get("output", STDOUT)
    if output != STDOUT and Path(output).exists():
        table = read_csv(output)
    else:
        logger.warning("result table %s not found; report lists parameters only", output)
    if args.out:
        pdf_path = Path(args.out)
    elif output != STDOUT:
        pdf_path = sibling(output, ".pdf")
    else:
        pdf_path = Path(args.manifest).with_suffix(".pdf")
    pdf = RunReportGenerator.create_run_pdf(manifest, table)
    pdf_path.parent.mkdir(parents=True, exist_ok=True)
    pdf_path.write_bytes(pdf.getvalue())
    logger.info("wrote %s", pdf_path)
    return EXIT_OK


def rerun(args):
    """Re-execute a recorded command with the recorded configuration"""
    manifest = load_manifest(args.manifest)
    name = manifest["command"]
    if name not in COMMANDS:
        raise UsageError(f"manifest names unknown command {name!r}")
    config = config_from_manifest(manifest)
    out = args.out or manifest.get("output", STDOUT)
    recorded = argparse.Namespace(**manifest["args"], command=name, out=out, config=None)
    logger.info("rerun %s: seed %d, %d shots per point", name, config.seed, config.n_shots)
    output = COMMANDS[name](recorded, config)
    write_outputs(name, recorded_args(recorded), config, output, out)
    return EXIT_OK


def register(subparsers):
    out = output_parent()

    p = subparsers.add_parser("fit", parents=[out], help="least-squares fit of a model to CSV data")
    p.add_argument("model", choices=sorted(MODELS))
    p.add_argument("csv")
    p.add_argument("--x", help="x column (default: 'x', else the first column)")
    p.add_argument("--y", help="y column (default: 'y', else the second column)")
    p.add_argument("--sigma", help="per-point uncertainty column (default: 'sigma' if present)")
    p.add_argument("--init", help='starting values as JSON, e.g. \'{"tau": 1e-4}\'')
    p.set_defaults(func=execute)

    p = subparsers.add_parser("shots", parents=[out], help="shots per point needed to resolve a line")
    p.add_argument("--fidelity", type=float, help="readout fidelity F (default: configured)")
    p.add_argument("--population", type=float, default=0.7, help="population carrying the line")
    p.add_argument("--p-bloch", dest="p_bloch", type=float, default=1.0, help="flip probability of the rf pulse")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level")
    p.add_argument("--power", type=float, default=0.8, help="statistical power")
    p.add_argument("--target-stderr", dest="target_stderr", type=float,
                   help="also resolve the line amplitude to this standard error")
    p.add_argument("--points", type=int, default=1, help="grid points in the scan")
    p.add_argument("--shot-rate", dest="shot_rate", type=float, default=500.0, help="shots per second")
    p.set_defaults(func=execute)

    p = subparsers.add_parser("report", help="PDF summary of a run manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="PDF path (default: next to the result CSV)")
    p.set_defaults(func=report)

    p = subparsers.add_parser("rerun", help="regenerate a CSV from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="CSV path (default: the recorded output)")
    p.set_defaults(func=rerun)
