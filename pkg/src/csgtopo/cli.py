"""Batch command line front end.

    csgtopo run --config cfg.json --out results/ [--seed N]
    csgtopo check-grad --config cfg.json [--entries N] [--step H]
    csgtopo sweep --config cfg.json --param vf_star --values 0.3,0.4,0.5 \
        --out sweep/ [--parallel K]

The config is a JSON document mirroring ProblemSpec; unknown keys are hard
errors.  Every output file is written atomically (temp file + rename) and,
apart from the wall-clock timings file, is byte-identical across reruns of
the same config and seed.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import csg, sensitivity
from .fea import SingularSystemError
from .mma import MmaConfig
from .problem import (ConfigError, Model, OptimizeResult, ProblemSpec, SolverAbort,
                      initialize, optimize)

__all__ = ["main", "execute_run", "load_config", "config_from_dict", "spec_to_dict"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_GRAD = 3

SWEEP_PARAMS = ("vf_star", "tree_depth", "seed", "mesh")

_SPEC_KEYS = {f.name for f in dataclasses.fields(ProblemSpec)}
_MMA_KEYS = {f.name for f in dataclasses.fields(MmaConfig)}
_BOUND_KEYS = ("cx_bounds", "cy_bounds", "theta_bounds", "d_bounds")


# -- configuration -----------------------------------------------------------


def config_from_dict(doc: dict) -> ProblemSpec:
    """Build a ProblemSpec from a parsed config document (strict keys)."""
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    unknown = set(doc) - _SPEC_KEYS
    if unknown:
        raise ConfigError(f"config: unknown keys: {', '.join(sorted(unknown))}")
    kwargs = dict(doc)

    if "mma" in kwargs and kwargs["mma"] is not None:
        sub = kwargs["mma"]
        if not isinstance(sub, dict):
            raise ConfigError("mma: must be an object")
        bad = set(sub) - _MMA_KEYS
        if bad:
            raise ConfigError(f"mma: unknown keys: {', '.join(sorted(bad))}")
        try:
            kwargs["mma"] = MmaConfig(**sub)
        except ValueError as exc:
            raise ConfigError(f"mma: {exc}") from exc
    else:
        kwargs["mma"] = MmaConfig()

    if kwargs.get("frozen_operators"):
        try:
            kwargs["frozen_operators"] = {
                int(k): str(v) for k, v in kwargs["frozen_operators"].items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"frozen_operators: {exc}") from exc
    else:
        kwargs["frozen_operators"] = {}

    for key in _BOUND_KEYS:
        if kwargs.get(key) is not None:
            pair = kwargs[key]
            if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
                raise ConfigError(f"{key}: expected a [lo, hi] pair")
            kwargs[key] = (float(pair[0]), float(pair[1]))

    if kwargs.get("loads") is not None:
        try:
            kwargs["loads"] = [(int(d), float(v)) for d, v in kwargs["loads"]]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"loads: expected [dof, value] pairs: {exc}") from exc
    if kwargs.get("fixed_dofs") is not None:
        kwargs["fixed_dofs"] = [int(d) for d in kwargs["fixed_dofs"]]

    try:
        spec = ProblemSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    spec.validate()
    return spec


def load_config(path) -> ProblemSpec:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from exc
    return config_from_dict(doc)


def spec_to_dict(spec: ProblemSpec) -> dict:
    """Effective configuration with every default resolved, JSON-ready."""
    doc = dataclasses.asdict(spec)
    doc["mma"] = dataclasses.asdict(spec.mma)
    doc["frozen_operators"] = {str(k): v for k, v in spec.frozen_operators.items()}
    for key in _BOUND_KEYS:
        name = key[:-7]  # strip "_bounds"
        doc[key] = list(spec.bounds()[name])
    doc["lx"] = spec.domain_lx
    doc["ly"] = spec.domain_ly
    doc["emin"] = spec.resolved_emin
    if doc["loads"] is not None:
        doc["loads"] = [[d, v] for d, v in doc["loads"]]
    return doc


# -- output writers ----------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def write_history(path: Path, history) -> None:
    lines = ["iter,J,g_v,kkt,step"]
    for r in history:
        lines.append(",".join([str(r.iteration), _fmt(r.J), _fmt(r.g_v),
                               _fmt(r.kkt), _fmt(r.step)]))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_timings(path: Path, history) -> None:
    lines = ["iter,t_projection,t_tree,t_fea_sens,t_total"]
    for r in history:
        lines.append(",".join([str(r.iteration), _fmt(r.t_projection),
                               _fmt(r.t_tree), _fmt(r.t_fea_sens), _fmt(r.t_total)]))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_design_csv(path: Path, field) -> None:
    """Row-major densities, one grid row (fixed y) per line, full precision."""
    grid = field.grid
    rows = field.values.reshape(grid.ny, grid.nx)
    lines = [",".join(_fmt(v) for v in row) for row in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def write_design_pgm(path: Path, field) -> None:
    """8-bit ASCII graymap, 255 = solid; image rows run top to bottom."""
    grid = field.grid
    pix = np.rint(255.0 * field.values.reshape(grid.ny, grid.nx)).astype(int)
    pix = np.clip(pix[::-1], 0, 255)
    lines = ["P2", f"{grid.nx} {grid.ny}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in pix)
    _atomic_write(path, "\n".join(lines) + "\n")


def _tree_nodes(result: OptimizeResult) -> list[dict]:
    tree = result.snapped_tree
    relaxed = result.tree
    nodes = []
    for k in range(tree.n_nodes):
        if tree.is_leaf(k):
            p = result.params[tree.leaf_primitive(k)]
            nodes.append({
                "id": k, "kind": "leaf", "primitive": tree.leaf_primitive(k),
                "params": {"cx": p.cx, "cy": p.cy, "theta": p.theta,
                           "d": list(p.d)},
            })
        else:
            nodes.append({
                "id": k, "kind": "internal", "children": list(tree.children(k)),
                "operator": tree.operator_name(k),
                "weights": list(relaxed.weights[k]),
                "frozen": k in tree.frozen,
            })
    return nodes


def _pruned_nodes(result: OptimizeResult) -> list[dict] | None:
    pruned = result.pruned_tree
    if pruned.is_empty:
        return None
    nodes = []

    def visit(node) -> int:
        nid = len(nodes)
        nodes.append(None)  # reserve slot so ids follow preorder
        if node.is_leaf:
            p = result.params[node.primitive]
            nodes[nid] = {"id": nid, "kind": "leaf", "primitive": node.primitive,
                          "params": {"cx": p.cx, "cy": p.cy, "theta": p.theta,
                                     "d": list(p.d)}}
        else:
            left = visit(node.left)
            right = visit(node.right)
            nodes[nid] = {"id": nid, "kind": "internal", "children": [left, right],
                          "operator": csg.OPERATOR_NAMES[node.operator]}
        return nid

    visit(pruned.root)
    return nodes


def write_tree_json(path: Path, result: OptimizeResult) -> None:
    doc = {
        "depth": result.snapped_tree.depth,
        "nodes": _tree_nodes(result),
        "pruned": {"empty": result.empty_design, "nodes": _pruned_nodes(result)},
    }
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_summary(path: Path, result: OptimizeResult) -> None:
    doc = {
        "J_relaxed": result.J,
        "J_snapped": result.J_snapped,
        "g_v": result.g_v,
        "g_v_snapped": result.g_v_snapped,
        "iterations": result.iterations,
        "convergence": result.reason,
        "empty_design": result.empty_design,
    }
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_config(path: Path, spec: ProblemSpec) -> None:
    _atomic_write(path, json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n")


def execute_run(spec: ProblemSpec, outdir: Path) -> dict:
    """Run one optimization and write every artifact; returns the summary."""
    outdir.mkdir(parents=True, exist_ok=True)
    write_config(outdir / "config.json", spec)
    try:
        result = optimize(spec)
    except SolverAbort as exc:
        write_history(outdir / "history.csv", exc.history)
        write_timings(outdir / "timings.csv", exc.history)
        raise
    write_history(outdir / "history.csv", result.history)
    write_timings(outdir / "timings.csv", result.history)
    write_design_csv(outdir / "design.csv", result.field_snapped)
    write_design_pgm(outdir / "design.pgm", result.field_snapped)
    write_tree_json(outdir / "tree.json", result)
    write_summary(outdir / "summary.json", result)
    if result.empty_design:
        log.warning("final design is empty after pruning")
    return json.loads((outdir / "summary.json").read_text())


# -- subcommands -------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        spec = load_config(args.config)
        if args.seed is not None:
            spec = dataclasses.replace(spec, seed=args.seed)
            spec.validate()
        summary = execute_run(spec, Path(args.out))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverAbort as exc:
        print(f"error: solver failed at iteration {exc.iteration}: {exc}",
              file=sys.stderr)
        return EXIT_SOLVER
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_check_grad(args) -> int:
    try:
        if args.step is not None and args.step <= 0:
            raise ConfigError(f"step: must be positive, got {args.step}")
        if args.entries is not None and args.entries < 1:
            raise ConfigError(f"entries: must be >= 1, got {args.entries}")
        spec = load_config(args.config)
        model = Model(spec)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    z = initialize(spec)
    step = args.step if args.step is not None else 1e-6

    if args.corrupt_entry is not None:
        model = _CorruptedModel(model, args.corrupt_entry)

    try:
        entries = sensitivity.fd_check(model, z, step=step)
    except SingularSystemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    n_show = args.entries if args.entries is not None else 10

    def rel_col(rel: float, fd: float) -> str:
        # below the FD floor the quotient is difference noise, not an error
        return f"{rel:>12.3e}" if abs(fd) > sensitivity.FD_FLOOR else f"{'-':>12}"

    print(f"{'index':>6} {'label':>12} {'kind':>4} {'analytic':>24} "
          f"{'fd':>24} {'rel_err':>12}")
    shown = 0
    for e in entries:
        if shown >= n_show:
            break
        if e.skipped:
            print(f"{e.index:>6} {e.label:>12} frozen entry: skipped")
            shown += 1
            continue
        print(f"{e.index:>6} {e.label:>12} {'J':>4} {e.analytic_j:>24.16e} "
              f"{e.fd_j:>24.16e} {rel_col(e.rel_err_j, e.fd_j)}")
        print(f"{'':>6} {'':>12} {'g_v':>4} {e.analytic_g:>24.16e} "
              f"{e.fd_g:>24.16e} {rel_col(e.rel_err_g, e.fd_g)}")
        shown += 1

    checked = [e for e in entries if not e.skipped]
    worst = max((e.max_rel_err for e in checked), default=0.0)
    print(f"worst relative error over {len(checked)} checked entries: {worst:.3e}")
    return EXIT_OK if worst < 1e-3 else EXIT_GRAD


class _CorruptedModel:
    """Test hook wrapping a model with one deliberately wrong gradient entry."""

    def __init__(self, model: Model, entry: int):
        self._model = model
        self._entry = entry
        self.full_size = model.full_size
        self.full_to_free = model.full_to_free
        self.label_for_index = model.label_for_index
        self.evaluate = model.evaluate

    def forward_gradients(self, z):
        j_val, g_val, dj, dg = self._model.forward_gradients(z)
        dj = np.array(dj)
        dj[self._entry] = dj[self._entry] * 1.1 + 1e-3
        return j_val, g_val, dj, dg


def _apply_sweep_value(doc: dict, param: str, token: str) -> dict:
    doc = dict(doc)
    if param == "vf_star":
        doc["vf_star"] = float(token)
    elif param == "tree_depth":
        doc["tree_depth"] = int(token)
    elif param == "seed":
        doc["seed"] = int(token)
    elif param == "mesh":
        try:
            nx, ny = token.lower().split("x")
            doc["nx"], doc["ny"] = int(nx), int(ny)
        except ValueError as exc:
            raise ConfigError(f"mesh: expected NXxNY, got {token!r}") from exc
    else:
        raise ConfigError(
            f"param: unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}")
    return doc


def _sweep_one(doc: dict, outdir_str: str) -> dict:
    spec = config_from_dict(doc)
    return execute_run(spec, Path(outdir_str))


def cmd_sweep(args) -> int:
    try:
        with open(args.config) as fh:
            base_doc = json.load(fh)
        config_from_dict(base_doc)  # validate before launching anything
        tokens = [tok for tok in args.values.split(",") if tok]
        if not tokens:
            raise ConfigError("values: empty list")
        jobs = []
        for tok in tokens:
            doc = _apply_sweep_value(base_doc, args.param, tok)
            config_from_dict(doc)
            jobs.append((tok, doc, Path(args.out) / f"{args.param}={tok}"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    summaries = {}
    try:
        if args.parallel and args.parallel > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=args.parallel) as pool:
                futures = {tok: pool.submit(_sweep_one, doc, str(path))
                           for tok, doc, path in jobs}
                for tok, fut in futures.items():
                    summaries[tok] = fut.result()
        else:
            for tok, doc, path in jobs:
                summaries[tok] = _sweep_one(doc, str(path))
    except SolverAbort as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    lines = ["value,J_relaxed,J_snapped,g_v"]
    for tok, _, _ in jobs:
        s = summaries[tok]
        lines.append(",".join([tok, _fmt(s["J_relaxed"]), _fmt(s["J_snapped"]),
                               _fmt(s["g_v"])]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "pareto.csv", "\n".join(lines) + "\n")
    print((out / "pareto.csv").read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csgtopo",
        description="Topology optimization over polygon primitives combined "
                    "through a differentiable Boolean operation tree.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one optimization")
    run.add_argument("--config", required=True, help="JSON configuration file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.set_defaults(func=cmd_run)

    grad = sub.add_parser("check-grad", help="verify gradients by finite differences")
    grad.add_argument("--config", required=True)
    grad.add_argument("--entries", type=int, default=None,
                      help="number of worst rows to print (default 10)")
    grad.add_argument("--step", type=float, default=None,
                      help="central difference step (default 1e-6)")
    grad.add_argument("--corrupt-entry", type=int, default=None,
                      help=argparse.SUPPRESS)
    grad.set_defaults(func=cmd_check_grad)

    sweep = sub.add_parser("sweep", help="run a series of configs varying one parameter")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sweep.add_argument("--values", required=True,
                       help="comma separated values, e.g. 0.3,0.4 or 60x30,80x40")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--parallel", type=int, default=None,
                       help="run up to K sweeps as parallel processes")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
