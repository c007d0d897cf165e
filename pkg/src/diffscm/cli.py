"""Command line interface.

    diffscm generate  --graph chain --sem NLIN --n 2000 --out data/
    diffscm train     --data data/data.csv --scm data/scm.json --out model.json
    diffscm query     --model model.json --mode int --do x1=0.5 --n 100 --out q.csv
    diffscm benchmark --graph chain --sem NLIN --seeds 0,1,2,3,4 --out bench/
    diffscm verify    --out verify/
    diffscm report    --report bench/report.json --scale100

Nodes are addressed by name (``x2``) or 1-based index (``2``). Every command
takes ``--seed``, ``--out``, ``--jobs`` and ``--config``. A config file is
key=value text; keys in ``[common]`` and in the section named after the command
become defaults, and flags override them. On failure a JSON error object is
printed to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from diffscm.graph import GRAPH_KINDS, CausalGraph
from diffscm.io import atomic_write, format_csv, noise_column_names, read_dataset, read_noise
from diffscm.rng import substream
from diffscm.scm import SEM_KINDS

log = logging.getLogger("diffscm")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FAILURE = 1


class CliError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors go through the same JSON error path as everything else
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def _int_list(text: str) -> list[int]:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


def _hidden(text: str) -> tuple[int, ...]:
    return tuple(_int_list(text))


def resolve_node(graph: CausalGraph, token: str) -> int:
    token = token.strip()
    if token in graph.node_names:
        return graph.node_names.index(token)
    try:
        idx = int(token)
    except ValueError:
        raise CliError(f"unknown node {token!r}") from None
    if not 1 <= idx <= graph.num_nodes:
        raise CliError(f"node index {idx} out of range 1..{graph.num_nodes}")
    return idx - 1


def parse_interventions(specs: list[str] | None, graph: CausalGraph) -> dict[int, np.ndarray]:
    """``["x2=0.5", "3=1,2,3"]`` -> {1: [0.5], 2: [1, 2, 3]} (0-based keys)."""
    out = {}
    for spec in specs or []:
        if spec.count("=") != 1:
            raise CliError(f"malformed intervention {spec!r}; expected node=value")
        node_tok, val_tok = spec.split("=")
        node = resolve_node(graph, node_tok)
        try:
            value = np.array([float(v) for v in val_tok.split(",")])
        except ValueError:
            raise CliError(f"malformed intervention value in {spec!r}") from None
        if value.shape != (graph.node_dims[node],) or not np.all(np.isfinite(value)):
            raise CliError(
                f"intervention {spec!r} needs {graph.node_dims[node]} finite value(s)"
            )
        if node in out:
            raise CliError(f"node {graph.node_names[node]} intervened twice")
        out[node] = value
    return out


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from exc


def _load_graph(args) -> CausalGraph:
    if getattr(args, "scm", None):
        return CausalGraph.from_json(_load_json(args.scm)["graph"])
    if getattr(args, "graph_file", None):
        return CausalGraph.from_json(_load_json(args.graph_file))
    raise CliError("need --scm or --graph-file to know the causal graph")


def _load_query_model(path: str):
    from diffscm.models import DcmModel
    from diffscm.scm import GroundTruthScm

    obj = _load_json(path)
    if obj.get("kind") == "dcm":
        return DcmModel.from_json(obj)
    if "mechanisms" in obj:
        return GroundTruthScm.from_json(obj)
    raise CliError(f"{path}: not a DCM model or SCM file")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> dict:
    from diffscm.scm import benchmark_scm

    if args.n < 1:
        raise CliError("--n must be >= 1")
    scm = benchmark_scm(args.graph, args.sem, substream(args.seed, "generate/scm"))
    batch = scm.sample_observational(args.n, substream(args.seed, "generate/sample"))
    out = _out_dir(args)
    g = scm.graph
    atomic_write(out / "data.csv", format_csv(batch.values, g.column_names()))
    atomic_write(out / "noise.csv", format_csv(batch.noises, noise_column_names(g)))
    atomic_write(out / "scm.json", _dump(scm.to_json()))
    atomic_write(out / "graph.json", _dump(g.to_json()))
    return {"rows": args.n, "columns": g.total_dim, "out": str(out)}


def cmd_train(args) -> dict:
    from diffscm.models import DcmHyperparams, fit_dcm

    graph = _load_graph(args)
    data = read_dataset(args.data, graph)
    hp = DcmHyperparams(
        T=args.T, beta_min=args.beta_min, beta_max=args.beta_max, hidden=args.hidden,
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
    )
    model = fit_dcm(data, graph, hp, substream(args.seed, "train"), n_jobs=args.jobs)
    atomic_write(args.out, json.dumps(model.to_json()))
    final = {graph.node_names[i]: float(tr[-1]) for i, tr in sorted(model.loss_traces.items()) if len(tr)}
    return {"out": args.out, "final_loss": final}


def cmd_query(args) -> dict:
    from diffscm.scm import GroundTruthScm, TracedBatch

    model = _load_query_model(args.model)
    g = model.graph
    ivs = parse_interventions(args.do, g)
    if args.mode == "obs":
        if ivs:
            raise CliError("observational queries take no interventions")
        values = model.sample({}, args.n, substream(args.seed, "query"))
    elif args.mode == "int":
        values = model.sample(ivs, args.n, substream(args.seed, "query"))
    else:
        if not args.factual:
            raise CliError("counterfactual queries need --factual")
        factual = read_dataset(args.factual, g)
        if isinstance(model, GroundTruthScm):
            if not args.noise:
                raise CliError("counterfactuals from an SCM file need the --noise trace")
            factual = TracedBatch(factual, read_noise(args.noise, g))
        values = model.counterfactual(factual, ivs)
    text = format_csv(values, g.column_names())
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return {"mode": args.mode, "rows": int(len(values)), "out": args.out}


def _bench_config(args):
    from diffscm.evaluation import BenchmarkConfig
    from diffscm.models import DcmHyperparams

    nodes = args.intervention_nodes
    if nodes != "auto":
        nodes = [i - 1 for i in _int_list(nodes)]
    return BenchmarkConfig(
        graph_kind=args.graph, sem_kind=args.sem, n_train=args.n_train,
        seeds=_int_list(args.seeds) if args.seeds else [args.seed],
        intervention_nodes=nodes, num_gammas=args.num_gammas,
        samples_per_gamma=args.samples_per_gamma, n_obs=args.n_obs,
        models=_str_list(args.models),
        dcm=DcmHyperparams(
            T=args.T, beta_min=args.beta_min, beta_max=args.beta_max, hidden=args.hidden,
            epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        ),
        n_jobs=args.jobs,
    )


def cmd_benchmark(args) -> dict:
    from diffscm.evaluation import run_benchmark

    report = run_benchmark(_bench_config(args))
    out = _out_dir(args)
    scale = 100.0 if args.scale100 else 1.0
    report.save(out / "report.json", out / "report.csv", scale)
    failed = sum(c["status"] == "failed" for c in report.cells)
    return {"out": str(out), "failed_cells": failed, "aggregate": report.aggregate()}


def run_verify(seed: int = 0, trials: int = 100) -> dict:
    """Every analytic theory check; the trained-model independence run is left to the benchmark."""
    from diffscm import theory

    checks = []
    for delta in (0.0, 0.01, 0.1):
        res = theory.counterfactual_bound_check(
            theory.additive_scenario(delta=delta), rng=substream(seed, "verify/bound", int(delta * 100))
        )
        ok = (abs(res["max_reconstruction_error"] - delta) <= 1e-9
              and abs(res["max_counterfactual_error"] - delta) <= 1e-9 and not res["violation"])
        checks.append({**res, "check": f"corollary2_delta_{delta}", "passed": ok})
    res = theory.counterfactual_bound_check(
        theory.additive_scenario(c=0.5), rng=substream(seed, "verify/violation")
    )
    checks.append({**res, "check": "assumption1_violation", "passed": res["max_counterfactual_error"] > 1e-3})
    res = theory.counterfactual_bound_check(
        theory.additive_scenario(dim=3), rng=substream(seed, "verify/multivariate")
    )
    checks.append({**res, "check": "multivariate_additive", "passed": not res["violation"]})
    res = theory.counterfactual_bound_check(
        theory.nonadditive_scenario(), rng=substream(seed, "verify/multiplicative")
    )
    checks.append({**res, "check": "nonadditive_exact", "passed": res["max_counterfactual_error"] <= 1e-12})

    expect = {"cubic_shift": True, "identity": True, "multiplicative": False}
    for name, family in theory.LEMMA_FAMILIES.items():
        x_grid = np.linspace(0.5, 1.0, 6) if name == "multiplicative" else np.linspace(0.0, 0.5, 6)
        res = theory.translation_lemma_check(family, x_grid=x_grid)
        checks.append({**res, "check": f"lemma1_{name}", "passed": res["passed"] == expect[name] and res["consistent"]})

    for name in ("true_noise", "dependent"):
        summ = theory.encoding_independence_report(name, trials=trials, seed=seed).summary()
        ok = summ["rejection_rate_0.05"] <= 0.15 if name == "true_noise" else summ["mean"] < 0.01
        checks.append({**summ, "check": f"independence_{name}", "passed": bool(ok)})
    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def cmd_verify(args) -> dict:
    result = run_verify(args.seed, args.trials)
    out = _out_dir(args)
    atomic_write(out / "verify.json", _dump(result))
    return {"passed": result["passed"],
            "checks": {c["check"]: c["passed"] for c in result["checks"]}}


def cmd_report(args) -> dict:
    from diffscm.evaluation import BenchmarkConfig, BenchmarkReport

    obj = _load_json(args.report)
    if obj.get("schema_version") != 1:
        raise CliError(f"unsupported report schema_version {obj.get('schema_version')!r}")
    report = BenchmarkReport(BenchmarkConfig(**obj["config"]), obj["cells"])
    text = report.to_csv(100.0 if args.scale100 else 1.0)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return {"out": args.out}


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", required=False, default=None, help="output path")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    p.add_argument("--config", default=None, help="key=value config file with sections")
    p.set_defaults(_out_required=out_required)


def _dcm_flags(p: argparse.ArgumentParser, epochs: int) -> None:
    p.add_argument("--T", type=int, default=100, help="diffusion steps (default 100)")
    p.add_argument("--beta-min", type=float, default=1e-4)
    p.add_argument("--beta-max", type=float, default=0.1)
    p.add_argument("--hidden", type=_hidden, default=(128, 256, 256), help="comma-separated widths")
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diffscm", description="Diffusion-based causal models")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a benchmark SCM and a dataset")
    _common(p)
    p.add_argument("--graph", choices=GRAPH_KINDS, default="chain")
    p.add_argument("--sem", choices=SEM_KINDS, default="NLIN")
    p.add_argument("--n", type=int, default=5000)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a DCM to a CSV dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--scm", help="SCM JSON whose graph to use")
    p.add_argument("--graph-file", help="graph JSON")
    _dcm_flags(p, epochs=500)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", help="observational, interventional or counterfactual query")
    _common(p, out_required=False)
    p.add_argument("--model", required=True, help="DCM model JSON or SCM JSON")
    p.add_argument("--mode", choices=("obs", "int", "cf"), required=True)
    p.add_argument("--do", action="append", default=[], help="intervention node=value (repeatable)")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--factual", help="CSV of factual rows (cf mode)")
    p.add_argument("--noise", help="noise trace CSV (cf mode with an SCM file)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("benchmark", help="run the evaluation protocol over seeds")
    _common(p)
    p.add_argument("--graph", choices=GRAPH_KINDS, default="chain")
    p.add_argument("--sem", choices=SEM_KINDS, default="NLIN")
    p.add_argument("--seeds", default="0,1,2,3,4", help="e.g. 0,1,2 or 0..4")
    p.add_argument("--models", default="dcm,anm")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--intervention-nodes", default="auto", help="'auto' or 1-based indices")
    p.add_argument("--num-gammas", type=int, default=20)
    p.add_argument("--samples-per-gamma", type=int, default=100)
    p.add_argument("--n-obs", type=int, default=1000)
    p.add_argument("--scale100", action="store_true", help="multiply CSV values by 100")
    _dcm_flags(p, epochs=200)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("verify", help="run the theory checks")
    _common(p)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="render a benchmark report JSON as CSV")
    _common(p, out_required=False)
    p.add_argument("--report", required=True)
    p.add_argument("--scale100", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def _config_defaults(path: str, command: str) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    # keys before any section header belong to [common]
    cp.read_string("[common]\n" + text if not text.lstrip().startswith("[") else text)
    out = {}
    for section in ("common", command):
        if cp.has_section(section):
            out.update({k.replace("-", "_"): v for k, v in cp.items(section)})
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    defaults = _config_defaults(args.config, args.command)
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    known = {a.dest for a in sub._actions}  # noqa: SLF001
    unknown = set(defaults) - known
    if unknown:
        raise CliError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    for action in sub._actions:  # noqa: SLF001
        if action.dest in defaults:
            val = defaults[action.dest]
            if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
                val = val.strip().lower() in ("1", "true", "yes", "on")
            elif action.dest == "do":
                val = _str_list(val.replace(";", ","))
            action.required = False
            action.default = val
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args._out_required and not args.out:
            raise CliError(f"{args.command} needs --out")
        if args.jobs < 1:
            raise CliError("--jobs must be >= 1")
        summary = args.func(args)
    except (CliError, ValueError, KeyError, IndexError) as exc:
        return _fail(exc, EXIT_USAGE)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, EXIT_FAILURE)
    if summary is not None and args.out and args.command != "report":
        print(json.dumps(summary, sort_keys=True, default=float))
    return 0


def _fail(exc: Exception, code: int) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(err) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
