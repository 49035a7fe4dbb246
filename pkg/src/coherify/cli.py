"""Command-line surface: project, certify, monitor, simulate, regret, gate, predict.

All record streams are JSONL; CLI input order equals output order. Exit
codes: 0 success, 1 operational failure, 2 malformed input (offending
line reported on stderr). A run manifest sidecar records the exact
configuration behind every simulate / regret / gate / predict run.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .composition import (
    ComponentSpec,
    CompositionSpec,
    CouplingConstraint,
    CouplingSet,
    residual,
)
from .decision import AllocationRule, BetRecord, gate_sweep, murphy, regret
from .jsonio import dump_lines, dumps, parse_lines
from .monitor import DEFAULT_ALPHAS, EProcessState, StreamStep, update
from .polytope import Clique, PolytopeSpec, build_polytope
from .prediction import observe_magnitude, panel_stats, predict_magnitude
from .projection import CLOSED_FORM_KINDS, project_closed_form, project_dykstra
from .simharness import (
    ConfigError,
    SimConfig,
    generate_panel,
    run_ensemble,
    to_bet_records,
)

CONFIG_DIR_ENV = "COHERIFY_CONFIG_DIR"


class InputError(ValueError):
    """Malformed input stream; maps to exit code 2."""


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text()


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _resolve_config(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        base = os.environ.get(CONFIG_DIR_ENV)
        if base and (Path(base) / path).exists():
            return Path(base) / path
    return p


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _manifest(command: str, config_text: str, seed: int, inputs: dict[str, str]) -> dict:
    return {
        "command": command,
        "config_hash": _digest(config_text),
        "master_seed": seed,
        "input_digests": {name: _digest(text) for name, text in inputs.items()},
        "tool_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _write_manifest(args, manifest: dict, out_path: str) -> None:
    target = args.manifest_out
    if target is None and out_path not in (None, "-"):
        target = out_path + ".manifest.json"
    if target:
        Path(target).write_text(dumps(manifest) + "\n")


def _map_records(records, fn, jobs: int):
    if jobs <= 1:
        return [fn(r) for r in records]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, records))


# --- project ---------------------------------------------------------------


def _project_record(entry):
    lineno, record = entry
    try:
        clique = Clique.from_json(record)
        quote = np.asarray(record["quote"], dtype=float)
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"line {lineno}: {exc}") from exc
    if quote.shape != (clique.relation.m,):
        raise InputError(f"line {lineno}: quote length {quote.size} != m={clique.relation.m}")
    if clique.relation.kind in CLOSED_FORM_KINDS:
        result = project_closed_form(clique.relation, quote)
    else:
        result = project_dykstra(build_polytope(clique.relation), quote)
    return {
        "id": clique.id,
        "projected": [float(v) for v in result.projected],
        "residual": result.residual,
        "iterations": result.iterations,
        "converged": result.converged,
        "active_constraint": result.active_constraint,
    }


def cmd_project(args) -> int:
    text = _read_text(args.input)
    records = parse_lines(text)
    out = _map_records(records, _project_record, args.jobs)
    _write_text(args.out, dump_lines(out))
    _write_manifest(args, _manifest("project", "", args.seed, {"input": text}), args.out)
    return 0


# --- certify ---------------------------------------------------------------


def composition_from_json(record: dict) -> tuple[CompositionSpec, list[np.ndarray]]:
    owners = [int(v) for v in record["owners"]]
    locals_ = [np.asarray(q, dtype=float) for q in record["locals"]]
    joint_dim = len(owners)
    component_ids = sorted(set(owners))
    if len(locals_) != len(component_ids):
        raise ValueError(
            f"{len(component_ids)} owners referenced but {len(locals_)} local quotes given"
        )
    components = []
    for cid in component_ids:
        coords = tuple(j for j, o in enumerate(owners) if o == cid)
        components.append(ComponentSpec(PolytopeSpec(dim=len(coords)), coords))
    coupling = CouplingSet(
        tuple(CouplingConstraint.from_json(c) for c in record.get("coupling", []))
    )
    return CompositionSpec(tuple(components), coupling, joint_dim), locals_


def _certify_record(entry, tol: float = 1e-8):
    lineno, record = entry
    try:
        comp, locals_ = composition_from_json(record)
        cert = residual(comp, locals_, tol=tol)
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"line {lineno}: {exc}") from exc
    return cert.to_json()


def cmd_certify(args) -> int:
    text = _read_text(args.input)
    records = parse_lines(text)
    out = _map_records(records, lambda e: _certify_record(e, args.tol), args.jobs)
    _write_text(args.out, dump_lines(out))
    _write_manifest(args, _manifest("certify", "", args.seed, {"input": text}), args.out)
    return 0


# --- monitor ---------------------------------------------------------------


def cmd_monitor(args) -> int:
    text = _read_text(args.input)
    records = parse_lines(text)
    alpha_tokens = [tok.strip() for tok in args.alpha_list.split(",") if tok.strip()]
    alphas = tuple(float(tok) for tok in alpha_tokens)
    state = EProcessState(alphas=alphas)
    out = []
    for lineno, record in records:
        try:
            step = StreamStep(
                eps_sq=float(record["eps_sq"]), m=int(record["m"]), k_samples=int(record["K"])
            )
            state = update(state, step)
        except (KeyError, ValueError, TypeError) as exc:
            raise InputError(f"line {lineno}: {exc}") from exc
        out.append(
            {
                "t": state.t,
                "log_e_mix": state.log_e_mix,
                "crossed": {tok: state.crossed_at[i] for i, tok in enumerate(alpha_tokens)},
            }
        )
    _write_text(args.out, dump_lines(out))
    _write_manifest(args, _manifest("monitor", args.alpha_list, args.seed, {"input": text}),
                    args.out)
    return 0


# --- simulate / regret / gate / predict -------------------------------------


def _load_config(args) -> tuple[SimConfig, str]:
    path = _resolve_config(args.config)
    text = path.read_text()
    config = SimConfig.parse(text)
    if args.seed is not None:
        config.master_seed = args.seed
    return config, text


def cmd_simulate(args) -> int:
    config, config_text = _load_config(args)
    records = run_ensemble(
        config.build_cliques(), config.build_model(), config.build_policy(),
        config.n_seeds, config.master_seed,
    )
    bets = to_bet_records(records, config.naive_operator, config.repaired_operator)
    _write_text(args.out, dump_lines(b.to_json() for b in bets))
    if args.ecdf_out:
        _write_text(args.ecdf_out, _eps_ecdf_csv(records))
    _write_manifest(
        args, _manifest("simulate", config_text, config.master_seed, {}), args.out
    )
    return 0


def _eps_ecdf_csv(records) -> str:
    """Per-relation ECDF points of the certified residual, plot-ready CSV."""
    by_relation: dict[str, list[float]] = {}
    for r in records:
        kind = r.clique_id.rsplit("-", 1)[0]
        by_relation.setdefault(kind, []).append(r.eps["B"])
    lines = ["relation,eps_star,cum_fraction"]
    for kind in sorted(by_relation):
        values = sorted(by_relation[kind])
        n = len(values)
        for i, v in enumerate(values, start=1):
            lines.append(f"{kind},{v:.17g},{i / n:.17g}")
    return "\n".join(lines) + "\n"


def _load_bets(path: str) -> tuple[list[BetRecord], str]:
    text = _read_text(path)
    bets = []
    for lineno, record in parse_lines(text):
        try:
            bets.append(BetRecord.from_json(record))
        except (KeyError, ValueError, TypeError) as exc:
            raise InputError(f"line {lineno}: {exc}") from exc
    return bets, text


def cmd_regret(args) -> int:
    bets, text = _load_bets(args.input)
    rule = AllocationRule(kind=args.rule)
    summary = regret(bets, rule, seed=args.seed or 0)
    payload = summary.to_json()
    flat_q = [v for b in bets for v in b.quote_repaired]
    flat_y = [v for b in bets for v in b.labels]
    payload["murphy_repaired"] = murphy(flat_q, flat_y, args.bins).to_json()
    flat_qn = [v for b in bets for v in b.quote_naive]
    payload["murphy_naive"] = murphy(flat_qn, flat_y, args.bins).to_json()
    _write_text(args.out, dumps(payload) + "\n")
    _write_manifest(args, _manifest("regret", args.rule, args.seed or 0, {"bets": text}),
                    args.out)
    return 0


def cmd_gate(args) -> int:
    bets, text = _load_bets(args.input)
    targets = tuple(float(tok) for tok in args.capture_targets.split(",") if tok.strip())
    report = gate_sweep(bets, AllocationRule(kind=args.rule), targets, seed=args.seed or 0)
    _write_text(args.out, dumps(report.to_json()) + "\n")
    _write_manifest(
        args, _manifest("gate", args.capture_targets, args.seed or 0, {"bets": text}), args.out
    )
    return 0


def cmd_predict(args) -> int:
    config, config_text = _load_config(args)
    from .simharness import composition_for, sample_truth, _rng

    model = config.build_model()
    out = []
    for ci, clique in enumerate(config.build_cliques()):
        truth = sample_truth(clique.relation, _rng(config.master_seed, ci, 0x72),
                             model.truth_mode)
        panel = generate_panel(model, clique, (config.master_seed, ci, 0), truth=truth)
        stats = panel_stats(list(panel.repaired))
        prediction = predict_magnitude(stats, clique.relation)
        owners = np.zeros(clique.relation.m, dtype=int)  # layout only; draws are uniform
        comp = composition_for(clique, owners).comp
        observed = observe_magnitude(comp, list(panel.repaired), config.n_draws,
                                     seed=config.master_seed)
        ratio = observed / prediction.predicted_sq_residual \
            if prediction.predicted_sq_residual > 0 else None
        out.append(
            {
                "predicted": prediction.predicted_sq_residual,
                "observed": observed,
                "ratio": ratio,
                "regime": prediction.regime,
            }
        )
    _write_text(args.out, dump_lines(out))
    _write_manifest(args, _manifest("predict", config_text, config.master_seed, {}), args.out)
    return 0


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coherify",
        description="Certify, repair, and monitor coherence of composed probabilistic quotes.",
    )
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--tol", type=float, default=1e-8, help="membership tolerance")
    parser.add_argument("--jobs", type=int, default=1, help="worker threads for record streams")
    parser.add_argument("--manifest-out", default=None, help="run manifest path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="project quotes onto their clique polytopes")
    p.add_argument("input", help="clique+quote JSONL ('-' for stdin)")
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("certify", help="certify composed quotes")
    p.add_argument("input", help="composition JSONL")
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("monitor", help="run the sequential coherence test on a residual stream")
    p.add_argument("input", help="residual stream JSONL")
    p.add_argument("--out", default="-")
    p.add_argument("--alpha-list", default=",".join(str(a) for a in DEFAULT_ALPHAS))
    p.set_defaults(fn=cmd_monitor)

    p = sub.add_parser("simulate", help="run a synthetic specialist-panel ensemble")
    p.add_argument("config", help="scenario config file (key = value lines)")
    p.add_argument("--out", default="-")
    p.add_argument("--ecdf-out", default=None,
                   help="also write per-relation residual ECDF points as CSV")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("regret", help="score naive vs repaired bets")
    p.add_argument("input", help="bets JSONL")
    p.add_argument("--out", default="-")
    p.add_argument("--rule", default="proportional",
                   choices=["proportional", "truncated-kelly", "max-entropy"])
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(fn=cmd_regret)

    p = sub.add_parser("gate", help="calibrate certificate gating thresholds")
    p.add_argument("input", help="bets JSONL")
    p.add_argument("--out", default="-")
    p.add_argument("--rule", default="proportional",
                   choices=["proportional", "truncated-kelly", "max-entropy"])
    p.add_argument("--capture-targets", default="0.9,0.5")
    p.set_defaults(fn=cmd_gate)

    p = sub.add_parser("predict", help="panel-covariance residual prediction vs observation")
    p.add_argument("config", help="scenario config file")
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InputError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            for problem in exc.problems:
                print(f"config error: {problem}", file=sys.stderr)
            return 1
        message = str(exc)
        print(f"error: {message}", file=sys.stderr)
        malformed = isinstance(exc, InputError) or message.startswith("line ")
        return 2 if malformed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
