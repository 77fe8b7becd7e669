"""Scenario runner: align, stabilize, error-curve and witness commands.

Configuration is an INI file ([source], [channels], [drift], [optimizer],
[targets], [run] sections) with command-line flags taking precedence.
Every run is reproducible from (config, seed); the resolved configuration
is echoed as comment lines into the output files.

Exit codes: 0 converged/success, 1 usage or config error, 2 witness
failure, 3 pair budget exhausted.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import dataclass, fields

import numpy as np

from .align import (
    AlignmentTargets,
    OptimizerConfig,
    run_alignment,
    stabilize,
    witness_check,
)
from .model import ChannelStack, SourceModel, make_source
from .photons import DriftModel, error_curve
from .su2 import haar_random_unitary

__all__ = ["main", "ScenarioConfig", "ConfigError"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_WITNESS = 2
EXIT_BUDGET = 3

_STATUS_EXIT = {"converged": EXIT_OK, "failed_witness": EXIT_WITNESS,
                "budget_exhausted": EXIT_BUDGET}


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class ScenarioConfig:
    source_kind: str = "sagnac"
    phi: str = "random"          # float literal or 'random'
    seed: int = 0
    drift_rate: float = 0.0
    drift_affected: str = "u_a,u_b"
    batch_size: int = 10_000
    initial_step: float = 0.8
    shrink: float = 0.6
    step_floor: float = 1e-4
    max_pairs: int = 4_000_000
    max_rounds: int = 100_000
    mode: str = "simultaneous"
    oracle: str = "monte_carlo"
    pair_rate: float = 21900.0
    window_s: float = 1.0
    sign: int = 1
    t_corr: float = 0.98
    t_uncorr: float = 0.05
    fraction: float = 0.05
    duration: float = 60.0

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            batch_size=self.batch_size, initial_step=self.initial_step,
            shrink=self.shrink, step_floor=self.step_floor,
            max_pairs=self.max_pairs, max_rounds=self.max_rounds,
            mode=self.mode, oracle=self.oracle, pair_rate=self.pair_rate,
            window_s=self.window_s)

    def targets(self) -> AlignmentTargets:
        return AlignmentTargets(sign=self.sign, t_corr=self.t_corr,
                                t_uncorr=self.t_uncorr)

    def drift(self) -> DriftModel:
        affected = frozenset(x.strip() for x in self.drift_affected.split(",")
                             if x.strip())
        return DriftModel(angular_rate=self.drift_rate, affected=affected)

    def comment_lines(self) -> tuple:
        return tuple(f"{f.name} = {getattr(self, f.name)}"
                     for f in fields(self))


# INI schema: section -> {key: ScenarioConfig field}
_SCHEMA = {
    "source": {"kind": "source_kind", "phi": "phi", "pair_rate": "pair_rate"},
    "channels": {"seed": "seed"},
    "drift": {"rate": "drift_rate", "affected": "drift_affected"},
    "optimizer": {"batch_size": "batch_size", "initial_step": "initial_step",
                  "shrink": "shrink", "step_floor": "step_floor",
                  "max_pairs": "max_pairs", "max_rounds": "max_rounds",
                  "mode": "mode", "oracle": "oracle", "window_s": "window_s"},
    "targets": {"sign": "sign", "t_corr": "t_corr", "t_uncorr": "t_uncorr"},
    "run": {"seed": "seed", "fraction": "fraction", "duration": "duration"},
}

_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _coerce(field_name: str, raw: str):
    kind = _FIELD_TYPES[field_name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"field {field_name}: {exc}") from exc


def load_config(path: str) -> ScenarioConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    cfg = ScenarioConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section "
                                  f"[{section}] of {path}")
            field_name = _SCHEMA[section][key]
            setattr(cfg, field_name, _coerce(field_name, raw))
    return cfg


_FLAG_FIELDS = ("seed", "batch_size", "initial_step", "shrink", "step_floor",
                "max_pairs", "max_rounds", "mode", "oracle", "pair_rate",
                "sign", "t_corr", "t_uncorr", "fraction", "duration",
                "drift_rate", "phi")


def _apply_flags(cfg: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    if getattr(args, "source", None) is not None:
        cfg.source_kind = args.source
    if getattr(args, "budget", None) is not None:
        cfg.max_pairs = args.budget
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def _build_scenario(cfg: ScenarioConfig):
    """Draw channels and source deterministically from the seed."""
    rng = np.random.default_rng(cfg.seed)
    stack = ChannelStack.random(rng)
    kind = cfg.source_kind
    if kind == "singlet":
        source = SourceModel.singlet(pair_rate=cfg.pair_rate)
    elif kind == "sagnac":
        phi = (rng.uniform(0.0, 2.0 * np.pi) if cfg.phi == "random"
               else float(cfg.phi))
        source = SourceModel.sagnac(phi, pair_rate=cfg.pair_rate)
    elif kind == "general":
        source = SourceModel.general(haar_random_unitary(rng),
                                     pair_rate=cfg.pair_rate)
    elif kind == "product":
        source = SourceModel.product(haar_random_unitary(rng),
                                     haar_random_unitary(rng),
                                     pair_rate=cfg.pair_rate)
    else:
        raise ConfigError(f"unknown source kind {kind!r}")
    return make_source(source), stack, rng


def _write(path, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _emit_trace(trace, cfg: ScenarioConfig, out, fmt: str) -> None:
    if fmt == "csv":
        _write(out, trace.to_csv(comments=cfg.comment_lines()))
    else:
        payload = {"config": {f.name: getattr(cfg, f.name)
                              for f in fields(ScenarioConfig)},
                   "status": trace.status,
                   "rows": trace.to_json_rows()}
        _write(out, json.dumps(payload, indent=2) + "\n")


def cmd_align(args) -> int:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    _apply_flags(cfg, args)
    psi, stack, rng = _build_scenario(cfg)
    trace = run_alignment(psi, stack, cfg.targets(), cfg.optimizer_config(), rng)
    _emit_trace(trace, cfg, args.out, args.format)
    return _STATUS_EXIT.get(trace.status, EXIT_BUDGET)


def cmd_stabilize(args) -> int:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    _apply_flags(cfg, args)
    psi, stack, rng = _build_scenario(cfg)
    opt = cfg.optimizer_config()
    targets = cfg.targets()
    trace = run_alignment(psi, stack, targets, opt, rng)
    if trace.status != "converged":
        _emit_trace(trace, cfg, args.out, args.format)
        return _STATUS_EXIT.get(trace.status, EXIT_BUDGET)
    result = stabilize(psi, trace.final_stack, cfg.drift(), cfg.fraction,
                       cfg.duration, opt, rng, targets)
    _emit_trace(result.trace, cfg, args.out, args.format)
    report = result.report.to_dict()
    report["pairs_alignment"] = result.pairs_alignment
    report["pairs_monitor"] = result.pairs_monitor
    report["pairs_key"] = result.pairs_key
    _write(args.report_out, json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def _parse_grid(raw: str, cast):
    vals = [cast(x) for x in raw.split(",") if x.strip()]
    if not vals:
        raise ConfigError("empty grid")
    return vals


def cmd_error_curve(args) -> int:
    v_list = _parse_grid(args.v, float)
    n_list = _parse_grid(args.n, int)
    rng = np.random.default_rng(args.seed)
    rows = error_curve(v_list, n_list, args.trials, rng)
    lines = ["v,n,sigma_formula,sigma_mc"]
    lines += [f"{v:.9g},{n},{sf:.9g},{sm:.9g}" for v, n, sf, sm in rows]
    _write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_witness(args) -> int:
    verdict = witness_check(args.v11, args.v22, args.sigma11, args.sigma22)
    sys.stdout.write(verdict + "\n")
    return EXIT_OK if verdict == "entangled_certified" else EXIT_WITNESS


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="INI scenario file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--source",
                   choices=("singlet", "sagnac", "general", "product"),
                   default=None)
    p.add_argument("--phi", default=None, help="Sagnac phase or 'random'")
    p.add_argument("--mode", choices=("sequential", "simultaneous"), default=None)
    p.add_argument("--oracle", choices=("monte_carlo", "analytic"), default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--budget", type=int, default=None,
                   help="total pair budget (max_pairs)")
    p.add_argument("--pair-rate", dest="pair_rate", type=float, default=None)
    p.add_argument("--sign", type=int, choices=(-1, 1), default=None)
    p.add_argument("--t-corr", dest="t_corr", type=float, default=None)
    p.add_argument("--t-uncorr", dest="t_uncorr", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entalign",
        description="Entanglement-based QKD alignment simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_align = sub.add_parser("align", help="run the alignment procedure")
    _add_common(p_align)
    p_align.set_defaults(func=cmd_align)

    p_stab = sub.add_parser("stabilize", help="align then hold under drift")
    _add_common(p_stab)
    p_stab.add_argument("--drift-rate", dest="drift_rate", type=float,
                        default=None, help="rad/sqrt(s) random walk")
    p_stab.add_argument("--fraction", type=float, default=None,
                        help="fraction of pairs used for monitoring")
    p_stab.add_argument("--duration", type=float, default=None,
                        help="stabilization time in simulated seconds")
    p_stab.add_argument("--report-out", default=None)
    p_stab.set_defaults(func=cmd_stabilize)

    p_err = sub.add_parser("error-curve",
                           help="visibility error bar: formula vs Monte Carlo")
    p_err.add_argument("--v", required=True, help="comma list of visibilities")
    p_err.add_argument("--n", required=True, help="comma list of total counts")
    p_err.add_argument("--trials", type=int, default=10_000)
    p_err.add_argument("--seed", type=int, default=0)
    p_err.add_argument("--out", default=None)
    p_err.set_defaults(func=cmd_error_curve)

    p_wit = sub.add_parser("witness", help="entanglement witness check")
    p_wit.add_argument("--v11", type=float, required=True)
    p_wit.add_argument("--v22", type=float, required=True)
    p_wit.add_argument("--sigma11", type=float, default=0.0)
    p_wit.add_argument("--sigma22", type=float, default=0.0)
    p_wit.set_defaults(func=cmd_witness)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
