"""Command-line entry point.

Subcommands: gen-contacts, simulate, infer, em-fit, federated, policy-eval.
Each takes --config (JSON, validated), optional --seed (overrides the config
seed) and --out (output directory). Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .em import em_fit
from .federated import FederatedSimulation
from .forward import SCENARIOS, ScenarioConfig, run_scenario
from .gibbs import GibbsEngine, risk_scores
from .io import ConfigError
from .model import DataError, DomainError, NumericalError
from .policy import (PolicyRunConfig, default_grid, evaluate_policy_grid,
                     run_policy, summarize_grid)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crisp",
        description="Individual-level SEIR simulation, trace inference, and "
                    "policy evaluation over contact data.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
            ("gen-contacts", "sample a contact log and write contacts.csv"),
            ("simulate", "run a forward scenario and write seir_timeseries.csv"),
            ("infer", "sample posterior traces and write risk_scores.csv"),
            ("em-fit", "estimate transmission parameters from data"),
            ("federated", "run the device-level sampler and write risk/stats"),
            ("policy-eval", "evaluate testing-and-quarantining policies")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (overrides config)")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def _risk_rows(risk: np.ndarray, day: int):
    for u in range(risk.shape[0]):
        yield [u, day, risk[u, 0], risk[u, 1], risk[u, 2], risk[u, 3]]


RISK_HEADER = ["u", "day", "p_s", "p_e", "p_i", "p_r"]


def _cmd_gen_contacts(cfg: dict, seed: int, out: Path, prov: str) -> None:
    from .contacts import generate_contacts
    spec = io.pattern_spec_from_config(cfg)
    log = generate_contacts(spec, seed)
    io.write_contacts(log, out / "contacts.csv", prov)


def _cmd_simulate(cfg: dict, seed: int, out: Path, prov: str) -> None:
    s = dict(cfg.get("scenario", {}))
    name = s.pop("name", "no_mitigation")
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    result = run_scenario(ScenarioConfig(scenario=name, **s), seed)
    rows = []
    m, T1, _ = result.counts.shape
    for i in range(m):
        for d in range(1, T1):
            c = result.counts[i, d]
            rows.append([i, d, int(c[0]), int(c[1]), int(c[2]), int(c[3])])
    for d in range(1, T1):
        c = result.mean_counts[d]
        rows.append(["mean", d, c[0], c[1], c[2], c[3]])
    io.write_csv(out / "seir_timeseries.csv",
                 ["sample", "day", "s", "e", "i", "r"], rows, prov)


def _infer_inputs(cfg: dict):
    params = io.model_params_from_config(cfg)
    data = cfg.get("data", {})
    if "horizon" not in data:
        raise ConfigError("config is missing data.horizon")
    horizon = data["horizon"]
    contacts = io.load_contacts(io.data_path(cfg, "contacts"),
                                data.get("n_individuals"))
    n = data.get("n_individuals", contacts.n_individuals)
    n = max(n, contacts.n_individuals)
    tests = io.load_tests(io.data_path(cfg, "tests"), n, horizon)
    if contacts.n_individuals < n:
        contacts = io.ContactLog(contacts.src, contacts.dst, contacts.day,
                                 contacts.x, n)
    return params, horizon, contacts, tests


def _cmd_infer(cfg: dict, seed: int, out: Path, prov: str) -> None:
    params, horizon, contacts, tests = _infer_inputs(cfg)
    day = cfg.get("data", {}).get("day", horizon)
    if not 1 <= day <= horizon:
        raise ConfigError(f"data.day must lie in 1..{horizon}")
    engine = GibbsEngine(params, horizon, contacts, tests)
    samples = engine.run(io.gibbs_config_from_config(cfg),
                         np.random.default_rng(seed))
    risk = risk_scores(samples, day)
    io.write_csv(out / "risk_scores.csv", RISK_HEADER,
                 _risk_rows(risk, day), prov)


def _cmd_em_fit(cfg: dict, seed: int, out: Path, prov: str) -> None:
    params, horizon, contacts, tests = _infer_inputs(cfg)
    result = em_fit(params, contacts, tests, horizon,
                    io.em_config_from_config(cfg), np.random.default_rng(seed))
    J = result.params.n_channels
    hist_header = ["iter", "p0"] + [f"p_{j + 1}" for j in range(J)] + \
        ["objective", "delta"]
    hist_rows = ([h["iter"], h["p0"], *h["p"], h["objective"], h["delta"]]
                 for h in result.history)
    io.write_csv(out / "em_history.csv", hist_header, hist_rows, prov)
    rows = [["p0", result.params.p0]]
    rows += [[f"p_{j + 1}", result.params.p[j]] for j in range(J)]
    rows += [["converged", int(result.converged)], ["n_iters", result.n_iters]]
    io.write_csv(out / "em_params.csv", ["name", "value"], rows, prov)


def _cmd_federated(cfg: dict, seed: int, out: Path, prov: str) -> None:
    params, horizon, contacts, tests = _infer_inputs(cfg)
    fc = io.federated_config_from_config(cfg)
    burn_in = cfg.get("federated", {}).get("burn_in", 0)
    sim = FederatedSimulation(params, horizon, contacts, tests, fc)
    result = sim.run(np.random.default_rng(seed))
    n = contacts.n_individuals
    risk = np.zeros((n, 4))
    from .model import trace_states
    for u in range(n):
        snaps = result.samples_for(u, burn_in=burn_in)
        if snaps.shape[0] == 0:
            raise DataError(f"node {u} was never activated after burn-in; "
                            "increase federated.n_activations")
        st = trace_states(snaps, horizon)
        for k in range(4):
            risk[u, k] = float(np.mean(st == k))
    io.write_csv(out / "federated_risk.csv", RISK_HEADER,
                 _risk_rows(risk, horizon), prov)
    io.write_csv(out / "federated_stats.csv", ["name", "value"],
                 [["n_activations", fc.n_activations],
                  ["n_messages", result.n_messages],
                  ["total_bytes", result.total_bytes]], prov)


def _cmd_policy_eval(cfg: dict, seed: int, out: Path, prov: str) -> None:
    pol = cfg.get("policy", {})
    world = io.policy_world_from_config(cfg)
    if pol.get("grid", False):
        common = {k: pol[k] for k in ("budget", "t_star", "lookback",
                                      "n_samples", "burn_in", "p0_scale",
                                      "warm_start") if k in pol}
        points = default_grid(rhos=tuple(pol.get("rhos", (2, 7, 14, 21))),
                              taus=tuple(pol.get("taus", (0.2, 0.3, 0.4, 0.5))),
                              tau_sr=pol.get("tau_sr", 0.9), **common)
        seeds = pol.get("seeds", list(range(seed, seed + pol.get("n_seeds", 20))))
        rows = evaluate_policy_grid(points, world, seeds,
                                    max_workers=pol.get("max_workers"))
        header = ["policy", "kind", "rho", "tau_ei", "tau_sr", "seed",
                  "infected_pct", "quarantine_days", "tests_used"]
        io.write_csv(out / "policy_grid.csv", header,
                     ([r[k] for k in header] for r in rows), prov)
        sm = summarize_grid(rows)
        sheader = ["policy", "kind", "n_runs", "infected_pct_mean",
                   "infected_pct_std", "quarantine_days_mean",
                   "quarantine_days_std"]
        io.write_csv(out / "policy_summary.csv", sheader,
                     ([r[k] for k in sheader] for r in sm), prov)
    else:
        pp = io.policy_params_from_config(cfg)
        metrics = run_policy(pp, world, seed)
        io.write_csv(out / "policy_run.csv",
                     ["policy", "seed", "infected_pct", "quarantine_days",
                      "tests_used"],
                     [[pp.label(), seed, metrics.infected_pct,
                       metrics.quarantine_days, metrics.tests_used]], prov)
        comp = metrics.quarantine_composition
        io.write_csv(out / "quarantine_composition.csv",
                     ["day", "n_s", "n_e", "n_i", "n_r"],
                     ([d, *comp[d]] for d in range(1, comp.shape[0])), prov)


_COMMANDS = {
    "gen-contacts": _cmd_gen_contacts,
    "simulate": _cmd_simulate,
    "infer": _cmd_infer,
    "em-fit": _cmd_em_fit,
    "federated": _cmd_federated,
    "policy-eval": _cmd_policy_eval,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = io.load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out = Path(args.out if args.out is not None else cfg.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        prov = io.provenance_line(io.config_hash(cfg), seed)
        _COMMANDS[args.command](cfg, seed, out, prov)
        return EXIT_OK
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
