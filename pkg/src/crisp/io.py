"""File formats and run configuration.

All logs and results are CSV with one provenance comment line
(`# crisp=<version> config_sha256=<hash> seed=<seed>`) before the header;
readers skip `#` lines. Configuration is a single JSON document validated
against a fixed schema: unknown sections or keys are rejected so typos fail
loudly instead of silently using defaults. Relative data paths in a config
resolve against the config file's directory.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from ._version import __version__
from .contacts import ContactLog, ContactPatternSpec, ContactPhase
from .em import EMConfig
from .federated import FederatedConfig
from .gibbs import GibbsConfig
from .model import (CrispError, DataError, DurationDistribution, ModelParams,
                    TestLog, default_qe, default_qi)
from .policy import PolicyParams, PolicyRunConfig


class ConfigError(CrispError):
    """Invalid run configuration (unknown keys, wrong types, bad values)."""


# ------------------------------------------------------------- provenance

def config_hash(cfg: dict) -> str:
    logical = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(logical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def provenance_line(cfg_hash: str, seed: int) -> str:
    return f"# crisp={__version__} config_sha256={cfg_hash} seed={seed}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: list[str], rows, provenance: str | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if provenance:
            fh.write(provenance + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Header plus (line_number, fields) rows, provenance/comments skipped."""
    path = Path(path)
    header = None
    rows: list[tuple[int, list[str]]] = []
    with path.open("r", newline="") as fh:
        for lineno, line in enumerate(csv.reader(fh), start=1):
            if not line or (line[0].startswith("#")):
                continue
            if header is None:
                header = [c.strip() for c in line]
            else:
                rows.append((lineno, line))
    if header is None:
        raise DataError(f"{path}: no header row found")
    return header, rows


def _int_field(path, lineno: int, name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"{path}:{lineno}: field {name!r} is not an integer: "
                        f"{raw!r}") from None


# ----------------------------------------------------------- contact files

def write_contacts(log: ContactLog, path, provenance: str | None = None) -> None:
    """Canonical CSV: one row per undirected pair, u < v, sorted by (t, u, v)."""
    J = log.n_channels
    header = ["u", "v", "t"] + [f"x_{j + 1}" for j in range(J)]
    m = log.src < log.dst
    order = np.lexsort((log.dst[m], log.src[m], log.day[m]))
    src, dst, day, x = log.src[m][order], log.dst[m][order], log.day[m][order], log.x[m][order]
    rows = ([int(s), int(d), int(t)] + [int(c) for c in xr]
            for s, d, t, xr in zip(src, dst, day, x))
    write_csv(path, header, rows, provenance)


def load_contacts(path, n_individuals: int | None = None) -> ContactLog:
    """Parse a contact CSV; one direction per pair suffices (closure applied)."""
    path = Path(path)
    header, rows = read_csv(path)
    if header[:3] != ["u", "v", "t"] or len(header) < 4:
        raise DataError(f"{path}: header must be u,v,t,x_1,..,x_J, got {header}")
    J = len(header) - 3
    if header[3:] != [f"x_{j + 1}" for j in range(J)]:
        raise DataError(f"{path}: channel columns must be x_1..x_{J}, got {header[3:]}")
    src, dst, day = [], [], []
    x = []
    for lineno, fields in rows:
        if len(fields) != 3 + J:
            raise DataError(f"{path}:{lineno}: expected {3 + J} fields, got {len(fields)}")
        u = _int_field(path, lineno, "u", fields[0])
        v = _int_field(path, lineno, "v", fields[1])
        t = _int_field(path, lineno, "t", fields[2])
        if u == v:
            raise DataError(f"{path}:{lineno}: self-contact (u = v = {u})")
        src.append(u)
        dst.append(v)
        day.append(t)
        x.append([_int_field(path, lineno, h, f)
                  for h, f in zip(header[3:], fields[3:])])
    if not src:
        n = n_individuals if n_individuals is not None else 0
        return ContactLog.empty(n, n_channels=J)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    day = np.asarray(day, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    n = n_individuals if n_individuals is not None else int(max(src.max(), dst.max())) + 1
    try:
        log = ContactLog.build(src, dst, day, x, n, symmetrize=True, dedup=False)
        log.validate_symmetric()
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    return log


# -------------------------------------------------------------- test files

def write_tests(tests: TestLog, path, provenance: str | None = None) -> None:
    header = ["u", "t", "o"]
    rows = ([int(u), int(t), int(o)]
            for u, t, o in zip(tests.u, tests.day, tests.outcome))
    write_csv(path, header, rows, provenance)


def load_tests(path, n_individuals: int | None = None,
               horizon: int | None = None) -> TestLog:
    """Parse a test CSV of u,t,o rows; repeated (u,t) tests are all kept."""
    path = Path(path)
    header, rows = read_csv(path)
    if header != ["u", "t", "o"]:
        raise DataError(f"{path}: header must be u,t,o, got {header}")
    recs = []
    for lineno, fields in rows:
        if len(fields) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
        u = _int_field(path, lineno, "u", fields[0])
        t = _int_field(path, lineno, "t", fields[1])
        o = _int_field(path, lineno, "o", fields[2])
        if o not in (0, 1):
            raise DataError(f"{path}:{lineno}: outcome must be 0 or 1, got {o}")
        if t < 1:
            raise DataError(f"{path}:{lineno}: test day must be >= 1, got {t}")
        if horizon is not None and t > horizon:
            raise DataError(f"{path}:{lineno}: test day {t} beyond horizon {horizon}")
        recs.append((u, t, o))
    if n_individuals is None:
        n_individuals = max((u for u, _, _ in recs), default=-1) + 1
    return TestLog.from_records(recs, n_individuals)


# ------------------------------------------------------------ configuration

_NUM = (int, float)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {"p0": _NUM, "p": list, "alpha": _NUM, "beta": _NUM,
              "qe": list, "qi": list},
    "contacts": {"n": int, "horizon": int, "p_channel": _NUM, "phases": list,
                 "bubble_size": int, "n_channels": int, "channel": int},
    "scenario": {"name": str, "n": int, "horizon": int, "p0": _NUM,
                 "p_channel": _NUM, "n_samples": int, "patient_zero": int,
                 "change_day": int, "release_day": int, "bubble_size": int},
    "data": {"contacts": str, "tests": str, "horizon": int,
             "n_individuals": int, "day": int},
    "gibbs": {"n_samples": int, "burn_in": int, "thinning": int,
              "sweep": str, "method": str},
    "em": {"max_iters": int, "tol": _NUM, "e_samples": int, "e_burn_in": int,
           "sgd_steps": int, "sgd_rate": _NUM, "batch_size": int,
           "full_batch_limit": _NUM, "freeze_p0": bool},
    "federated": {"n_activations": int, "schedule": str, "replay": list,
                  "delay": int, "burn_in": int},
    "policy": {"kind": str, "rho": int, "tau_ei": _NUM, "tau_sr": _NUM,
               "budget": int, "t_star": int, "lookback": int,
               "n_samples": int, "burn_in": int, "p0_scale": _NUM,
               "warm_start": bool, "grid": bool, "rhos": list, "taus": list,
               "seeds": list, "n_seeds": int, "max_workers": int},
    "world": {"n": int, "horizon": int, "r0": _NUM, "p_channel": _NUM,
              "p0": _NUM, "alpha": _NUM, "beta": _NUM, "patient_zero": int,
              "symptomatic_prob": _NUM},
}
_PHASE_KEYS = {"start": int, "end": int, "r0": _NUM, "bubbles": bool,
               "intra_r0": _NUM, "inter_r0": _NUM}
_TOP_KEYS = {"seed": int, "out": str}


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    for key, val in cfg.items():
        if key.startswith("_"):
            continue
        if key in _TOP_KEYS:
            if not isinstance(val, _TOP_KEYS[key]) or isinstance(val, bool):
                raise ConfigError(f"config key {key!r} must be {_TOP_KEYS[key].__name__}")
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(val, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        allowed = _SCHEMA[key]
        for k, v in val.items():
            if k not in allowed:
                raise ConfigError(f"unknown key {k!r} in config section {key!r}")
            want = allowed[k]
            if want is int:
                ok = isinstance(v, int) and not isinstance(v, bool)
            elif want is _NUM:
                ok = isinstance(v, _NUM) and not isinstance(v, bool)
            else:
                ok = isinstance(v, want)
            if not ok:
                name = want.__name__ if isinstance(want, type) else "number"
                raise ConfigError(f"config {key}.{k} must be {name}")
    for ph in cfg.get("contacts", {}).get("phases", []):
        if not isinstance(ph, dict):
            raise ConfigError("contacts.phases entries must be objects")
        for k in ph:
            if k not in _PHASE_KEYS:
                raise ConfigError(f"unknown key {k!r} in contact phase")


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    validate_config(cfg)
    cfg["_dir"] = str(path.parent)
    return cfg


def data_path(cfg: dict, name: str) -> Path:
    """Resolve a data.* path relative to the config file's directory."""
    sect = cfg.get("data", {})
    if name not in sect:
        raise ConfigError(f"config is missing data.{name}")
    p = Path(sect[name])
    if not p.is_absolute():
        p = Path(cfg.get("_dir", ".")) / p
    return p


# ----------------------------------------------------- config-to-object glue

def model_params_from_config(cfg: dict) -> ModelParams:
    m = cfg.get("model", {})
    qe = DurationDistribution.from_weights(m["qe"]) if "qe" in m else default_qe()
    qi = DurationDistribution.from_weights(m["qi"]) if "qi" in m else default_qi()
    return ModelParams(p0=m.get("p0", 1e-4), p=m.get("p", [0.025]),
                       alpha=m.get("alpha", 0.001), beta=m.get("beta", 0.01),
                       qE=qe, qI=qi)


def pattern_spec_from_config(cfg: dict) -> ContactPatternSpec:
    c = dict(cfg.get("contacts", {}))
    if "n" not in c or "horizon" not in c:
        raise ConfigError("config section 'contacts' needs n and horizon")
    phases = [ContactPhase(**ph) for ph in c.pop("phases", [])] or \
        [ContactPhase(1, c["horizon"] - 1, r0=2.5)]
    return ContactPatternSpec(n=c["n"], horizon=c["horizon"],
                              p_channel=c.get("p_channel", 0.025),
                              phases=phases,
                              bubble_size=c.get("bubble_size", 20),
                              n_channels=c.get("n_channels", 1),
                              channel=c.get("channel", 0))


def gibbs_config_from_config(cfg: dict) -> GibbsConfig:
    return GibbsConfig(**cfg.get("gibbs", {}))


def em_config_from_config(cfg: dict) -> EMConfig:
    return EMConfig(**cfg.get("em", {}))


def federated_config_from_config(cfg: dict) -> FederatedConfig:
    f = dict(cfg.get("federated", {}))
    f.pop("burn_in", None)
    return FederatedConfig(**f)


def policy_params_from_config(cfg: dict) -> PolicyParams:
    p = {k: v for k, v in cfg.get("policy", {}).items()
         if k in ("kind", "rho", "tau_ei", "tau_sr", "budget", "t_star",
                  "lookback", "n_samples", "burn_in", "p0_scale", "warm_start")}
    return PolicyParams(**p)


def policy_world_from_config(cfg: dict) -> PolicyRunConfig:
    return PolicyRunConfig(**cfg.get("world", {}))
