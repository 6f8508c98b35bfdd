"""File formats for the experiment harness.

Trajectory files are line-oriented: a JSON header line carrying the format
version and the prior box, then one JSON episode record per line. Records
hold only what the experimentalist can see — the initial sighting and the
(state, action) sequence — never observations or beliefs, which are the
agent's private variables and must be re-imputed at inference time.

Config and parameter files are flat key = value text; run manifests are
JSON with sha256 digests of every input and output file.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time

import numpy as np

from .env import PARAM_NAMES, PRIOR_BOX, TaskParams
from .inverse import EpisodeRecord, IRCConfig, ThetaEstimate

TRAJ_FORMAT_VERSION = 1

# fields an episode record line may carry; observations and beliefs are
# deliberately unrepresentable in the schema
EPISODE_FIELDS = {"seed", "phi_id", "o0", "states", "actions"}


class SchemaError(ValueError):
    """Raised when a data file violates its declared format."""


def _fmt(x: float) -> float:
    return float(f"{x:.17g}")


def serialize_dataset(episodes: list[EpisodeRecord]) -> str:
    """Episodes -> trajectory-file text (header line + one line each)."""
    header = {
        "format_version": TRAJ_FORMAT_VERSION,
        "prior_box": {k: list(v) for k, v in PRIOR_BOX.items()},
    }
    lines = [json.dumps(header, sort_keys=True)]
    for ep in episodes:
        rec = {
            "seed": int(ep.seed),
            "phi_id": ep.phi_id,
            "o0": [_fmt(v) for v in ep.o0],
            "states": [[_fmt(v) for v in row] for row in ep.states],
            "actions": [[_fmt(v) for v in row] for row in ep.actions],
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def parse_dataset(text: str) -> list[EpisodeRecord]:
    """Trajectory-file text -> episodes; errors carry the offending line."""
    lines = text.splitlines()
    if not lines:
        raise SchemaError("trajectory file is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line 1: header is not valid JSON ({exc})") from exc
    version = header.get("format_version")
    if version != TRAJ_FORMAT_VERSION:
        raise SchemaError(
            f"unsupported trajectory format version {version!r}; "
            f"this build reads version {TRAJ_FORMAT_VERSION}")
    episodes = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {i}: not valid JSON ({exc})") from exc
        extra = set(rec) - EPISODE_FIELDS
        if extra:
            raise SchemaError(f"line {i}: unexpected fields {sorted(extra)}")
        missing = EPISODE_FIELDS - set(rec)
        if missing:
            raise SchemaError(f"line {i}: missing fields {sorted(missing)}")
        try:
            episodes.append(EpisodeRecord(
                o0=np.array(rec["o0"], dtype=float),
                states=np.array(rec["states"], dtype=float),
                actions=np.array(rec["actions"], dtype=float),
                phi_id=str(rec["phi_id"]),
                seed=int(rec["seed"]),
            ))
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"line {i}: {exc}") from exc
    if not episodes:
        raise SchemaError("trajectory file has a header but no episodes")
    return episodes


def save_dataset(path, episodes: list[EpisodeRecord]) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_dataset(episodes))


def load_dataset(path) -> list[EpisodeRecord]:
    with open(path) as fh:
        return parse_dataset(fh.read())


# ---------------------------------------------------------------------------
# key = value files: task parameters and config dataclasses


def serialize_params(theta: TaskParams) -> str:
    return "".join(f"{n} = {getattr(theta, n):.17g}\n" for n in PARAM_NAMES)


def parse_params(text: str) -> TaskParams:
    values = _parse_kv(text)
    extra = set(values) - set(PARAM_NAMES)
    if extra:
        raise SchemaError(f"unknown parameter names {sorted(extra)}")
    missing = set(PARAM_NAMES) - set(values)
    if missing:
        raise SchemaError(f"missing parameter names {sorted(missing)}")
    try:
        return TaskParams(**{n: float(values[n]) for n in PARAM_NAMES})
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def _parse_kv(text: str) -> dict:
    values = {}
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise SchemaError(f"line {i}: expected 'key = value', got {stripped!r}")
        key, _, val = stripped.partition("=")
        values[key.strip()] = val.strip()
    return values


def serialize_config(cfg) -> str:
    """Any flat dataclass -> key = value text."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {v:.17g}\n" if isinstance(v, float)
                     else f"{f.name} = {v}\n")
    return "".join(lines)


def parse_config(text: str, cls):
    """key = value text -> dataclass `cls`, with unknown-key errors."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = _parse_kv(text)
    extra = set(values) - set(fields)
    if extra:
        raise SchemaError(f"unknown config keys {sorted(extra)} for {cls.__name__}")
    kwargs = {}
    for name, raw in values.items():
        typ = fields[name].type
        try:
            if typ in ("int", int):
                kwargs[name] = int(raw)
            elif typ in ("float", float):
                kwargs[name] = float(raw)
            else:
                kwargs[name] = raw
        except ValueError as exc:
            raise SchemaError(f"config key {name}: {exc}") from exc
    return cls(**kwargs)


def load_config(path, cls):
    with open(path) as fh:
        return parse_config(fh.read(), cls)


# ---------------------------------------------------------------------------
# fit reports and run manifests


def fit_report(result: ThetaEstimate, config: IRCConfig) -> str:
    """Fit outcome as a JSON document (final estimate, trace, convergence).

    Deliberately timestamp-free so identically seeded runs agree byte for
    byte; wall-clock timing belongs in the manifest.
    """
    doc = {
        "theta_hat": {n: _fmt(v) for n, v in zip(PARAM_NAMES, result.theta)},
        "u_hat": [_fmt(v) for v in result.u],
        "converged": bool(result.converged),
        "n_iter": int(result.n_iter),
        "trace_loglik": [_fmt(v) for v in result.trace_ll],
        "trace_u": [[_fmt(v) for v in row] for row in result.trace_u],
        "config": dataclasses.asdict(config),
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def parse_fit_report(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"fit report is not valid JSON ({exc})") from exc


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, command: str, config_snapshot: dict, seeds: dict,
                   inputs: list, outputs: list, code_version: str) -> None:
    """Record what a command ran with and what it touched.

    Digests cover every input and output file, so any run is checkable
    after the fact; the timestamp is the only non-reproducible field.
    """
    doc = {
        "command": command,
        "config": config_snapshot,
        "seeds": seeds,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs},
        "code_version": code_version,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
