"""Scenario configuration: YAML in, validated dataclass out.

Validation errors carry the 1-based line of the offending key so the CLI can
point at it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .kdtree import Attribute
from .ledger import MAX_DIFFICULTY


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class CloudFault:
    kind: str          # "drop" or "corrupt"
    object: int        # index of the stored object, in upload order
    byte: int = 0


@dataclass(frozen=True)
class ReceiptFault:
    step: int
    device: int


@dataclass
class ScenarioConfig:
    devices: int
    attributes: list[Attribute]
    topology: list[tuple[int, int]]
    seed: int = 0
    steps: int = 10
    rate: float = 1.0
    file_size: int = 64
    storage_cap: int = 4096
    difficulty: int = 8
    miner_probability: float = 0.5
    chain_suffix_length: int = 0
    start_ts: int = 1_700_000_000
    step_seconds: int = 60
    drain: bool = True
    cloud_faults: list[CloudFault] = field(default_factory=list)
    deny_receipt: list[ReceiptFault] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.attributes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attributes"] = [_attr_dict(a) for a in self.attributes]
        d["topology"] = [list(e) for e in self.topology]
        d["faults"] = {"cloud": d.pop("cloud_faults"), "deny_receipt": d.pop("deny_receipt")}
        return d


def _attr_dict(a: Attribute) -> dict:
    if a.categorical:
        return {"name": a.name, "values": list(a.values)}
    return {"name": a.name, "min": a.lo, "max": a.hi}


def _line_map(text: str) -> dict[tuple, int]:
    """Map key paths (tuples of str/int) to 1-based source lines."""
    lines: dict[tuple, int] = {}

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                lines[path + (k.value,)] = k.start_mark.line + 1
                walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, ())
    return lines


def parse_config(text: str) -> ScenarioConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None) from None
    lines = _line_map(text)

    def fail(msg, *path):
        while path and path not in lines:
            path = path[:-1]
        raise ConfigError(msg, lines.get(path))

    if not isinstance(raw, dict):
        fail("config must be a mapping")
    known = {"devices", "attributes", "topology", "seed", "steps", "rate", "file_size", "storage_cap",
             "difficulty", "miner_probability", "chain_suffix_length", "start_ts", "step_seconds",
             "drain", "faults"}
    for key in raw:
        if key not in known:
            fail(f"unknown key {key!r}", key)

    def integer(key, default=None, lo=None, hi=None):
        v = raw.get(key, default)
        if v is None:
            fail(f"missing required key {key!r}")
        if isinstance(v, bool) or not isinstance(v, int):
            fail(f"{key} must be an integer", key)
        if lo is not None and v < lo:
            fail(f"{key} must be >= {lo}, got {v}", key)
        if hi is not None and v > hi:
            fail(f"{key} must be <= {hi}, got {v}", key)
        return v

    def number(key, default, lo=None, hi=None):
        v = raw.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            fail(f"{key} must be a number", key)
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            fail(f"{key} must lie in [{lo}, {hi}], got {v}", key)
        return float(v)

    devices = integer("devices", lo=2)
    attrs_raw = raw.get("attributes")
    if not isinstance(attrs_raw, list) or not attrs_raw:
        fail("attributes must be a non-empty list", "attributes")
    attributes = []
    for i, a in enumerate(attrs_raw):
        if not isinstance(a, dict) or "name" not in a:
            fail("each attribute needs a name", "attributes", i)
        if "values" in a:
            vals = a["values"]
            if not isinstance(vals, list) or not vals or len(set(map(str, vals))) != len(vals):
                fail("values must be a non-empty list of distinct labels", "attributes", i, "values")
            attributes.append(Attribute(str(a["name"]), values=tuple(str(v) for v in vals)))
        else:
            lo, hi = a.get("min"), a.get("max")
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in (lo, hi)):
                fail("numeric attribute needs min and max", "attributes", i)
            if lo > hi:
                fail("min must not exceed max", "attributes", i, "min")
            attributes.append(Attribute(str(a["name"]), float(lo), float(hi)))

    topo_raw = raw.get("topology")
    if not isinstance(topo_raw, list) or not topo_raw:
        fail("topology must be a non-empty list of [a, b] edges", "topology")
    topology = []
    for i, e in enumerate(topo_raw):
        if (not isinstance(e, list) or len(e) != 2 or not all(isinstance(x, int) and not isinstance(x, bool) for x in e)
                or not all(0 <= x < devices for x in e) or e[0] == e[1]):
            fail(f"edge must join two distinct devices in [0, {devices})", "topology", i)
        topology.append((e[0], e[1]))

    file_size = integer("file_size", 64, lo=0)
    storage_cap = integer("storage_cap", 4096, lo=1)
    # Serialized file record: two ids, ts, attr count, attrs, body length, body.
    record = 16 * 2 + 12 + 8 * len(attributes) + 4 + file_size
    if record > storage_cap:
        fail(f"storage_cap {storage_cap} cannot hold one {record}-byte file record", "storage_cap")

    faults = raw.get("faults") or {}
    if not isinstance(faults, dict):
        fail("faults must be a mapping", "faults")
    cloud_faults, deny = [], []
    for i, f in enumerate(faults.get("cloud") or []):
        if not isinstance(f, dict) or f.get("kind") not in ("drop", "corrupt") or not isinstance(f.get("object"), int):
            fail("cloud fault needs kind (drop|corrupt) and object index", "faults", "cloud", i)
        cloud_faults.append(CloudFault(f["kind"], f["object"], int(f.get("byte", 0))))
    for i, f in enumerate(faults.get("deny_receipt") or []):
        if not isinstance(f, dict) or not isinstance(f.get("step"), int) or not isinstance(f.get("device"), int):
            fail("deny_receipt fault needs step and device", "faults", "deny_receipt", i)
        if not 0 <= f["device"] < devices:
            fail("deny_receipt device out of range", "faults", "deny_receipt", i)
        deny.append(ReceiptFault(f["step"], f["device"]))

    drain = raw.get("drain", True)
    if not isinstance(drain, bool):
        fail("drain must be true or false", "drain")

    return ScenarioConfig(
        devices=devices,
        attributes=attributes,
        topology=topology,
        seed=integer("seed", 0, lo=0),
        steps=integer("steps", 10, lo=0),
        rate=number("rate", 1.0, lo=0.0),
        file_size=file_size,
        storage_cap=storage_cap,
        difficulty=integer("difficulty", 8, lo=0, hi=MAX_DIFFICULTY),
        miner_probability=number("miner_probability", 0.5, lo=0.0, hi=1.0),
        chain_suffix_length=integer("chain_suffix_length", 0, lo=0),
        start_ts=integer("start_ts", 1_700_000_000, lo=0),
        step_seconds=integer("step_seconds", 60, lo=1),
        drain=drain,
        cloud_faults=cloud_faults,
        deny_receipt=deny,
    )


def load_config(path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
