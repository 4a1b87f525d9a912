"""Command-line front end.

    iotledger simulate --config scenario.yaml --out run/
    iotledger query --chain run/chain.bin --keys run/keys.json --query q.yaml
    iotledger verify --chain run/chain.bin --keys run/keys.json
    iotledger tamper --chain run/chain.bin --offset 500 --out bad.bin
    iotledger bench --suite search --dims 2,4,8 --sizes 1024,4096

Exit codes: 0 ok, 1 usage, 2 validation, 3 tamper detected.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import bench
from .aspe import key_from_bytes
from .config import ConfigError, load_config
from .crypto import public_key_from_bytes
from .device_sim import CloudStore, Simulation, keys_document
from .geometry import HyperRect
from .kdtree import Attribute, FormatError
from .ledger import Chain, Registry, validate_chain
from .search import Query, TamperError, UserKeys, end_to_end_query

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_TAMPER = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None:
        cfg.seed = args.seed
    sim = Simulation(cfg)
    chain = sim.run()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chain.export(out / "chain.bin")
    (out / "keys.json").write_text(json.dumps(keys_document(sim), indent=1))
    (out / "cloud.json").write_text(json.dumps(sim.cloud.to_json()))
    sim.write_events(out / "events.jsonl")
    logs = sum(len(b.body.logs) for b in chain.blocks)
    print(f"blocks={len(chain) - 1} logs={logs} devices={cfg.devices} files={len(sim.files_created)} "
          f"cloud_objects={len(sim.cloud.objects)} out={out}")
    return EXIT_OK


def load_keys(path):
    doc = json.loads(Path(path).read_text())
    devices = doc["devices"]
    registry = Registry(
        {bytes.fromhex(d["id"]): public_key_from_bytes(bytes.fromhex(d["public"])) for d in devices},
        public_key_from_bytes(bytes.fromhex(doc["cloud"]["public"])),
        int(doc["difficulty"]),
    )
    keys = UserKeys(
        {bytes.fromhex(d["id"]): key_from_bytes(bytes.fromhex(d["aspe_key"])) for d in devices},
        {bytes.fromhex(d["id"]): bytes.fromhex(d["sym_key"]) for d in devices},
    )
    schema = []
    for a in doc["attributes"]:
        if "values" in a:
            schema.append(Attribute(a["name"], values=tuple(a["values"])))
        else:
            schema.append(Attribute(a["name"], float(a["min"]), float(a["max"])))
    ids = [bytes.fromhex(d["id"]) for d in devices]
    return registry, keys, schema, ids


def parse_query(doc: dict, schema: list[Attribute], device_ids: list[bytes]) -> Query:
    """Query document: time_range [lo, hi], optional participants, rect in attribute units."""
    if not isinstance(doc, dict):
        raise ValueError("query must be a mapping")
    lo, hi = doc["time_range"]
    rect = doc["rect"]
    if len(rect) != len(schema):
        raise ValueError(f"rect has {len(rect)} dimensions, schema has {len(schema)}")
    bounds = []
    for a, (r_lo, r_hi) in zip(schema, rect):
        a_lo, a_hi = a.bounds()
        span = a_hi - a_lo
        norm = (lambda v: 0.5) if span == 0 else (lambda v, a=a, a_lo=a_lo, span=span: (a.code(v) - a_lo) / span)
        bounds.append((norm(r_lo), norm(r_hi)))
    participants = None
    if doc.get("participants") is not None:
        participants = set()
        for p in doc["participants"]:
            participants.add(device_ids[p] if isinstance(p, int) else bytes.fromhex(p))
    return Query((int(lo), int(hi)), HyperRect.from_bounds(bounds), participants)


def _hit_record(h) -> dict:
    rec = {
        "block": h.block_index,
        "leaf_id": h.leaf_id.hex(),
        "status": h.status,
        "ts": h.log.ts,
        "device": h.evidence["device_id"].hex(),
        "peer": h.log.peer_id.hex(),
        "file_digest": h.file_digest.hex() if h.file_digest else None,
        "proof_length": len(h.proof.path),
    }
    if h.file is not None:
        rec["attrs"] = list(h.file.attrs)
        rec["sender"] = h.file.sender_id.hex()
        rec["receiver"] = h.file.receiver_id.hex()
        rec["body_bytes"] = len(h.file.body)
    else:
        rec["evidence"] = {k: v.hex() for k, v in h.evidence.items() if isinstance(v, bytes)}
        rec["evidence"]["verified"] = h.evidence.get("verified")
    return rec


def cmd_query(args) -> int:
    try:
        registry, keys, schema, ids = load_keys(args.keys)
        qdoc = yaml.safe_load(Path(args.query).read_text())
        q = parse_query(qdoc, schema, ids)
    except (OSError, KeyError, ValueError, TypeError, IndexError, yaml.YAMLError) as exc:
        print(f"invalid keys or query: {exc}", file=sys.stderr)
        return EXIT_INVALID
    cloud_path = Path(args.cloud) if args.cloud else Path(args.chain).with_name("cloud.json")
    try:
        cloud = CloudStore.from_json(json.loads(cloud_path.read_text()))
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load cloud store: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for d in args.drop or []:
        cloud.drop(bytes.fromhex(d))
    for item in args.corrupt or []:
        digest, _, byte = item.partition(":")
        cloud.corrupt(bytes.fromhex(digest), int(byte or 0))
    try:
        chain = Chain.load(args.chain)
    except OSError as exc:
        print(f"cannot read chain: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FormatError, ValueError) as exc:
        print(f"tamper report: chain file does not parse ({exc})", file=sys.stderr)
        return EXIT_TAMPER
    verdict = validate_chain(chain.blocks, registry)
    if not verdict:
        print(f"tamper report: {verdict.reason}", file=sys.stderr)
        return EXIT_TAMPER
    try:
        result = end_to_end_query(q, chain, cloud, keys, registry, seed=args.seed, delta=args.delta)
    except TamperError as exc:
        print(f"tamper report: {exc}", file=sys.stderr)
        return EXIT_TAMPER
    lines = "".join(json.dumps(_hit_record(h), sort_keys=True) + "\n" for h in result.hits)
    if args.out:
        Path(args.out).write_text(lines)
    else:
        sys.stdout.write(lines)
    summary = result.summary()
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=1))
    print(f"hits={summary['hits']} blocks_searched={summary['blocks_searched']} status={summary['status']}",
          file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        registry = load_keys(args.keys)[0]
    except (OSError, KeyError, ValueError) as exc:
        print(f"invalid keys: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        chain = Chain.load(args.chain)
    except (FormatError, ValueError) as exc:
        print(f"tamper report: chain file does not parse ({exc})")
        return EXIT_TAMPER
    verdict = validate_chain(chain.blocks, registry)
    if not verdict:
        print(f"tamper report: {verdict.reason}")
        return EXIT_TAMPER
    print(f"ok: {len(chain) - 1} blocks verified")
    return EXIT_OK


def cmd_tamper(args) -> int:
    data = bytearray(Path(args.chain).read_bytes())
    if not 0 <= args.offset < len(data):
        print(f"offset {args.offset} outside file of {len(data)} bytes", file=sys.stderr)
        return EXIT_USAGE
    data[args.offset] ^= args.xor
    Path(args.out).write_bytes(bytes(data))
    print(f"flipped byte {args.offset} (xor 0x{args.xor:02x}) -> {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        rows = bench.run_suite(args.suite, args.dims, args.sizes, args.trials, args.seed)
        if args.out:
            with open(args.out, "w", newline="") as fh:
                bench.write_csv(rows, fh)
        else:
            bench.write_csv(rows, sys.stdout)
    except bench.BenchError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iotledger", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario and persist the chain")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.set_defaults(func=cmd_simulate)

    q = sub.add_parser("query", help="two-layer encrypted range query over a chain")
    q.add_argument("--chain", required=True)
    q.add_argument("--query", required=True)
    q.add_argument("--keys", required=True)
    q.add_argument("--cloud", help="cloud store (default: cloud.json next to the chain)")
    q.add_argument("--out", help="write hit records here instead of stdout")
    q.add_argument("--summary", help="write a JSON summary here")
    q.add_argument("--seed", type=int, default=0, help="trapdoor randomness")
    q.add_argument("--delta", type=float, default=0.5, help="anchor offset")
    q.add_argument("--drop", action="append", metavar="DIGEST", help="inject: cloud loses this object")
    q.add_argument("--corrupt", action="append", metavar="DIGEST:BYTE", help="inject: cloud flips this byte")
    q.set_defaults(func=cmd_query)

    v = sub.add_parser("verify", help="validate every block of a chain file")
    v.add_argument("--chain", required=True)
    v.add_argument("--keys", required=True)
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("tamper", help="flip one byte of a chain file")
    t.add_argument("--chain", required=True)
    t.add_argument("--offset", type=int, required=True)
    t.add_argument("--xor", type=lambda x: int(x, 0), default=0x01)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tamper)

    b = sub.add_parser("bench", help="timing suites, CSV output")
    b.add_argument("--suite", required=True, help="|".join(bench.SUITES))
    b.add_argument("--dims", type=_ints, default=[2, 4, 8])
    b.add_argument("--sizes", type=_ints, default=[1024, 4096])
    b.add_argument("--trials", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
