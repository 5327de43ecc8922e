"""
Command Line
hchernoff <kind> [--config FILE] [--out DIR] [--threads N] [--seed S] [--section.key VALUE ...]

Any extra `--dotted.key value` pair overrides the matching config entry,
e.g. `--plan.n_list 2,4,8` or `--grid.n_z 64`. Values are read as JSON when
possible; comma-separated values become lists.
"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from app.config import settings
from app.errors import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, ConfigError, HeisenbergError
from app.schemas import ExperimentConfig


logger = logging.getLogger("cli")

KINDS = ("heat", "schrodinger", "fk", "walk", "verify", "dump-kernel")


def configure_logging(level: Optional[str] = None):
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hchernoff", description="Chernoff evolution on the Heisenberg group")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (replaced atomically)")
        p.add_argument("--threads", type=int, help="worker cap for per-slice parallelism")
        p.add_argument("--seed", type=int, help="master seed")
    schema = sub.add_parser("schema", help="print the experiment config JSON schema")
    schema.add_argument("--out", help="write the schema to this file instead of stdout")
    return parser


def parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    if "," in raw:
        return [parse_value(part) for part in raw.split(",") if part != ""]
    return raw


def parse_overrides(extra: Sequence[str]) -> Dict[str, Any]:
    """['--plan.n_list', '2,4,8'] -> {'plan.n_list': [2, 4, 8]}."""
    overrides = {}
    items = list(extra)
    i = 0
    while i < len(items):
        key = items[i]
        if not key.startswith("--") or len(key) <= 2:
            raise ConfigError(f"unexpected argument {key!r}")
        key = key[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        elif i + 1 < len(items):
            raw = items[i + 1]
            i += 2
        else:
            raise ConfigError(f"override --{key} needs a value")
        overrides[key.replace("-", "_")] = parse_value(raw)
    return overrides


def apply_overrides(data: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    for dotted, value in overrides.items():
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"cannot override {dotted}: {part} is not a section")
            node = child
        node[parts[-1]] = value
    return data


def load_config(kind: str, path: Optional[str], overrides: Dict[str, Any], seed: Optional[int] = None) -> ExperimentConfig:
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
    data["kind"] = kind
    if seed is not None:
        data["seed"] = seed
    return ExperimentConfig.model_validate(apply_overrides(data, overrides))


def emit_error(payload: Dict[str, Any]):
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    if not logging.getLogger().handlers:
        configure_logging()
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)

    if args.command == "schema":
        text = json.dumps(ExperimentConfig.model_json_schema(), indent=2, sort_keys=True)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text + "\n")
            print(f"[Schema] written to {args.out}")
        else:
            print(text)
        return EXIT_OK

    from app.services.experiments import run

    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            settings.threads = args.threads
        cfg = load_config(args.command, args.config, parse_overrides(extra), args.seed)
        summary = run(cfg, args.out)
    except ValidationError as e:
        emit_error({
            "error": "invalid experiment config",
            "type": "ValidationError",
            "detail": json.loads(e.json(include_url=False)),
        })
        return EXIT_CONFIG
    except HeisenbergError as e:
        logger.error(f"{type(e).__name__}: {e}")
        emit_error(e.to_dict())
        return e.exit_code

    print(f"[Run] {args.command} finished -> {summary['output_dir']}")
    if summary.get("passed") is False:
        emit_error({"error": "verification failed", "type": "VerifyFailed", "detail": {"output_dir": summary["output_dir"]}})
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
