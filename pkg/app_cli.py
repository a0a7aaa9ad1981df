import os
import json
import copy
import argparse
import logging
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

import report
from presets import NESTED, PRESETS
from weakprior_core import configure_logging
from weakprior_core.core_model import RngHandle, save_image, save_vector
from weakprior_core.errors import ConfigError, WeakPriorError
from weakprior_core.experiments import RUNNERS

log = logging.getLogger("weakprior_core.cli")

DESCRIPTIONS = {
    "posterior": "Exact mixture posterior and collapse report for one observation",
    "gap-stats": "Per-dimension score gap over a synthetic image dataset under random masks",
    "hoeffding": "Monte-Carlo check of the small-gap frequency against its exponential bound",
    "collapse-sweep": "Wrong-component mass vs number of measurements, against the collapse bound",
    "consistency": "Posterior ball mass around x* as repeated measurements accumulate",
    "solve": "One inverse problem solved by latent optimization on the sphere",
    "bench": "Matched / mismatched / guided-sampling grid over the four image tasks",
    "failure-sweep": "Box-fraction and super-resolution sweeps where weak priors start to matter",
    "ablation": "Adam vs AdamSphere crossed with holdout top-K vs final-iterate stopping",
}


def _check_keys(where: str, given: Dict, allowed: Dict):
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)} in {where}; valid keys: {', '.join(sorted(allowed))}")


def load_config(subcommand: str, path: Optional[str] = None) -> Dict:
    """Preset for `subcommand` with the JSON file at `path` merged over it."""
    cfg = copy.deepcopy(PRESETS[subcommand])
    if not path:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        user = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    _check_keys(f"{subcommand} config", user, cfg)
    for key, value in user.items():
        if key in NESTED and key in cfg and isinstance(value, dict):
            _check_keys(f"'{key}'", value, NESTED[key])
            cfg[key] = dict(cfg[key], **value)
        else:
            cfg[key] = value
    return cfg


def _threads(flag: Optional[int]) -> int:
    if flag is not None:
        return flag
    raw = os.environ.get("WEAKPRIOR_THREADS", "1")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"WEAKPRIOR_THREADS must be an integer, got {raw!r}") from None


def write_outputs(subcommand: str, result, out_dir: Path) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [report.write_json(out_dir / f"{subcommand.replace('-', '_')}.json", result.summary)]
    for name, (header, rows) in result.tables.items():
        paths.append(report.write_csv(out_dir / name, header, rows))
    for name, grid in result.images.items():
        paths.append(save_image(out_dir / name, grid))
    for name, vec in result.vectors.items():
        paths.append(save_vector(out_dir / name, vec))
    return paths


def run(subcommand: str, config_path: Optional[str] = None, seed: int = 0,
        out_dir: Optional[str] = None, threads: Optional[int] = None) -> int:
    """Run one subcommand end to end; returns the process exit code."""
    try:
        cfg = load_config(subcommand, config_path)
        n_jobs = _threads(threads)
        out = Path(out_dir or os.environ.get("WEAKPRIOR_OUT", "out")) / subcommand
        base_dir = Path(config_path).parent if config_path else Path(".")
        result = RUNNERS[subcommand](cfg, RngHandle(seed), n_jobs, base_dir)
        paths = write_outputs(subcommand, result, out)
        paths.append(report.write_manifest(out, subcommand, cfg, seed, paths))
    except ConfigError as e:
        print(f"[ERROR] {e}")
        return 2
    except WeakPriorError as e:
        print(f"[ERROR] {type(e).__name__}: {e}")
        return 1
    except Exception as e:
        log.debug("unexpected failure", exc_info=True)
        print(f"[ERROR] {subcommand} failed: {e}")
        return 1
    for line in result.lines:
        log.info(line)
    for p in paths:
        print(f"[OK] wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakprior",
                                     description="Linear inverse problems with weak generative priors")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, help_text in DESCRIPTIONS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config merged over the preset")
        p.add_argument("--seed", type=int, default=0, help="Root seed (default 0)")
        p.add_argument("--out", help="Output directory (default $WEAKPRIOR_OUT or ./out)")
        p.add_argument("--threads", type=int, help="Worker threads (default $WEAKPRIOR_THREADS or 1)")
        p.add_argument("--log-level", default=None, help="Logging level (default $WEAKPRIOR_LOG_LEVEL or INFO)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    level = args.log_level or os.environ.get("WEAKPRIOR_LOG_LEVEL", "INFO")
    try:
        configure_logging(level)
    except ValueError:
        print(f"[ERROR] unknown log level {level!r}")
        return 2
    return run(args.subcommand, args.config, args.seed, args.out, args.threads)


if __name__ == "__main__":
    raise SystemExit(main())
