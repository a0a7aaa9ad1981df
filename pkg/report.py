# report.py: CSV / JSON / manifest writers for experiment outputs
import csv
import hashlib
import json
import math
import platform
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import joblib
import numpy as np
import scipy

import weakprior_core


def _cell(v):
    # repr keeps full float precision and never uses locale separators
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def config_hash(config: Dict) -> str:
    canon = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def versions() -> Dict[str, str]:
    return {
        "weakprior": weakprior_core.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "joblib": joblib.__version__,
    }


def write_manifest(out_dir, subcommand: str, config: Dict, seed: int, outputs: List[Path]) -> Path:
    """manifest.json next to the outputs; no wall-clock fields so reruns are byte-identical."""
    manifest = {
        "subcommand": subcommand,
        "seed": int(seed),
        "config_sha256": config_hash(config),
        "config": config,
        "versions": versions(),
        "outputs": sorted(Path(p).name for p in outputs),
    }
    return write_json(Path(out_dir) / "manifest.json", manifest)

