"""Script to write sample experiment configs and run them end to end.

Each config lands in <out>/configs/<name>.json and its artifacts in
<out>/<name>/. Useful for checking the whole pipeline without writing
configs by hand.

Usage:
    python scripts/run_sample_experiments.py [--out sample_runs] [--only fmo,distance]
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.main import main as run_cli

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

CYCLIC = {"kind": "cyclic", "dimension": 2, "length": 1.0}
SCHOTTKY = {
    "kind": "schottky2d",
    "pairs": [
        {"a": {"angle": 0.0, "distance": 1.0}, "b": {"angle": math.pi, "distance": 1.0}},
        {"a": {"angle": math.pi / 2, "distance": 1.0}, "b": {"angle": -math.pi / 2, "distance": 1.0}},
    ],
}
R0_CHART = math.tanh(0.2)


def sample_configs() -> dict:
    """Configs covering every command at desk-scale budgets."""
    seeds = {"root": 20240601}
    return {
        "distance": {"schema": "1", "command": "distance", "group": CYCLIC, "points": [[0.0, 0.0], [math.tanh(0.35), 0.0]]},
        "orbit": {"schema": "1", "command": "orbit", "group": SCHOTTKY, "points": [[0.0, 0.0]], "radius": 4.0, "budgets": {"max_word_len": 6}},
        "dirichlet": {"schema": "1", "command": "dirichlet", "group": CYCLIC, "points": [[0.1, 0.2], [0.3, 0.0], [-0.5, 0.1]]},
        "measure": {
            "schema": "1",
            "command": "measure",
            "region": {"kind": "hyperbolic_ball", "center": [0.0, 0.0], "radius": 1.0},
            "seeds": seeds,
        },
        "modulus": {
            "schema": "1",
            "command": "modulus",
            "family": {"kind": "annulus", "r1": 0.25, "r2": 0.5, "count": 512},
            "element": "euclidean",
            "seeds": seeds,
        },
        "dilatation": {
            "schema": "1",
            "command": "dilatation",
            "map": {"kind": "radial_example", "alpha": 2.0, "m": 4},
            "points": [[0.1, 0.0], [0.5, 0.5], [0.0, 0.9], [-0.3, 0.2]],
        },
        "verify-poletsky": {
            "schema": "1",
            "command": "verify-poletsky",
            "group": CYCLIC,
            "map": {"kind": "fm_family", "r0": 0.4, "alpha": 2.0, "m": 4},
            "family": {"kind": "annulus", "r1": 0.9 * R0_CHART, "r2": 0.99 * R0_CHART, "count": 256},
            "density": {"kind": "annulus_extremal", "r1": 0.9 * R0_CHART, "r2": 0.99 * R0_CHART},
            "budgets": {"mc_samples": 100000},
            "seeds": seeds,
        },
        "verify-inverse": {
            "schema": "1",
            "command": "verify-inverse",
            "group": CYCLIC,
            "map": {"kind": "linear_chart", "matrix": [[2.0, 0.0], [0.0, 1.0]], "radius": 0.4},
            "family": {"kind": "box_crossing", "low": [-0.05, -0.05], "high": [0.05, 0.05], "count": 64},
            "density": {"kind": "constant", "value": 5.0, "region": {"kind": "box", "low": [-0.101, -0.051], "high": [0.101, 0.051]}},
            "element": "euclidean",
            "budgets": {"mc_samples": 100000},
            "seeds": seeds,
        },
        "fmo": {
            "schema": "1",
            "command": "fmo",
            "group": CYCLIC,
            "density": {"kind": "log_e_over_r"},
            "eps_max": 0.4,
            "levels": 8,
            "seeds": seeds,
        },
        "equicontinuity": {
            "schema": "1",
            "command": "equicontinuity",
            "group": CYCLIC,
            "map": {"kind": "fm_family", "r0": 0.4, "alpha": 2.0, "ms": list(range(1, 51))},
            "radii": [0.32, 0.16, 0.08, 0.04, 0.02],
            "seeds": seeds,
        },
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="sample_runs")
    parser.add_argument("--only", default="", help="comma-separated config names")
    args = parser.parse_args()

    out = Path(args.out)
    config_dir = out / "configs"
    config_dir.mkdir(parents=True, exist_ok=True)
    wanted = {name for name in args.only.split(",") if name}

    failures = 0
    for name, config in sample_configs().items():
        if wanted and name not in wanted:
            continue
        path = config_dir / f"{name}.json"
        path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
        logger.info(f"running sample '{name}'")
        status = run_cli(["--config", str(path), "--out", str(out / name)])
        if status != 0:
            failures += 1
            logger.warning(f"sample '{name}' exited with status {status}")
    logger.info(f"done: {failures} sample(s) with nonzero status")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
