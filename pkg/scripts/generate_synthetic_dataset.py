#!/usr/bin/env python3
"""
margins Synthetic Dataset Script
Writes a synthetic identity-annotated toxicity dataset with one planted
high-error group, plus its schema config and a ready-to-run run config
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Add project root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

try:
    from margins.schemas.synthetic_schema import PlantedSpec
    from margins.services.synthetic import generate_synthetic, planted_rows, write_synthetic
    from margins.utils.helpers import write_json
except ImportError as e:
    logger.error(f"Failed to import margins: {e}")
    logger.error("Make sure you're running this from the project root directory")
    sys.exit(1)

# Configuration
SYNTH_CONFIG = {
    "n": 2000,
    "n_groups": 24,
    "prevalence": 0.02,
    "inflation": 3.0,
    "seed": 0,
}

RUN_CONFIG = {
    "dataset_path": "synthetic.csv",
    "schema_path": "synthetic.schema.json",
    "seed": 0,
    "output_dir": "out",
    "embedding": {"dim": 32, "min_df": 2},
    "score_cache": ".margins_cache/scores.jsonl",
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="data/synthetic")
    parser.add_argument("--n", type=int, default=SYNTH_CONFIG["n"])
    parser.add_argument("--groups", type=int, default=SYNTH_CONFIG["n_groups"])
    parser.add_argument("--prevalence", type=float, default=SYNTH_CONFIG["prevalence"])
    parser.add_argument("--inflation", type=float, default=SYNTH_CONFIG["inflation"])
    parser.add_argument("--seed", type=int, default=SYNTH_CONFIG["seed"])
    args = parser.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    planted = PlantedSpec(prevalence=args.prevalence, inflation=args.inflation)
    table = generate_synthetic(n=args.n, n_groups=args.groups, planted=planted, seed=args.seed)
    write_synthetic(table, out_dir / RUN_CONFIG["dataset_path"], out_dir / RUN_CONFIG["schema_path"])
    write_json(out_dir / "run.json", {**RUN_CONFIG, "seed": args.seed})

    group = table.demographic_names[args.groups - 1]
    logger.info(f"Wrote {len(table)} rows to {out_dir}")
    logger.info(
        "Planted group: " + json.dumps({"group": group, "rows": int(planted_rows(table, group).sum())})
    )
    logger.info(f"Next: python -m margins.main run --config {out_dir / 'run.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
