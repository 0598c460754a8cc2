"""Run every spec in scripts/specs and print the report.

    python3 scripts/run_all.py [--out runs] [--seed 0] [--skip-sampled]
"""

import argparse
import json
import sys
from pathlib import Path

from pepkit.cli import main

COMMANDS = {"PepSweep": "pep", "CertIdentity": "cert", "DescentSweep": "descent", "IpmRun": "ipm", "SamplerCheck": "sample"}


def run(out, seed, skip_sampled):
    codes = []
    for path in sorted((Path(__file__).parent / "specs").glob("*.json")):
        spec = json.loads(path.read_text())
        if skip_sampled and spec.get("mode") == "sampled":
            continue
        sub = out / path.stem
        print(f"{path.name} -> {sub}", flush=True)
        codes.append(main([COMMANDS[spec["kind"]], "--spec", str(path), "--seed", str(seed), "--out", str(sub)]))
    for sub in sorted(p for p in out.iterdir() if p.is_dir()):
        print(f"[{sub.name}]")
        codes.append(main(["report", "--out", str(sub)]))
    return max(codes, default=2)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-sampled", action="store_true")
    a = ap.parse_args()
    sys.exit(run(a.out, a.seed, a.skip_sampled))
