"""Drive a whole sweep from a JSON config, the same way the command line does."""

import json
import tempfile
from pathlib import Path

from ldp_influence.cli import load_report, main

config = {
    "dataset": {"synthetic": {"n": 2000, "seed": 0}},
    "epsilons": {"count": 10, "min": 0.01, "max": 5, "spacing": "log"},
    "groups": {"attribute": "x0", "value": "1", "fractions": [0.05, 0.1, 0.3], "seed": 0},
    "train": {"l2_strength": 0.01},
    "oracle": "subsample:4",
    "repeats": 3,
    "seed": 0,
}

with tempfile.TemporaryDirectory() as tmp:
    cfg_path = Path(tmp) / "sweep.json"
    cfg_path.write_text(json.dumps(config, indent=2))
    out = Path(tmp) / "out"
    # equivalent to: ldp-influence --config sweep.json --output-dir out
    code = main(["--config", str(cfg_path), "--output-dir", str(out)])
    print("exit status", code)
    print(sorted(p.name for p in out.iterdir()))

    report = load_report(out)
    # only 4 of the 10 epsilons were retrained; a fitted line calibrates the rest
    print("calibration", report.fit)
    for r in report.rows[:10]:
        tag = f"actual {r.actual_abs:.5f}" if r.actual_abs is not None else "not retrained"
        print(f"eps={r.epsilon:.3f} estimate {abs(r.estimated_delta):.5f} "
              f"calibrated {r.calibrated_delta:.5f} {tag}")
