"""Grid convergence of the three manufactured solutions on the 3x3 square.

Run from the repository root:  python3 demos/convergence_study.py
Takes about a minute on a laptop; the Q-blocks are cached for later runs.
"""
from pathlib import Path

from helmdd.harness import load_config, run_case

cfg = load_config(Path(__file__).parent.parent / "configs" / "square3_uniform.yaml")
report = run_case(cfg, grids=[64, 128, 256])
print(report.to_text())
for label in sorted({r.problem for r in report.rows}):
    rates = ", ".join(f"{n}: {r:.2f}" for n, r in sorted(report.rates(label).items()))
    print(f"{label:>14} rates  {rates}")
