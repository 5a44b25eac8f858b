"""Solve a plane wave on a two-subdomain duct and print the per-subdomain error.

Run from the repository root:  python3 demos/duct2_plane_wave.py
"""
import numpy as np

from helmdd.harness import parse_config, solve_case

case = parse_config({
    "name": "demo_duct2",
    "layout": {"kind": "duct", "n": 2},
    "wavenumbers": 13,
    "boundary": {"alpha": 1, "beta": 1, "data": "exact"},
    "problems": [{"id": "plane_wave", "label": "pw"}],
    "grids": [128],
    "mstar": 20,
})

report = solve_case(case, 128)
print(report.to_text())
for (label, n), (_, sols) in report.solutions.items():
    for i, s in enumerate(sols, start=1):
        print(f"{label} n={n} subdomain {i}: max |u_h| on M+ = {np.abs(s.values[s.mask]).max():.4f}")
