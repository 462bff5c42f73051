"""
Probing the mass threshold in 2D
================================

For γ(v) = exp(-v) in two dimensions, small bumps spread out while large
ones concentrate.  The probe only classifies what happens before the
horizon; it does not locate a threshold.  On the unit square the large
masses barely move (γ ~ exp(-mass)), so the box here has side 8.
Takes about ten seconds.
"""

from pathlib import Path

from kymo.experiments import critical_mass_probe, homogeneous_control
from kymo.io import parse_config

cfg = parse_config(Path(__file__).parent / "configs" / "probe_2d.json")
rep = critical_mass_probe(cfg, [1.0, 10.0, 30.0, 60.0])
for rid, r in rep.runs.items():
    print(f"mass {r['mass']:6.1f}: max u {r['max_u'][0]:8.3f} -> {r['max_u'][-1]:8.3f}  "
          f"{r['classification']:20s} F nonincreasing: {r['F_nonincreasing']}")

# A spatially uniform state of the same mass should not move at all.
ctl = homogeneous_control(cfg, 60.0)
print(f"homogeneous control: value {ctl['value']:.4f}, drift {ctl['max_drift']:.1e}")
