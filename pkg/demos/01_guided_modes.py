"""Guided modes of the preset channel profiles at k = 3.

A mode is a real xi > k where the decaying transverse solutions from both
sides are parallel, i.e. their Wronskian vanishes. The stepped profile has a
closed-form dispersion relation, so it doubles as a check.
"""

import numpy as np

from leakywave.cli import square_well_modes
from leakywave.geometry import preset_potential
from leakywave.modes import eval_mode, find_modes

K = 3.0

for name in ("qa_left", "qa_right", "qb_right"):
    modes = find_modes(preset_potential(name), K)
    print(f"{name:9s} {len(modes)} modes: " + " ".join(f"{xi:.6f}" for xi in modes.frequencies))

exact = square_well_modes(K, 1.0, 3.0)
found = find_modes(preset_potential("qb_right"), K).frequencies
print(f"stepped profile vs dispersion relation: max rel. diff {np.max(np.abs(found - exact) / exact):.1e}")

# a mode decays like exp(-kappa |x2|) outside the channel
m = find_modes(preset_potential("qa_left"), K).modes[0]
x = np.array([5.0, 6.0])
print(f"tail ratio v(6)/v(5) = {(eval_mode(m, x)[1] / eval_mode(m, x)[0]).real:.6f}, "
      f"exp(-kappa) = {np.exp(-m.kappa):.6f}")
