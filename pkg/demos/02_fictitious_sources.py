"""The fictitious-source test: a solve whose exact answer is u = 0.

Put the left incident field's source in the right half-plane and vice versa.
Then u_i^l and u_i^r are each outgoing in their own half-plane and the
transmission problem is solved by a zero total field. Any nonzero output
measures the discretisation error of the whole pipeline.
"""

import numpy as np

from leakywave.geometry import preset_potential
from leakywave.pipeline import build_setup, interface_jumps, solve_point_sources
from leakywave.potentials import FieldRequest, IncidentField, total_field

q_l, q_r = preset_potential("qa_left"), preset_potential("qa_right")
incident = IncidentField("point_source", {"l": [(1.0, 0.5)], "r": [(-1.5, 1.0)]})
x1 = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
x2 = np.linspace(-4.0, 4.0, 9)
heights = np.array([-2.0, 0.0, 1.0, 2.5])     # where the interface jumps are measured

setup = build_setup(q_l, q_r, depth=4.0, extra_stations=np.concatenate([x2, heights, [0.5, 1.0]]))
print(f"{setup.disc.n} contour nodes, truncated at |Im z| = 4")
_, data, density = solve_point_sources(setup, incident)
print(f"solve residual {density.residual:.1e}, condition estimate {density.cond:.0f}")

fields = total_field(FieldRequest(x1, x2), incident, density, setup.greens)
ratio = np.max(np.abs(fields["total"])) / np.max(np.abs(fields["incoming"]))
print(f"sup |u| / sup |u_i| = {ratio:.1e}")
jv, jd = interface_jumps(setup, incident, density, heights)
print(f"interface jumps: value {jv:.1e}, normal derivative {jd:.1e}")
