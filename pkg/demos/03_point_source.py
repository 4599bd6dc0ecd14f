"""A physical point source in the left guide and its field across the junction.

Writes field.csv (x1,x2,re_u,im_u) with the total field on a small grid and
prints how much of it stays near the channel on each side.
"""

import csv

import numpy as np

from leakywave.geometry import preset_potential
from leakywave.pipeline import build_setup, check_targets, solve_point_sources
from leakywave.potentials import FieldRequest, IncidentField, total_field

q_l, q_r = preset_potential("qa_left"), preset_potential("qa_right")
incident = IncidentField("point_source", {"l": [(-1.5, 1.0)]})
x1 = np.linspace(-3.0, 3.0, 12)
x2 = np.linspace(-4.0, 4.0, 17)

setup = build_setup(q_l, q_r, depth=6.0, extra_stations=np.concatenate([x2, [1.0]]))
X1, X2 = np.meshgrid(x1, x2, indexing="ij")
check_targets(setup.contour, X1.ravel(), X2.ravel())
_, _, density = solve_point_sources(setup, incident)
fields = total_field(FieldRequest(x1, x2), incident, density, setup.greens)

u = fields["total"].reshape(X1.shape)
inside = np.abs(x2) <= 1.0
for side, cols in (("left", x1 < 0), ("right", x1 > 0)):
    share = np.sum(np.abs(u[cols][:, inside]) ** 2) / np.sum(np.abs(u[cols]) ** 2)
    print(f"{side:5s}: {share:.0%} of |u|^2 on the grid lies within |x2| <= 1")

with open("field.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["x1", "x2", "re_u", "im_u"])
    for a, b, v in zip(fields["x1"], fields["x2"], fields["total"]):
        w.writerow([a, b, v.real, v.imag])
print("wrote field.csv")
