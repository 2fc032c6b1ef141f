"""Closed-form partial impact against the explicit kernel sum, and the
finite-N bracket that links total impact to the square-root law."""

import numpy as np

from sqrtimpact.propagator import (
    PropagatorParams,
    bracket,
    closed_form_partial_impact,
    discrete_sum_impact,
)

p = PropagatorParams.from_i0(1.0, 4.0)
t = np.arange(1000, dtype=float)
print("   i   discrete    closed   rel.gap")
for i in (10, 30, 100, 300, 1000):
    d = discrete_sum_impact(1.0, t[:i], t[i - 1], p)
    c = float(closed_form_partial_impact(1.0, i, p))
    print(f"{i:4d} {d:10.4f} {c:9.4f} {abs(d / c - 1):9.5f}")

print("\n        N   bracket(N, i0=4)   1 - bracket")
for N in (1, 2, 10, 100, 1e4, 1e6, 1e8):
    b = float(bracket(N, 4.0))
    print(f"{N:9.0e} {b:18.6f} {1 - b:13.3e}")
