"""Pinned numerical constants.

``CAP_ORIGIN_Z3`` is the capacity of a single point of Z^3, i.e. 1/g(0,0).
It was produced by ``scripts/derive_cap_constant.py`` from two independent
oracles (box solves extrapolated in the radius, and escape-frequency Monte
Carlo), which agree to well within 1%.
"""

CAP_ORIGIN_Z3 = 0.65947
