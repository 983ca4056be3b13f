"""rflab: a numerical laboratory for rectified flows.

Training of l1-constrained velocity networks on linear-interpolation couplings,
Euler-map sampling and reflow, closed-form velocity oracles, localized
generalization-bound evaluators, and two-sample transport metrics. Everything is
seed-addressed and reproducible; see the cli module for the command surface.
"""

__version__ = "0.1.0"
