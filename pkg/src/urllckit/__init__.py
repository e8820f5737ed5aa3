"""Cross-layer URLLC toolkit.

Finite-blocklength link formulas, statistical-QoS math, reliability models,
the power/bandwidth resource-allocation case studies, a minimal neural
engine with supervised / primal-dual / transfer pipelines, a
knowledge-assisted downlink scheduler, and the discrete-event simulator
that validates the analytical tails.
"""

__version__ = "0.1.0"
