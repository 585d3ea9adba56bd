"""Digital-twin causal inference pipeline.

Generates a synthetic counterfactual cohort with a tabular diffusion
model, estimates per-row treatment effects with a two-learner forest
architecture and G-computation, and runs a downstream econometric battery:
cluster-robust conditional effects, quantile treatment effects, and
omitted-variable-bias sensitivity analysis. A simulated data-generating
process with known truth backs the verification suite.
"""

__version__ = "0.1.0"
