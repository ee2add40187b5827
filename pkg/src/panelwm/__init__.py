"""panelwm: a consumer-panel world model.

A synthetic panel with known latent traits feeds a Bernoulli-Bernoulli deep
Boltzmann machine. The frozen model's mean-field beliefs drive outcome
adapters, free-energy consistency probes, and counterfactual uplift
estimation benchmarked against S/T/X/DR meta-learners and an honest causal
forest.
"""

__version__ = "0.1.0"
