"""Graph backdoor defense workbench.

Synthetic attributed graphs, backdoor injection, feature-homophily audits,
a reconstruction-based detector and noise-aware robust training.
"""
__version__ = "0.1.0"
