"""Deterministic federated-learning simulator for long-tailed data.

Clients distill a frozen vision-language teacher into local models; the
server matches synthesized per-class features to aggregated real gradients,
keeps them near their class prototypes, and retrains the classifier head on
the resulting balanced feature bank.
"""

__version__ = "0.1.0"
