"""ovrec: occluded-vehicle mask completion and appearance recovery.

Library + CLI for training and running the two-stage adversarial pipeline
(mask completion with coupled discriminators, then appearance recovery
with a weight-shared two-path generator), plus a deterministic synthetic
data generator, a vehicle-silhouette adversarial pool, and evaluation
metrics.
"""

__version__ = "0.1.0"
