"""Experiment configuration: the single source of truth for hyperparameters."""

HYPERPARAMETERS = {
    "learning_rate": 0.05,
    "window": 4,
    "horizon": 3,
    "epochs": 6,
    "seed": 13,
}


def get_config(overrides=None):
    """Return the hyperparameter table, optionally overridden per key."""
    cfg = dict(HYPERPARAMETERS)
    if overrides:
        cfg.update(overrides)
    return cfg
