"""Held-out evaluation of a trained ensemble."""

from config import get_config
from data import generate_series, train_test_split
from utils import mean_absolute_error


def evaluate(model, cfg=None):
    """Mean absolute error of the model over the held-out horizon."""
    cfg = cfg or get_config()
    series = generate_series(cfg=cfg)
    history, future = train_test_split(series, cfg["horizon"])
    predictions = model.forecast(history, cfg["horizon"])
    return mean_absolute_error(future, predictions)
