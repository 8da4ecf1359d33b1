"""Training loop: adapt ensemble weights over the history."""

from config import get_config
from data import generate_series, train_test_split
from model import SmoothingEnsemble
from optimizer import update_weights


def train(cfg=None):
    """Adapt member weights on the training split and return the model."""
    cfg = cfg or get_config()
    series = generate_series(cfg=cfg)
    history, _future = train_test_split(series, cfg["horizon"])
    model = SmoothingEnsemble(cfg=cfg)
    window = cfg["window"]
    for _epoch in range(cfg["epochs"]):
        for end in range(window, len(history)):
            context = history[end - window:end]
            target = history[end]
            members = model.member_forecasts(context)
            losses = [abs(target - member) for member in members]
            model.weights = update_weights(
                model.weights, losses, cfg["learning_rate"]
            )
    return model
