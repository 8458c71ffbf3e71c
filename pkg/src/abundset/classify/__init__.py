from .fcnn import FcnnConfig, fcnn_predict, fcnn_predict_proba, fcnn_train
from .forest import ForestConfig, forest_predict, forest_predict_proba, forest_train
from .model import TrainedModel

__all__ = [
    "FcnnConfig", "ForestConfig", "TrainedModel",
    "fcnn_train", "fcnn_predict", "fcnn_predict_proba",
    "forest_train", "forest_predict", "forest_predict_proba",
]
