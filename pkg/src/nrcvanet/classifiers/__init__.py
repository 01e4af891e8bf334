from .bayes import NBModel, predict_nb, train_nb
from .dataset import Attribute, Dataset, feature_schema, load_dataset, save_dataset
from .ensemble import BoostModel, ForestModel, model_digest, train_adaboost_m1, train_random_forest
from .evaluation import CVResult, cross_validate, fold_assignment, sensitivity_analysis
from .serialization import dumps_model, load_model, loads_model, save_model
from .tree import TreeModel, entropy, gain_ratio, information_gain, train_c45

TRAINERS = {
    "ct": lambda ds: train_c45(ds),
    "nb": lambda ds: train_nb(ds),
    "rf": lambda ds: train_random_forest(ds, n_trees=100, m_features=4, seed=0),
    "boost": lambda ds: train_adaboost_m1(ds, T=10),
}

__all__ = [
    "Attribute",
    "BoostModel",
    "CVResult",
    "Dataset",
    "ForestModel",
    "NBModel",
    "TRAINERS",
    "TreeModel",
    "cross_validate",
    "dumps_model",
    "entropy",
    "feature_schema",
    "fold_assignment",
    "gain_ratio",
    "information_gain",
    "load_dataset",
    "load_model",
    "loads_model",
    "model_digest",
    "predict_nb",
    "save_dataset",
    "save_model",
    "sensitivity_analysis",
    "train_adaboost_m1",
    "train_c45",
    "train_nb",
    "train_random_forest",
]
