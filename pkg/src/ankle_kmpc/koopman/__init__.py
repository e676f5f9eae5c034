from .dictionary import DICTIONARY_NAMES, ObservableDictionary, lift
from .edmd import (RankDeficiencyWarning, SnapshotMatrices, build_snapshots, fit_edmd,
                   fit_projection, partition_operator)
from .evaluate import PredictionReport, evaluate_prediction, write_report_csv
from .model import (KoopmanModel, fit_koopman, initial_lift, predict_step,
                    rollout_predict)

__all__ = [
    "DICTIONARY_NAMES", "ObservableDictionary", "lift", "RankDeficiencyWarning",
    "SnapshotMatrices", "build_snapshots", "fit_edmd", "fit_projection", "partition_operator",
    "PredictionReport", "evaluate_prediction", "write_report_csv", "KoopmanModel",
    "fit_koopman", "initial_lift", "predict_step", "rollout_predict",
]
