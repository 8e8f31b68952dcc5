"""Counterfactual recourse certified against an ellipsoidal set of
near-optimal models, with ensemble evaluators, scoring metrics, an experiment
pipeline, and a JSON/HTTP facade."""

from .data import (Dataset, FeatureSpec, Scaler, SplitPlan, balance_classes,
                   load_csv, load_frame, preprocess, preprocessing_report,
                   stratified_folds)
from .ellipsoid import (ModelSetEllipsoid, WorstCase, alignment_spectrum,
                        build_ellipsoid, epsilon_from_relative, from_parts,
                        is_robust, membership, robust_logits, worst_case_logit)
from .evaluators import (EnsembleSpec, ModelEnsemble, build_awp, build_dropout,
                         build_ellipsoid_sampler, build_ensemble, build_retrain,
                         verify_ensemble)
from .metrics import MetricReport, l_mix, lof, robustness, validity
from .models import (LinearModel, MlpModel, TrainConfig, embedding, logit,
                     regularized_objective, train)
from .recourse import (ContinuousGenConfig, Counterfactual,
                       MulticlassLinearModel, NoRobustCandidateError,
                       RecourseConstraints, generate_continuous,
                       generate_data_supported, generate_mixed,
                       generate_multiclass, generate_sparse_continuous,
                       gumbel_softmax, lift, margin_ellipsoids)

__version__ = "0.1.0"
