"""
Confusion matrices and the L1-only decision-tree baseline.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.model_selection import GridSearchCV, KFold
from sklearn.tree import DecisionTreeClassifier

from .errors import InputError, TrainingError
from .planspace import LABELS, OPTIMAL, SUBOPTIMAL

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """
    Counts with "optimal" as the positive class: tp and fn are optimal plans
    predicted optimal and sub-optimal, tn and fp are sub-optimal plans
    predicted sub-optimal and optimal.
    """

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total if self.total else math.nan

    @property
    def suboptimal_accuracy(self):
        """Share of sub-optimal plans that were flagged."""
        flagged = self.tn + self.fp
        return self.tn / flagged if flagged else math.nan

    def to_dict(self):
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def confusion(predictions, labels):
    """
    Returns the ConfusionMatrix of predicted against actual labels.
    """
    predictions, labels = list(predictions), list(labels)
    if len(predictions) != len(labels):
        raise InputError(
            "got {} predictions for {} labels".format(len(predictions), len(labels))
        )
    for value in predictions + labels:
        if value not in LABELS:
            raise InputError(
                "invalid label '{}'. expected one of the following: {}".format(value, list(LABELS))
            )
    pairs = list(zip(predictions, labels))
    return ConfusionMatrix(
        tp=sum(p == OPTIMAL and a == OPTIMAL for p, a in pairs),
        tn=sum(p == SUBOPTIMAL and a == SUBOPTIMAL for p, a in pairs),
        fp=sum(p == OPTIMAL and a == SUBOPTIMAL for p, a in pairs),
        fn=sum(p == SUBOPTIMAL and a == OPTIMAL for p, a in pairs),
    )


#####################################################################


@dataclass
class BaselineTree:
    """A fitted depth-limited tree on the aggregate L1 alone."""

    tree: DecisionTreeClassifier
    max_depth: int
    cv_accuracy: float

    def predict(self, l1_values):
        X = np.asarray(l1_values, dtype=np.float64).reshape(-1, 1)
        return [str(label) for label in self.tree.predict(X)]

    def thresholds(self):
        """Returns the split points of the tree in ascending order."""
        inner = self.tree.tree_.feature >= 0
        return sorted(float(t) for t in self.tree.tree_.threshold[inner])


def train_baseline_dt(l1_values, labels, max_depth_grid=(1, 2, 3, 4, 5, 6, 8), folds=5, seed=0):
    """
    Returns a BaselineTree whose depth is chosen by k-fold cross-validated
    accuracy over ``max_depth_grid``; equal scores go to the smaller depth.
    """
    X = np.asarray(l1_values, dtype=np.float64).reshape(-1, 1)
    y = np.asarray(labels)
    if len(X) == 0:
        raise TrainingError("cannot fit the baseline tree on no examples")
    if len(X) != len(y):
        raise InputError("got {} L1 values for {} labels".format(len(X), len(y)))
    if len(X) < 2:
        raise TrainingError("the baseline tree needs at least 2 examples")
    grid = sorted(set(int(d) for d in max_depth_grid))
    n_splits = max(2, min(folds, len(X)))
    search = GridSearchCV(
        DecisionTreeClassifier(random_state=seed),
        param_grid={"max_depth": grid},
        cv=KFold(n_splits=n_splits, shuffle=True, random_state=seed),
        scoring="accuracy",
        refit=True,
    )
    search.fit(X, y)
    depth = int(search.best_params_["max_depth"])
    logger.info(
        "baseline tree: depth %d chosen with cross-validated accuracy %.4f",
        depth,
        search.best_score_,
    )
    return BaselineTree(search.best_estimator_, depth, float(search.best_score_))
