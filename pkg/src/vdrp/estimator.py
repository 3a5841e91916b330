"""Scikit-learn style estimator facade over the training pipeline.

``VdrpHoiClassifier`` keeps constructor arguments verbatim so it works with
``sklearn.base.clone`` and ``get_params``/``set_params``.  ``fit`` accepts a
dataset directory or a loaded :class:`~vdrp.data.Dataset`.
"""

from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .classifier import (PipelineSettings, build_model, predict_dataset,
                         train_model)
from .concepts import load_concepts
from .data import Dataset, Split, load_dataset
from .evaluate import build_split, evaluate_predictions

__all__ = ["VdrpHoiClassifier"]


class VdrpHoiClassifier(BaseEstimator):
    """Zero-shot interaction classifier trained on a dataset directory."""

    def __init__(self, alpha=0.02, beta=0.1, gamma=0.2, stat_mode="variance",
                 group_size=3, retrieve_mode="sparsemax", tau=0.0,
                 temperature=1.0, top_k=3, branches=("human", "object", "union"),
                 adapter_blocks=2, steps=200, lr=0.01, lr_final_scale=0.1,
                 weight_decay=0.01, focal_gamma=2.0, focal_alpha=0.75,
                 score_threshold=0.2, assign_iou=0.5, iou_threshold=0.5,
                 scenario="nf_uc", n_unseen=120, n_unseen_objects=12,
                 n_unseen_verbs=20, seed=0):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.stat_mode = stat_mode
        self.group_size = group_size
        self.retrieve_mode = retrieve_mode
        self.tau = tau
        self.temperature = temperature
        self.top_k = top_k
        self.branches = branches
        self.adapter_blocks = adapter_blocks
        self.steps = steps
        self.lr = lr
        self.lr_final_scale = lr_final_scale
        self.weight_decay = weight_decay
        self.focal_gamma = focal_gamma
        self.focal_alpha = focal_alpha
        self.score_threshold = score_threshold
        self.assign_iou = assign_iou
        self.iou_threshold = iou_threshold
        self.scenario = scenario
        self.n_unseen = n_unseen
        self.n_unseen_objects = n_unseen_objects
        self.n_unseen_verbs = n_unseen_verbs
        self.seed = seed

    # -- helpers ----------------------------------------------------------

    @staticmethod
    def _dataset(X) -> Dataset:
        if isinstance(X, Dataset):
            return X
        return load_dataset(Path(X))

    def _settings(self, dataset: Dataset) -> PipelineSettings:
        dims = dataset.meta["dims"]
        return PipelineSettings(
            d=int(dims["d"]), d_t=int(dims["d_t"]), d_up=int(dims["d_up"]),
            n_ctx=int(dims["n_ctx"]),
            alpha=self.alpha, beta=self.beta, gamma=self.gamma,
            stat_mode=self.stat_mode, group_size=self.group_size,
            retrieve_mode=self.retrieve_mode, tau=self.tau,
            temperature=self.temperature, top_k=self.top_k,
            branches=tuple(self.branches), adapter_blocks=self.adapter_blocks,
            steps=self.steps, lr=self.lr, lr_final_scale=self.lr_final_scale,
            weight_decay=self.weight_decay, focal_gamma=self.focal_gamma,
            focal_alpha=self.focal_alpha, score_threshold=self.score_threshold,
            assign_iou=self.assign_iou,
        )

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this VdrpHoiClassifier instance is not fitted yet; call fit first")

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y=None):
        """Train on a dataset directory (or loaded dataset); y is ignored."""
        dataset = self._dataset(X)
        settings = self._settings(dataset)
        if self.scenario == "none":
            split = None
        else:
            split = build_split(self.scenario, dataset.triplets,
                                dataset.frequencies, dataset.n_verbs,
                                dataset.n_objects, n_unseen=self.n_unseen,
                                n_unseen_objects=self.n_unseen_objects,
                                n_unseen_verbs=self.n_unseen_verbs)
        bank = load_concepts(dataset.concepts_path(), dataset.n_verbs, settings.d)
        model = build_model(dataset, bank, settings, self.seed,
                            exclude_triplets=split.unseen if split else ())
        history = train_model(model, dataset, split, self.seed)
        self.model_ = model
        self.split_ = split
        self.history_ = history
        self.n_verbs_ = dataset.n_verbs
        self.n_objects_ = dataset.n_objects
        return self

    def predict(self, X):
        """Score detections on the dataset's test images.

        Returns prediction rows (image id, boxes, triplet id, score).
        """
        self._check_fitted()
        return predict_dataset(self.model_, self._dataset(X))

    def evaluate(self, X) -> dict:
        """Predict and report mean AP (full, and seen/unseen when split)."""
        self._check_fitted()
        dataset = self._dataset(X)
        rows = predict_dataset(self.model_, dataset)
        wanted = set(dataset.test_images)
        gts = [g for g in dataset.gts if g["image_id"] in wanted]
        return evaluate_predictions(rows, gts, self.split_, self.iou_threshold)

    def score(self, X, y=None) -> float:
        """Mean AP over all test triplets, as a single float."""
        return float(self.evaluate(X)["full"])
