"""Change-detection estimators: supervised source training and adaptation.

Both estimators follow the scikit-learn conventions: constructor arguments
are stored verbatim, ``fit`` returns ``self``, and everything learned gets a
trailing underscore. ``X`` is an (N, 2, H, W, 3) float array of co-registered
pre/post pairs (or a sequence of (pre, post) tuples).

:class:`SourceChangeDetector` trains on labeled pairs with pixel
cross-entropy. :class:`DaviAdapter` starts from a trained source model and
adapts a copy to unlabeled target pairs by minimizing cross-entropy against
refreshed pseudo labels plus a weighted prediction-entropy term. The source
weights are never mutated; adaptation always works on a deep copy.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import maps
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import AdaptationDivergedError, ValidationError
from .augment import sample_augmentation
from .metrics import ConfusionCounts, confusion, f1
from .nets import build_model
from .pseudo import LABEL_SOURCES, PseudoLabelSet, generate_pseudo_labels, refine_pseudo_label
from .segmenters import DEFAULT_PROMPT
from .validation import check_pair, check_pairs_array, check_target_maps


def prediction_entropy_loss(p: torch.Tensor, variant: str = "binary") -> torch.Tensor:
    """Mean per-pixel entropy of predicted probabilities.

    ``single_term`` penalizes only the change-class term; ``binary`` uses the
    full two-class entropy. Probabilities are clamped before the logs, so the
    loss is finite for saturated predictions.
    """
    if variant not in maps.LOSS_VARIANTS:
        raise ValidationError(f"variant must be one of {maps.LOSS_VARIANTS}, got {variant!r}")
    eps = maps.LOG_EPS
    pc = p.clamp(eps, 1.0 - eps)
    out = -pc * torch.log(pc)
    if variant == "binary":
        out = out - (1.0 - pc) * torch.log(1.0 - pc)
    return out.mean()


def pseudo_cross_entropy_loss(
    target: torch.Tensor, p: torch.Tensor, variant: str = "binary"
) -> torch.Tensor:
    """Mean per-pixel cross-entropy of probabilities against a fixed map.

    ``target`` carries no gradient; only ``p`` is differentiated. The
    ``single_term`` variant scores just the change class, which leaves pixels
    labeled 0 unconstrained; ``binary`` scores both classes.
    """
    if variant not in maps.LOSS_VARIANTS:
        raise ValidationError(f"variant must be one of {maps.LOSS_VARIANTS}, got {variant!r}")
    eps = maps.LOG_EPS
    pc = p.clamp(eps, 1.0 - eps)
    target = target.detach()
    out = -target * torch.log(pc)
    if variant == "binary":
        out = out - (1.0 - target) * torch.log(1.0 - pc)
    return out.mean()


def _to_tensors(batch: np.ndarray, device) -> tuple[torch.Tensor, torch.Tensor]:
    """(B, 2, H, W, 3) numpy batch to channels-first pre/post tensors."""
    t = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)).to(device)
    pre = t[:, 0].permute(0, 3, 1, 2).contiguous()
    post = t[:, 1].permute(0, 3, 1, 2).contiguous()
    return pre, post


def _predict_probabilities(model, arr: np.ndarray, batch_size: int, device) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(arr), batch_size):
            pre, post = _to_tensors(arr[start : start + batch_size], device)
            out.append(model(pre, post).cpu().numpy().astype(np.float32))
    return np.concatenate(out, axis=0)


def _detector_from_checkpoint(ckpt: Checkpoint) -> "SourceChangeDetector":
    defaults = SourceChangeDetector().get_params()
    stored = ckpt.metadata.get("params", {})
    params = {k: stored[k] for k in defaults if k in stored}
    params["arch"] = ckpt.arch_id
    est = SourceChangeDetector(**params)
    model = build_model(ckpt.arch_id)
    model.load_state_dict(ckpt.state)
    model.eval()
    est.model_ = model
    est.arch_id_ = ckpt.arch_id
    est.loss_curve_ = list(ckpt.metadata.get("loss_curve", []))
    return est


def load_detector(path) -> "SourceChangeDetector":
    """Rebuild a predictor from any checkpoint, source-trained or adapted."""
    return _detector_from_checkpoint(load_checkpoint(path))


def clone_for_target(source) -> tuple[torch.nn.Module, str]:
    """Deep-copied network plus architecture id; updates never reach the source."""
    est = _resolve_source(source)
    return copy.deepcopy(est.model_), est.arch_id_


def _resolve_source(source) -> "SourceChangeDetector":
    if isinstance(source, SourceChangeDetector):
        source._check_fitted()
        return source
    if isinstance(source, Checkpoint):
        return _detector_from_checkpoint(source)
    if isinstance(source, (str, Path)):
        return load_detector(source)
    raise ValidationError(
        "source must be a fitted SourceChangeDetector, a Checkpoint, or a checkpoint path"
    )


class _ChangePredictorMixin:
    """Shared inference surface; requires model_, arch_id_, batch_size, device."""

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                f"this {type(self).__name__} is not fitted yet; call fit (or load) first"
            )

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel change probabilities, shape (N, H, W) float32."""
        self._check_fitted()
        arr = check_pairs_array(X)
        return _predict_probabilities(self.model_, arr, max(1, int(self.batch_size)), self.device)

    def predict(self, X) -> np.ndarray:
        """Binary change maps at the 0.5 operating point, shape (N, H, W) uint8."""
        probs = self.predict_proba(X)
        return np.stack([maps.binarize(p, 0.5) for p in probs])

    def predict_pair(self, pre, post) -> np.ndarray:
        """Probability map for one pre/post pair, shape (H, W) float32."""
        pre, post = check_pair(pre, post)
        return self.predict_proba(np.stack([np.stack([pre, post])]))[0]

    def score(self, X, y) -> float:
        """Pooled change-class F1 of binarized predictions against y."""
        preds = self.predict(X)
        targets = check_target_maps(y, preds.shape[0], preds.shape[1:])
        pooled = ConfusionCounts()
        for pred, gt in zip(preds, targets):
            pooled = pooled + confusion(pred, gt)
        return f1(pooled)


class SourceChangeDetector(_ChangePredictorMixin, BaseEstimator):
    """Siamese change detector trained on labeled pre/post pairs.

    Optimized with AdamW and a stepped learning-rate decay; batches are
    reshuffled each epoch from the estimator seed, so equal seeds give equal
    weights.
    """

    def __init__(
        self,
        arch: str = "siamdiff-small",
        learning_rate: float = 1e-3,
        weight_decay: float = 0.01,
        epochs: int = 50,
        batch_size: int = 8,
        scheduler_step: int = 8,
        scheduler_gamma: float = 0.5,
        seed: int = 0,
        device: str = "cpu",
    ):
        self.arch = arch
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.scheduler_step = scheduler_step
        self.scheduler_gamma = scheduler_gamma
        self.seed = seed
        self.device = device

    def _validate_hypers(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.scheduler_step < 1:
            raise ValidationError(f"scheduler_step must be >= 1, got {self.scheduler_step}")
        if not 0 < self.scheduler_gamma <= 1:
            raise ValidationError(f"scheduler_gamma must be in (0, 1], got {self.scheduler_gamma}")

    def fit(self, X, y) -> "SourceChangeDetector":
        """Train on pairs X with binary change maps y of shape (N, H, W)."""
        self._validate_hypers()
        arr = check_pairs_array(X)
        n = arr.shape[0]
        targets = check_target_maps(y, n, arr.shape[2:4])

        torch.manual_seed(self.seed)
        device = torch.device(self.device)
        model = build_model(self.arch).to(device)
        model.train()
        optimizer = torch.optim.AdamW(
            model.parameters(), lr=self.learning_rate, weight_decay=self.weight_decay
        )
        scheduler = torch.optim.lr_scheduler.StepLR(
            optimizer, step_size=self.scheduler_step, gamma=self.scheduler_gamma
        )
        rng = np.random.default_rng(self.seed)
        target_tensor = torch.from_numpy(targets.astype(np.float32))

        curve = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            loss_sum, seen = 0.0, 0
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                pre, post = _to_tensors(arr[idx], device)
                prob = model(pre, post)
                loss = pseudo_cross_entropy_loss(target_tensor[idx].to(device), prob, "binary")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                loss_sum += float(loss.detach()) * len(idx)
                seen += len(idx)
            scheduler.step()
            curve.append(loss_sum / seen)

        self.model_ = model
        self.arch_id_ = self.arch
        self.loss_curve_ = curve
        self.n_pairs_ = n
        return self

    def save(self, path, extra_metadata: Optional[dict] = None) -> None:
        """Write weights plus a JSON sidecar recording the training setup."""
        self._check_fitted()
        metadata = {
            "role": "source",
            "params": self.get_params(),
            "loss_curve": [float(v) for v in getattr(self, "loss_curve_", [])],
        }
        if extra_metadata:
            metadata.update(extra_metadata)
        state = {k: v.detach().cpu() for k, v in self.model_.state_dict().items()}
        save_checkpoint(path, self.arch_id_, state, metadata)

    @classmethod
    def load(cls, path) -> "SourceChangeDetector":
        return load_detector(path)


class DaviAdapter(_ChangePredictorMixin, BaseEstimator):
    """Adapts a trained source detector to unlabeled target pairs.

    Fitting runs two phases. First, unless a prebuilt label set is supplied,
    the frozen source model and the segmenter produce per-pair binary maps:
    the source prediction, the thresholded segmenter confidence difference,
    and a coarse per-pair change bit. Second, a deep copy of the source
    network is trained on those labels; every step rebuilds the supervision
    map from the copy's current predictions (consistency across augmented
    views can overwrite stale source pixels), then minimizes cross-entropy
    against it plus ``lambda_entropy`` times the prediction entropy.

    Ablation switches: ``label_source`` picks which binary map feeds the
    fine label ("source", "diffsam", or their pixelwise-max "fusion"),
    ``use_coarse_mask`` gates zeroing by the per-pair change bit, and
    ``use_refinement`` gates the consistency update (``tau_r=0`` disables it
    too, making the labels independent of the adapting model).
    """

    def __init__(
        self,
        source=None,
        segmenter=None,
        prompt: str = DEFAULT_PROMPT,
        lambda_entropy: float = 0.1,
        tau_r: float = 0.001,
        tau_v: Optional[float] = None,
        threshold_grid: Optional[Sequence[float]] = None,
        label_source: str = "fusion",
        use_coarse_mask: bool = True,
        use_refinement: bool = True,
        n_views: int = 2,
        aug_brightness: float = 0.1,
        aug_contrast: float = 0.1,
        aug_noise: float = 0.02,
        entropy_variant: str = "binary",
        ce_variant: str = "binary",
        epochs: int = 50,
        batch_size: int = 8,
        learning_rate: float = 1e-5,
        weight_decay: float = 0.01,
        scheduler_step: int = 8,
        scheduler_gamma: float = 0.5,
        continue_on_error: bool = False,
        seed: int = 0,
        device: str = "cpu",
    ):
        self.source = source
        self.segmenter = segmenter
        self.prompt = prompt
        self.lambda_entropy = lambda_entropy
        self.tau_r = tau_r
        self.tau_v = tau_v
        self.threshold_grid = threshold_grid
        self.label_source = label_source
        self.use_coarse_mask = use_coarse_mask
        self.use_refinement = use_refinement
        self.n_views = n_views
        self.aug_brightness = aug_brightness
        self.aug_contrast = aug_contrast
        self.aug_noise = aug_noise
        self.entropy_variant = entropy_variant
        self.ce_variant = ce_variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.scheduler_step = scheduler_step
        self.scheduler_gamma = scheduler_gamma
        self.continue_on_error = continue_on_error
        self.seed = seed
        self.device = device

    def _validate_hypers(self):
        if self.lambda_entropy < 0:
            raise ValidationError(f"lambda_entropy must be >= 0, got {self.lambda_entropy}")
        if self.tau_r < 0:
            raise ValidationError(f"tau_r must be >= 0, got {self.tau_r}")
        if self.label_source not in LABEL_SOURCES:
            raise ValidationError(
                f"label_source must be one of {LABEL_SOURCES}, got {self.label_source!r}"
            )
        if self.n_views < 2:
            raise ValidationError(f"n_views must be >= 2, got {self.n_views}")
        if self.entropy_variant not in maps.LOSS_VARIANTS:
            raise ValidationError(f"unknown entropy_variant {self.entropy_variant!r}")
        if self.ce_variant not in maps.LOSS_VARIANTS:
            raise ValidationError(f"unknown ce_variant {self.ce_variant!r}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.scheduler_step < 1:
            raise ValidationError(f"scheduler_step must be >= 1, got {self.scheduler_step}")
        if not 0 < self.scheduler_gamma <= 1:
            raise ValidationError(f"scheduler_gamma must be in (0, 1], got {self.scheduler_gamma}")

    def _eval_entropy(self, model, pre: torch.Tensor, post: torch.Tensor) -> float:
        """Mean two-class prediction entropy on a frozen probe batch."""
        was_training = model.training
        model.eval()
        with torch.no_grad():
            value = float(prediction_entropy_loss(model(pre, post), "binary"))
        if was_training:
            model.train()
        return value

    def fit(self, X, y=None, pair_ids=None, pseudo_labels: Optional[PseudoLabelSet] = None):
        """Adapt to unlabeled pairs X; y is ignored and exists for API reasons.

        ``pair_ids`` names the pairs (defaults to positional ids) and must
        match the ids in ``pseudo_labels`` when a prebuilt set is given.
        Pairs whose labeling failed (tolerated segmenter errors) are skipped.
        """
        self._validate_hypers()
        arr = check_pairs_array(X)
        n = arr.shape[0]
        ids = [str(p) for p in pair_ids] if pair_ids is not None else [
            f"pair_{i:04d}" for i in range(n)
        ]
        if len(ids) != n or len(set(ids)) != n:
            raise ValidationError("pair_ids must be unique and align with X")

        source_est = _resolve_source(self.source)
        if pseudo_labels is not None:
            labels = pseudo_labels
        else:
            if self.segmenter is None:
                raise ValidationError("a segmenter is required unless pseudo_labels is given")
            labels = generate_pseudo_labels(
                source_est,
                self.segmenter,
                [(pid, arr[i, 0], arr[i, 1]) for i, pid in enumerate(ids)],
                grid=self.threshold_grid,
                prompt=self.prompt,
                tau_v=self.tau_v,
                continue_on_error=self.continue_on_error,
            )
        keep = [i for i, pid in enumerate(ids) if pid in labels.entries]
        if not keep:
            raise ValidationError("none of the pairs have pseudo labels")
        for i in keep:
            if labels.entries[ids[i]].m0.shape != arr.shape[2:4]:
                raise ValidationError(f"pseudo labels for {ids[i]!r} do not match the image shape")

        torch.manual_seed(self.seed)
        device = torch.device(self.device)
        model, arch_id = clone_for_target(source_est)
        model.to(device)
        model.train()
        optimizer = torch.optim.AdamW(
            model.parameters(), lr=self.learning_rate, weight_decay=self.weight_decay
        )
        scheduler = torch.optim.lr_scheduler.StepLR(
            optimizer, step_size=self.scheduler_step, gamma=self.scheduler_gamma
        )
        rng = np.random.default_rng(self.seed)
        needs_views = self.use_refinement and self.tau_r > 0

        # Frozen probe batch for the entropy trajectory: first kept pairs.
        probe_idx = keep[: min(self.batch_size, len(keep))]
        probe_pre, probe_post = _to_tensors(arr[probe_idx], device)
        entropy_curve = [self._eval_entropy(model, probe_pre, probe_post)]

        history = []
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(keep)
            sums = {"ce": 0.0, "entropy": 0.0, "total": 0.0}
            seen = 0
            for start in range(0, len(order), self.batch_size):
                idx = order[start : start + self.batch_size]
                entries = [labels.entries[ids[i]] for i in idx]
                pre, post = _to_tensors(arr[idx], device)

                view_probs = []
                if needs_views:
                    with torch.no_grad():
                        for _ in range(self.n_views - 1):
                            aug_batch = np.empty_like(arr[idx])
                            for k, i in enumerate(idx):
                                aug = sample_augmentation(
                                    rng, self.aug_brightness, self.aug_contrast, self.aug_noise
                                )
                                aug_batch[k, 0], aug_batch[k, 1] = aug.apply_pair(
                                    arr[i, 0], arr[i, 1]
                                )
                            a_pre, a_post = _to_tensors(aug_batch, device)
                            view_probs.append(model(a_pre, a_post).cpu().numpy())

                prob = model(pre, post)
                if not bool(torch.isfinite(prob).all()):
                    # exploded weights show up in the forward pass first
                    raise AdaptationDivergedError(
                        f"non-finite predictions at epoch {epoch}; lower the learning rate"
                    )
                prob_np = prob.detach().cpu().numpy().astype(np.float32)
                refined = np.stack(
                    [
                        refine_pseudo_label(
                            [prob_np[k]] + [vp[k] for vp in view_probs],
                            entry.m0,
                            entry.mv,
                            entry.q,
                            self.tau_r,
                            self.label_source,
                            self.use_coarse_mask,
                            self.use_refinement,
                        )
                        for k, entry in enumerate(entries)
                    ]
                )
                target = torch.from_numpy(refined.astype(np.float32)).to(device)
                ce = pseudo_cross_entropy_loss(target, prob, self.ce_variant)
                entropy = prediction_entropy_loss(prob, self.entropy_variant)
                total = ce + self.lambda_entropy * entropy
                if not torch.isfinite(total):
                    raise AdaptationDivergedError(
                        f"non-finite loss at epoch {epoch}; lower the learning rate"
                    )
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                sums["ce"] += float(ce.detach()) * len(idx)
                sums["entropy"] += float(entropy.detach()) * len(idx)
                sums["total"] += float(total.detach()) * len(idx)
                seen += len(idx)
            scheduler.step()
            eval_entropy = self._eval_entropy(model, probe_pre, probe_post)
            entropy_curve.append(eval_entropy)
            history.append(
                {
                    "epoch": epoch,
                    "ce": sums["ce"] / seen,
                    "entropy": sums["entropy"] / seen,
                    "total": sums["total"] / seen,
                    "eval_entropy": eval_entropy,
                }
            )

        self.model_ = model
        self.arch_id_ = arch_id
        self.pseudo_labels_ = labels
        self.tau_v_ = labels.tau_v
        self.history_ = history
        self.entropy_curve_ = entropy_curve
        self.n_pairs_ = len(keep)
        return self

    def save(self, path, extra_metadata: Optional[dict] = None) -> None:
        """Write adapted weights; the sidecar keeps only JSON-safe settings."""
        self._check_fitted()
        params = {
            k: v
            for k, v in self.get_params().items()
            if k not in ("source", "segmenter")
            and isinstance(v, (int, float, str, bool, type(None)))
        }
        metadata = {
            "role": "adapted",
            "params": params,
            "tau_v": float(self.tau_v_),
            "prompt": self.prompt,
        }
        if extra_metadata:
            metadata.update(extra_metadata)
        state = {k: v.detach().cpu() for k, v in self.model_.state_dict().items()}
        save_checkpoint(path, self.arch_id_, state, metadata)
