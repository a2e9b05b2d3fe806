"""Scikit-learn style estimators wrapping the trainable stack and the
occlusion-factorization pipeline."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .components import blobs_from_labels
from .errors import BlobsegError, DimensionError, DivergenceError
from .losses import LossConfig, blob_marginalized_ce, consensus_loss, pixelwise_ce
from .metrics import confusion, mean_score, recall, sparsity
from .morphology import occlusion_residual, refine_residual
from .components import synthesize_labels
from .net import LayerStack, compact_architecture
from .optim import Adam, PlateauScheduler
from .tensorops import hard_predict, softmax_channels
from .validation import check_binary_mask, check_image_batch, check_label_batch

LOG_COLUMNS = ("epoch", "loss", "val_recall", "val_sparsity", "learning_rate")


class ConsensusSegmenter(BaseEstimator):
    """Small fully convolutional segmenter trained with a choice of loss.

    Parameters
    ----------
    loss : {"pixelwise", "blob_marginalized", "consensus"}, default="consensus"
        Training objective. The consensus objective additionally penalizes
        per-pixel deviation from each blob's mean prediction.
    num_classes : int, default=3
        Semantic classes (background / face / occlusion).
    alpha, beta : float, default=10.0, 5.0
        Label-matching vs. consensus trade-off of the two-term objective.
    learning_rate : float, default=1e-3
        Initial Adam step size.
    lr_floor : float, default=1e-5
        Lower bound for the plateau schedule.
    plateau_factor : float, default=0.1
        Multiplier applied when validation mean recall stops improving.
    plateau_patience : int, default=5
        Stale epochs tolerated before decaying the rate.
    epochs : int, default=40
    batch_size : int, default=16
    base_channels : int, default=16
        Width of the first convolution; the rest scale with it.
    dropout_rate : float, default=0.0
        Train-time dropout on the penultimate activation (0 disables).
    flip_augment : bool, default=False
        Random horizontal flip of image, labels, and blobs jointly.
    split_blobs : bool, default=True
        When no blob maps are supplied, split each class into connected
        components to form blobs (otherwise one blob per class).
    seed : int, default=0
        Seeds weight init, batch order, augmentation, and dropout.

    Attributes
    ----------
    stack_ : LayerStack
        Trained layers, holding the best-by-validation-recall weights.
    history_ : list of dict
        Per-epoch rows: epoch, loss, val_recall, val_sparsity, learning_rate.
    best_epoch_ : int
    """

    def __init__(
        self,
        loss="consensus",
        num_classes=3,
        alpha=10.0,
        beta=5.0,
        learning_rate=1e-3,
        lr_floor=1e-5,
        plateau_factor=0.1,
        plateau_patience=5,
        epochs=40,
        batch_size=16,
        base_channels=16,
        dropout_rate=0.0,
        flip_augment=False,
        split_blobs=True,
        seed=0,
    ):
        self.loss = loss
        self.num_classes = num_classes
        self.alpha = alpha
        self.beta = beta
        self.learning_rate = learning_rate
        self.lr_floor = lr_floor
        self.plateau_factor = plateau_factor
        self.plateau_patience = plateau_patience
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_channels = base_channels
        self.dropout_rate = dropout_rate
        self.flip_augment = flip_augment
        self.split_blobs = split_blobs
        self.seed = seed

    # ------------------------------------------------------------------
    def fit(self, X, y, blobs=None, X_val=None, y_val=None, log_hook=None):
        """Train on images ``X`` (N x 3 x H x W) and labels ``y`` (N x H x W).

        ``blobs`` may supply consensus regions per image; otherwise they are
        derived from the labels. Validation data drives the plateau schedule
        and best-checkpoint selection; without it the training split is used.
        ``log_hook`` receives each history row as it is produced.
        """
        X = check_image_batch(X)
        y = check_label_batch(y, self.num_classes, X.shape)
        if self.loss not in ("pixelwise", "blob_marginalized", "consensus"):
            raise DimensionError(f"unknown loss kind {self.loss!r}")
        n = len(X)
        if blobs is None:
            blobs = np.stack(
                [blobs_from_labels(yi, split_components=self.split_blobs) for yi in y]
            )
        else:
            blobs = np.asarray(blobs, dtype=np.int64)
            if blobs.shape != y.shape:
                raise DimensionError("blob maps must match the label batch shape")
        has_val = X_val is not None and y_val is not None
        if has_val:
            X_val = check_image_batch(X_val)
            y_val = check_label_batch(y_val, self.num_classes, X_val.shape)

        cfg = LossConfig(
            alpha=self.alpha, beta=self.beta, num_classes=self.num_classes
        )
        rng = np.random.default_rng(self.seed)
        stack = LayerStack(
            compact_architecture(
                num_classes=self.num_classes,
                base_channels=self.base_channels,
                dropout_rate=self.dropout_rate,
            )
        ).init_params(rng)
        optimizer = Adam(learning_rate=self.learning_rate)
        scheduler = PlateauScheduler(
            optimizer,
            factor=self.plateau_factor,
            patience=self.plateau_patience,
            floor=self.lr_floor,
            mode="max",
        )

        self.history_ = []
        best_recall = -np.inf
        best_params = [(name, arr.copy()) for name, arr in stack.parameters()]
        self.best_epoch_ = 0
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                xb, yb, cb = X[idx], y[idx], blobs[idx]
                if self.flip_augment:
                    flips = rng.random(len(idx)) < 0.5
                    xb, yb, cb = xb.copy(), yb.copy(), cb.copy()
                    xb[flips] = xb[flips, :, :, ::-1]
                    yb[flips] = yb[flips, :, ::-1]
                    cb[flips] = cb[flips, :, ::-1]
                logits = stack.forward(xb, train=True, rng=rng)
                dlogits = np.empty_like(logits)
                batch_loss = 0.0
                for i in range(len(idx)):
                    result = self._image_loss(logits[i], yb[i], cb[i], cfg)
                    batch_loss += result.value
                    dlogits[i] = result.grad
                batch_loss /= len(idx)
                dlogits /= len(idx)
                if not np.isfinite(batch_loss):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, batch {start // self.batch_size}"
                    )
                grads, _ = stack.backward(dlogits, need_input_grad=False)
                optimizer.step(stack.parameters(), grads)
                epoch_loss += batch_loss * len(idx)
            epoch_loss /= n

            self.stack_ = stack
            if has_val:
                val_recall, val_sparsity = self._validation_metrics(X_val, y_val)
            else:
                val_recall, val_sparsity = self._validation_metrics(X, y)
            row = {
                "epoch": epoch,
                "loss": epoch_loss,
                "val_recall": val_recall,
                "val_sparsity": val_sparsity,
                "learning_rate": optimizer.learning_rate,
            }
            self.history_.append(row)
            if log_hook is not None:
                log_hook(row)
            if val_recall > best_recall:
                best_recall = val_recall
                best_params = [(name, arr.copy()) for name, arr in stack.parameters()]
                self.best_epoch_ = epoch
            scheduler.update(val_recall)

        stack.set_parameters(best_params)
        self.stack_ = stack
        return self

    def _image_loss(self, logits, labels, blob_map, cfg):
        if self.loss == "pixelwise":
            return pixelwise_ce(logits, labels, cfg)
        if self.loss == "blob_marginalized":
            return blob_marginalized_ce(logits, labels, blob_map, cfg)
        return consensus_loss(logits, labels, blob_map, cfg)

    def _validation_metrics(self, X, y):
        preds = self.predict(X)
        cm = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        for pi, yi in zip(preds, y):
            cm += confusion(pi, yi, self.num_classes)
        return mean_score(recall(cm)), sparsity(list(preds), list(y))

    # ------------------------------------------------------------------
    def decision_function(self, X):
        """Raw logits, N x K x H x W."""
        self._check_fitted()
        X = check_image_batch(X)
        outputs = []
        for start in range(0, len(X), max(1, self.batch_size)):
            outputs.append(self.stack_.forward(X[start : start + self.batch_size]))
        return np.concatenate(outputs, axis=0)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        return np.stack([softmax_channels(z) for z in logits])

    def predict(self, X):
        """Hard per-pixel class masks, N x H x W."""
        logits = self.decision_function(X)
        return np.stack([hard_predict(softmax_channels(z)) for z in logits])

    def score(self, X, y):
        """Mean pixel accuracy over the batch."""
        preds = self.predict(X)
        y = check_label_batch(y, self.num_classes)
        if preds.shape != y.shape:
            raise DimensionError("label batch does not match prediction shape")
        return float(np.mean(preds == y))

    def _check_fitted(self):
        if not hasattr(self, "stack_"):
            raise BlobsegError("estimator is not fitted; call fit() first")

    def save(self, path):
        self._check_fitted()
        self.stack_.save(path)

    def load_weights(self, path):
        self.stack_ = LayerStack.load(path)
        return self


class OcclusionLabeler(BaseEstimator, TransformerMixin):
    """Stateless transformer running the occlusion-factorization pipeline.

    Turns pairs of binary masks (full-face hull mask, teacher segmentation)
    into a semantic label map plus a consensus blob map: residual, two
    rectangular erosions, one elliptical dilation, connected components,
    then label synthesis.

    Parameters
    ----------
    rect_size : tuple, default=(25, 7)
        Erosion rectangle (height, width).
    ellipse_size : int, default=45
        Bounding box of the dilation ellipse.

    Examples
    --------
    >>> labeler = OcclusionLabeler()
    >>> labels, blobs = labeler.label_pair(full_mask, teacher_mask)
    """

    def __init__(self, rect_size=(25, 7), ellipse_size=45):
        self.rect_size = rect_size
        self.ellipse_size = ellipse_size

    def fit(self, X=None, y=None):
        return self

    def label_pair(self, full_mask, teacher_mask):
        full = check_binary_mask(full_mask, name="full-face mask")
        teacher = check_binary_mask(teacher_mask, name="teacher mask")
        residual = occlusion_residual(full, teacher)
        refined = refine_residual(
            residual, rect_size=tuple(self.rect_size), ellipse_size=self.ellipse_size
        )
        return synthesize_labels(teacher, refined)

    def transform(self, X):
        """X is N x 2 x H x W (full mask, teacher mask) pairs; returns
        N x 2 x H x W stacked (labels, blobs)."""
        X = np.asarray(X)
        if X.ndim != 4 or X.shape[1] != 2:
            raise DimensionError(
                f"expected N x 2 x H x W mask pairs, got shape {X.shape}"
            )
        out = np.empty((len(X), 2) + X.shape[2:], dtype=np.int64)
        for i, (full, teacher) in enumerate(X):
            labels, blobs = self.label_pair(full, teacher)
            out[i, 0] = labels
            out[i, 1] = blobs
        return out
