"""Two-stage double-circle detector as a scikit-learn style estimator.

Backbone -> proposal head over double-circle anchors -> rubber-sheet RoI
pooling -> refinement head -> mask head, trained jointly with momentum SGD.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image, check_images, check_targets
from .geometry import (
    NEGATIVE,
    POSITIVE,
    DoubleCircle,
    anchor_grid,
    as_dc_array,
    assign_labels,
    dc_nms,
    decode,
    double_circle_iou,
    encode,
    is_valid,
    pairwise_iou,
)
from .metrics import iou_seg, rasterize_double_circle
from .nnet import (
    CrnHead,
    MaskHead,
    RpnHead,
    ToyBackbone,
    WeightFormatError,
    bce_loss,
    load_weights,
    save_weights,
    sgd_step,
    smooth_l1,
    softmax,
    softmax_ce_loss,
)
from .rubbersheet import RoiNormalizer, unwrap, unwrap_mask

logger = logging.getLogger(__name__)

NORM_SHAPE = (64, 512)
MASK_SHAPE = (32, 64)
CRN_ROI = (7, 7)
MASK_ROI = (16, 32)

# Regression outputs are predicted in units of these spreads (order tx_i, ty_i, tx_p, ty_p, tr_i, tr_p).
RPN_DELTA_STD = np.array([0.2, 0.2, 0.5, 0.5, 0.2, 0.3])
CRN_DELTA_STD = np.array([0.1, 0.1, 0.25, 0.25, 0.1, 0.15])
MAX_LOG_SCALE = 4.0

LOSS_COLUMNS = ("epoch", "rpn_cls", "rpn_reg", "crn_cls", "crn_reg", "mask")


class ConfigurationError(ValueError):
    """Training data and estimator settings are incompatible."""


@dataclass
class SegmentationResult:
    dc: DoubleCircle
    score: float
    normalized_iris: np.ndarray  # (1, 64, 512)
    normalized_mask: np.ndarray  # (1, 64, 512), binary


def _clip_deltas(t):
    t = np.nan_to_num(t, nan=0.0, posinf=MAX_LOG_SCALE, neginf=-MAX_LOG_SCALE)
    return np.clip(t, -MAX_LOG_SCALE, MAX_LOG_SCALE)


def _upscale_mask(mask):
    fy = NORM_SHAPE[0] // MASK_SHAPE[0]
    fx = NORM_SHAPE[1] // MASK_SHAPE[1]
    return np.repeat(np.repeat(mask, fy, axis=-2), fx, axis=-1)


class IrisRCNN(BaseEstimator):
    """Double-circle iris detector with rubber-sheet RoI normalization.

    Parameters
    ----------
    anchor_radii, anchor_ratios : sequences of float
        Iris radii (pixels) and pupil/iris ratios spanning the anchor set.
        Five radii and three ratios give fifteen anchors per feature cell.
    backbone_channels : tuple of 3 ints
        Widths of the toy backbone stages.
    rpn_channels, crn_hidden, mask_channels : int
        Head widths. ``paper_scale=True`` overrides the first two with 512
        and 1024.
    epochs, learning_rate, lr_step_epoch : training schedule. The rate drops
        tenfold at ``lr_step_epoch`` (default: half of ``epochs``).
    momentum, weight_decay : SGD settings.
    reg_lambda : weight of the regression term in both multi-task losses.
    rpn_batch_size, roi_batch_size : anchors and RoIs sampled per image.
    gt_jitter_rois : extra training RoIs drawn around the ground truth.
    pre_nms_top_n, nms_threshold : proposal filtering.
    score_threshold : minimum refined iris probability for a detection.
    random_state : int seed for initialization and sampling.
    """

    def __init__(
        self,
        anchor_radii=(28, 32, 36, 40, 44),
        anchor_ratios=(0.25, 0.35, 0.45),
        backbone_channels=(8, 16, 32),
        rpn_channels=64,
        crn_hidden=128,
        mask_channels=16,
        paper_scale=False,
        epochs=60,
        learning_rate=0.001,
        lr_step_epoch=None,
        momentum=0.9,
        weight_decay=1e-4,
        reg_lambda=1.0,
        rpn_batch_size=256,
        roi_batch_size=32,
        gt_jitter_rois=8,
        pre_nms_top_n=200,
        nms_threshold=0.7,
        score_threshold=0.5,
        random_state=0,
        verbose=0,
    ):
        self.anchor_radii = anchor_radii
        self.anchor_ratios = anchor_ratios
        self.backbone_channels = backbone_channels
        self.rpn_channels = rpn_channels
        self.crn_hidden = crn_hidden
        self.mask_channels = mask_channels
        self.paper_scale = paper_scale
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_step_epoch = lr_step_epoch
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.reg_lambda = reg_lambda
        self.rpn_batch_size = rpn_batch_size
        self.roi_batch_size = roi_batch_size
        self.gt_jitter_rois = gt_jitter_rois
        self.pre_nms_top_n = pre_nms_top_n
        self.nms_threshold = nms_threshold
        self.score_threshold = score_threshold
        self.random_state = random_state
        self.verbose = verbose

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    def _widths(self):
        if self.paper_scale:
            return 512, 1024
        return int(self.rpn_channels), int(self.crn_hidden)

    def _build(self, rng):
        if len(self.anchor_radii) * len(self.anchor_ratios) != 15:
            raise ValueError("the heads are built for 5 radii x 3 ratios = 15 anchors per cell")
        rpn_ch, crn_hidden = self._widths()
        self.backbone_ = ToyBackbone(rng, channels=tuple(int(c) for c in self.backbone_channels))
        c = self.backbone_.out_channels
        self.rpn_ = RpnHead(rng, c, rpn_ch)
        self.crn_ = CrnHead(rng, c, crn_hidden)
        self.mask_head_ = MaskHead(rng, c, int(self.mask_channels))
        self.stride_ = ToyBackbone.stride
        self._anchor_cache = {}

    def _modules(self):
        return [self.backbone_, self.rpn_, self.crn_, self.mask_head_]

    def parameters(self):
        return [p for m in self._modules() for p in m.parameters()]

    def _set_training(self, mode):
        for m in self._modules():
            m.train(mode)

    def anchors_for(self, feat_h, feat_w) -> np.ndarray:
        key = (feat_h, feat_w)
        cache = self.__dict__.setdefault("_anchor_cache", {})
        if key not in cache:
            cache[key] = anchor_grid(
                feat_w, feat_h, self.stride_, self.anchor_radii, self.anchor_ratios
            )
        return cache[key]

    # ------------------------------------------------------------------
    # forward helpers
    # ------------------------------------------------------------------

    def _rpn_flat(self, out):
        a = len(self.anchor_radii) * len(self.anchor_ratios)
        _, h, w = out.scores.shape
        scores = out.scores.reshape(a, 2, h, w).transpose(2, 3, 0, 1).reshape(-1, 2)
        deltas = out.deltas.reshape(a, 6, h, w).transpose(2, 3, 0, 1).reshape(-1, 6)
        return scores, deltas

    def _rpn_unflat(self, dscores, ddeltas, h, w):
        a = len(self.anchor_radii) * len(self.anchor_ratios)
        ds = dscores.reshape(h, w, a, 2).transpose(2, 3, 0, 1).reshape(2 * a, h, w)
        dd = ddeltas.reshape(h, w, a, 6).transpose(2, 3, 0, 1).reshape(6 * a, h, w)
        return np.ascontiguousarray(ds), np.ascontiguousarray(dd)

    def _proposals(self, anchors, scores, deltas):
        """Decode, drop invalid double circles, keep the top-N by iris probability, NMS."""
        prob = softmax(scores)[:, 1]
        boxes = decode(anchors, _clip_deltas(deltas * RPN_DELTA_STD))
        ok = np.nonzero(is_valid(boxes))[0]
        if ok.size == 0:
            return np.empty((0, 6)), np.empty(0)
        top = ok[np.argsort(-prob[ok], kind="stable")[: int(self.pre_nms_top_n)]]
        kept, kept_scores, _ = dc_nms(boxes[top], prob[top], self.nms_threshold)
        return kept, kept_scores

    # ------------------------------------------------------------------
    # training
    # ------------------------------------------------------------------

    def _lr_at(self, epoch):
        step = self.lr_step_epoch if self.lr_step_epoch is not None else max(self.epochs // 2, 1)
        return self.learning_rate * (0.1 if epoch >= step else 1.0)

    def _check_anchor_coverage(self, images, circles):
        shapes = {img.shape for img in images}
        positives = 0
        for shape in shapes:
            _, h, w = shape
            fh, fw = -(-h // self.stride_), -(-w // self.stride_)
            anchors = self.anchors_for(fh, fw)
            idx = [i for i, img in enumerate(images) if img.shape == shape]
            positives += int(np.count_nonzero(pairwise_iou(anchors, circles[idx]) > 0.7))
        if positives == 0:
            radii = circles[:, 4]
            raise ConfigurationError(
                f"no anchor reaches IoU > 0.7 with any ground truth: anchor radii "
                f"{list(self.anchor_radii)} with ratios {list(self.anchor_ratios)} do not cover "
                f"iris radii in [{radii.min():.1f}, {radii.max():.1f}] px"
            )

    def _sample(self, rng, pos, neg, batch):
        n_pos = min(len(pos), batch // 2)
        n_neg = min(len(neg), batch - n_pos)
        pos = rng.choice(pos, n_pos, replace=False) if n_pos else pos[:0]
        neg = rng.choice(neg, n_neg, replace=False) if n_neg else neg[:0]
        return np.sort(pos), np.sort(neg)

    def _jitter(self, rng, gt, n):
        if n <= 0:
            return np.empty((0, 6))
        out = np.repeat(gt[None], n, axis=0)
        out[:, 0:2] += rng.normal(0, 0.08, (n, 2)) * gt[4]
        out[:, 2:4] += rng.normal(0, 0.08, (n, 2)) * gt[4]
        out[:, 4] *= np.exp(rng.normal(0, 0.08, n))
        out[:, 5] *= np.exp(rng.normal(0, 0.1, n))
        return out[is_valid(out)]

    def _train_step(self, image, gt, gt_mask, rng, lr):
        lam = self.reg_lambda
        feats = self.backbone_.forward(image[None])
        _, c, fh, fw = feats.shape
        out = self.rpn_.forward(feats)
        scores, deltas = self._rpn_flat(out)
        anchors = self.anchors_for(fh, fw)

        labels = assign_labels(anchors, gt[None])
        pos, neg = self._sample(
            rng,
            np.nonzero(labels.tags == POSITIVE)[0],
            np.nonzero(labels.tags == NEGATIVE)[0],
            int(self.rpn_batch_size),
        )
        sampled = np.concatenate([pos, neg])
        target_cls = np.concatenate([np.ones(len(pos), int), np.zeros(len(neg), int)])
        rpn_cls, dcls = softmax_ce_loss(scores[sampled], target_cls)
        rpn_reg, dreg = smooth_l1(deltas[pos], encode(anchors[pos], gt) / RPN_DELTA_STD)
        dscores = np.zeros_like(scores)
        dscores[sampled] = dcls
        ddeltas = np.zeros_like(deltas)
        ddeltas[pos] = lam * dreg

        # second stage: proposals (constants) plus the ground truth and jittered copies
        props, _ = self._proposals(anchors, scores, deltas)
        rois = np.concatenate([props, gt[None], self._jitter(rng, gt, int(self.gt_jitter_rois))])
        roi_iou = np.atleast_1d(double_circle_iou(rois, gt[None]))
        rpos, rneg = self._sample(
            rng,
            np.nonzero(roi_iou >= 0.5)[0],
            np.nonzero(roi_iou < 0.5)[0],
            int(self.roi_batch_size),
        )
        chosen = np.concatenate([rpos, rneg])
        rois = rois[chosen]
        roi_labels = np.concatenate([np.ones(len(rpos), int), np.zeros(len(rneg), int)])
        n_pos = len(rpos)

        dfeat = np.zeros_like(feats[0])
        crn_cls = crn_reg = mask_loss = 0.0
        if len(rois) >= 2:
            pool = RoiNormalizer(rois, feats[0].shape, self.stride_, *CRN_ROI)
            s, d = self.crn_.forward(pool.forward(feats[0]))
            crn_cls, ds = softmax_ce_loss(s, roi_labels)
            crn_reg, dd_pos = smooth_l1(d[:n_pos], encode(rois[:n_pos], gt) / CRN_DELTA_STD)
            dd = np.zeros_like(d)
            dd[:n_pos] = lam * dd_pos
            dfeat += pool.backward(self.crn_.backward(ds, dd))

        if n_pos:
            pos_rois = rois[:n_pos]
            mpool = RoiNormalizer(pos_rois, feats[0].shape, self.stride_, *MASK_ROI)
            logits = self.mask_head_.forward(mpool.forward(feats[0]))
            target = np.stack([unwrap_mask(gt_mask, r, *MASK_SHAPE).data for r in pos_rois])
            mask_loss, dlogits = bce_loss(logits, target)
            dfeat += mpool.backward(self.mask_head_.backward(dlogits))

        dfeat += self.rpn_.backward(*self._rpn_unflat(dscores, ddeltas, fh, fw))[0]
        self.backbone_.backward(dfeat[None])
        sgd_step(self.parameters(), lr, self.momentum, self.weight_decay)
        return rpn_cls, rpn_reg, crn_cls, crn_reg, mask_loss

    def fit(self, X, y):
        """Train on images ``X`` with targets ``y`` = sequence of ``(circles, mask)``."""
        images = check_images(X)
        circles, masks = check_targets(y, images)
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

        seeds = np.random.SeedSequence(self.random_state).spawn(2)
        self._build(np.random.default_rng(seeds[0]))
        rng = np.random.default_rng(seeds[1])
        self._check_anchor_coverage(images, circles)

        self._set_training(True)
        self.loss_log_ = []
        for epoch in range(int(self.epochs)):
            lr = self._lr_at(epoch)
            totals = np.zeros(5)
            for i in rng.permutation(len(images)):
                totals += self._train_step(images[i], circles[i], masks[i], rng, lr)
            means = totals / len(images)
            self.loss_log_.append((epoch + 1, *map(float, means)))
            if self.verbose:
                logger.info(
                    "epoch %d lr %.2g rpn_cls %.4f rpn_reg %.4f crn_cls %.4f crn_reg %.4f mask %.4f",
                    epoch + 1, lr, *means,
                )
        self._set_training(False)
        return self

    # ------------------------------------------------------------------
    # inference
    # ------------------------------------------------------------------

    def segment(self, image) -> SegmentationResult | None:
        """Detect the iris in one image; ``None`` when nothing scores above threshold."""
        check_is_fitted(self, "backbone_")
        image = check_image(image)
        self._set_training(False)
        feats = self.backbone_.forward(image[None])[0]
        _, fh, fw = feats.shape
        scores, deltas = self._rpn_flat(self.rpn_.forward(feats))
        props, _ = self._proposals(self.anchors_for(fh, fw), scores, deltas)
        if len(props) == 0:
            return None

        pool = RoiNormalizer(props, feats.shape, self.stride_, *CRN_ROI)
        s, d = self.crn_.forward(pool.forward(feats))
        prob = softmax(s)[:, 1]
        refined = decode(props, _clip_deltas(d * CRN_DELTA_STD))
        ok = np.nonzero(is_valid(refined))[0]
        if ok.size == 0:
            return None
        best = ok[np.argmax(prob[ok])]
        if prob[best] < self.score_threshold:
            return None
        dc = refined[best]

        mpool = RoiNormalizer(dc[None], feats.shape, self.stride_, *MASK_ROI)
        logits = self.mask_head_.forward(mpool.forward(feats))[0]
        mask = _upscale_mask((logits > 0).astype(np.float64))
        norm = unwrap(image, dc, *NORM_SHAPE).data
        return SegmentationResult(
            dc=DoubleCircle.from_array(dc),
            score=float(prob[best]),
            normalized_iris=norm,
            normalized_mask=mask,
        )

    def predict(self, X) -> list[SegmentationResult | None]:
        return [self.segment(img) for img in check_images(X)]

    def transform(self, X) -> np.ndarray:
        """Stack of ``(normalized iris, normalized mask)`` per image, shape ``(n, 2, 64, 512)``.

        Images without a detection get all-zero channels, so their mask is empty.
        """
        out = np.zeros((0, 2) + NORM_SHAPE)
        rows = []
        for res in self.predict(X):
            if res is None:
                rows.append(np.zeros((2,) + NORM_SHAPE))
            else:
                rows.append(np.concatenate([res.normalized_iris, res.normalized_mask]))
        return np.stack(rows) if rows else out

    def score(self, X, y) -> float:
        """Mean pixel IoU between detected double-circle regions and labelled masks."""
        images = check_images(X)
        _, masks = check_targets(y, images)
        vals = []
        for img, mask, res in zip(images, masks, self.predict(images)):
            if res is None:
                vals.append(0.0)
                continue
            region = rasterize_double_circle(res.dc.to_array(), *img.shape[1:])
            vals.append(iou_seg(region, mask))
        return float(np.mean(vals))

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def get_weights(self) -> dict[str, np.ndarray]:
        check_is_fitted(self, "backbone_")
        rpn_ch, crn_hidden = self._widths()
        tensors = {
            "config.anchor_radii": np.asarray(self.anchor_radii, dtype=np.float64),
            "config.anchor_ratios": np.asarray(self.anchor_ratios, dtype=np.float64),
            "config.backbone_channels": np.asarray(self.backbone_channels, dtype=np.float64),
            "config.head_widths": np.array([rpn_ch, crn_hidden, self.mask_channels], dtype=np.float64),
            "config.thresholds": np.array(
                [self.pre_nms_top_n, self.nms_threshold, self.score_threshold], dtype=np.float64
            ),
        }
        for p in self.parameters():
            tensors[p.name] = p.data
        for m in self._modules():
            tensors.update(m.buffers())
        return tensors

    def save(self, path):
        save_weights(path, self.get_weights())

    @classmethod
    def from_weights(cls, tensors: dict[str, np.ndarray]) -> "IrisRCNN":
        try:
            widths = tensors["config.head_widths"].astype(int)
            top_n, nms_thr, score_thr = tensors["config.thresholds"]
            model = cls(
                anchor_radii=tuple(float(r) for r in tensors["config.anchor_radii"]),
                anchor_ratios=tuple(float(r) for r in tensors["config.anchor_ratios"]),
                backbone_channels=tuple(int(c) for c in tensors["config.backbone_channels"]),
                rpn_channels=int(widths[0]),
                crn_hidden=int(widths[1]),
                mask_channels=int(widths[2]),
                pre_nms_top_n=int(top_n),
                nms_threshold=float(nms_thr),
                score_threshold=float(score_thr),
            )
            model._build(np.random.default_rng(0))
        except (KeyError, ValueError, IndexError) as exc:
            raise WeightFormatError(f"weights are missing or have malformed config: {exc}") from exc

        expected = {p.name: p for p in model.parameters()}
        buffers = {}
        for m in model._modules():
            buffers.update(m.buffers())
        names = set(expected) | set(buffers) | {k for k in tensors if k.startswith("config.")}
        missing = (set(expected) | set(buffers)) - set(tensors)
        extra = set(tensors) - names
        if missing or extra:
            raise WeightFormatError(
                f"weight tensors do not match the architecture "
                f"(missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]})"
            )
        for name, p in expected.items():
            if tensors[name].shape != p.data.shape:
                raise WeightFormatError(
                    f"{name}: shape {tensors[name].shape} does not match {p.data.shape}"
                )
            p.data[...] = tensors[name]
        for name, buf in buffers.items():
            if tensors[name].shape != buf.shape:
                raise WeightFormatError(f"{name}: shape {tensors[name].shape} does not match {buf.shape}")
            buf[...] = tensors[name]
        model._set_training(False)
        return model

    @classmethod
    def load(cls, path) -> "IrisRCNN":
        return cls.from_weights(load_weights(path))
