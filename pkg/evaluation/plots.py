"""
Plot emission: PR curves, train/test loss curves, a 2-D feature projection
and side-by-side detections on target images.
"""

from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from datagen.sample import BoxLabel  # noqa: E402
from detector.detector import ScoredBox  # noqa: E402

VISUAL_SCORE_THRESHOLD = 0.5

PathLike = Union[str, Path]


def _save(fig, path: PathLike) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return out


def plot_pr_curves(
    curves: Dict[int, Tuple[np.ndarray, np.ndarray]],
    class_names: Sequence[str],
    path: PathLike,
    title: str = "Precision-recall",
) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    for class_id, (recall, precision) in sorted(curves.items()):
        name = class_names[class_id - 1] if class_id - 1 < len(class_names) else str(class_id)
        ax.plot(recall, precision, label=name)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(title)
    if curves:
        ax.legend(loc="lower left")
    return _save(fig, path)


def plot_loss_curves(records: List[dict], path: PathLike, title: str = "Losses") -> Path:
    """Training total loss per interval with the test loss at evaluation points."""
    fig, ax = plt.subplots(figsize=(6, 4))
    its = [r["iteration"] for r in records]
    for key in ("total", "L_det", "L_img", "L_ins"):
        ax.plot(its, [r[key] for r in records], label=f"train {key}")
    tests = [(r["iteration"], r["test_loss"]) for r in records if r.get("test_loss") is not None]
    if tests:
        ax.plot([t[0] for t in tests], [t[1] for t in tests], "o--", label="test L_det")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(loc="upper right")
    return _save(fig, path)


def linear_projection(features: np.ndarray) -> np.ndarray:
    """Project rows onto the top two principal axes."""
    centred = features - features.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    xy = centred @ vt[:2].T
    if xy.shape[1] < 2:
        xy = np.hstack([xy, np.zeros((len(xy), 2 - xy.shape[1]))])
    return xy


def plot_feature_projection(
    features: Sequence[Tuple[np.ndarray, int]], class_names: Sequence[str], path: PathLike
) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    if features:
        x = np.stack([np.asarray(v, dtype=np.float64) for v, _ in features])
        labels = np.array([c for _, c in features])
        xy = linear_projection(x) if x.shape[1] >= 2 else np.hstack([x, np.zeros_like(x)])
        for c in sorted(set(labels.tolist())):
            mask = labels == c
            name = class_names[c - 1] if c - 1 < len(class_names) else str(c)
            ax.scatter(xy[mask, 0], xy[mask, 1], s=6, label=name)
        ax.legend(loc="best")
    ax.set_title("Instance features: 2-D linear projection (PCA, not t-SNE)")
    return _save(fig, path)


def visible_detections(
    detections: Sequence[ScoredBox], score_threshold: float = VISUAL_SCORE_THRESHOLD
) -> List[ScoredBox]:
    return [d for d in detections if d.score >= score_threshold]


def _box_patch(box: Sequence[float], color, linestyle: str = "-") -> Rectangle:
    x1, y1, x2, y2 = box
    return Rectangle(
        (x1, y1), x2 - x1, y2 - y1, fill=False, edgecolor=color, linewidth=1.2, linestyle=linestyle
    )


def plot_detections(
    images: Sequence[np.ndarray],
    panels: Mapping[str, Sequence[Sequence[ScoredBox]]],
    gt: Sequence[Sequence[BoxLabel]],
    class_names: Sequence[str],
    path: PathLike,
    score_threshold: float = VISUAL_SCORE_THRESHOLD,
) -> Path:
    """One row per image, one column per detection set (e.g. source-only vs adapted).

    Ground truth is dashed white; detections at or above `score_threshold`
    are drawn in their class colour with the score.
    """
    if not images or not panels:
        raise ValueError("need at least one image and one detection set")
    for name, dets in panels.items():
        if len(dets) < len(images):
            raise ValueError(f"panel '{name}' has detections for {len(dets)} of {len(images)} images")
    if len(gt) < len(images):
        raise ValueError(f"ground truth covers {len(gt)} of {len(images)} images")

    columns = list(panels)
    colors = plt.get_cmap("tab10")
    fig, axes = plt.subplots(
        len(images),
        len(columns),
        figsize=(2.6 * len(columns), 2.6 * len(images)),
        squeeze=False,
    )
    for row, image in enumerate(images):
        for col, name in enumerate(columns):
            ax = axes[row][col]
            ax.imshow(np.clip(image, 0.0, 1.0))
            ax.set_xticks([])
            ax.set_yticks([])
            if row == 0:
                ax.set_title(name, fontsize=9)
            for label in gt[row]:
                ax.add_patch(_box_patch(label.box, "white", "--"))
            for det in visible_detections(panels[name][row], score_threshold):
                color = colors((det.class_id - 1) % 10)
                ax.add_patch(_box_patch(det.box, color))
                tag = class_names[det.class_id - 1] if det.class_id - 1 < len(class_names) else str(det.class_id)
                ax.text(det.box[0], det.box[1], f"{tag} {det.score:.2f}", color=color, fontsize=6, va="bottom")
    fig.tight_layout()
    return _save(fig, path)
