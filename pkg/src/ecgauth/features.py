"""Beat standardization and PCA projection, fitted on training data only.

Columns are z-scored with population statistics (scale floored to guard
constant columns), then projected onto the leading eigenvectors of the
standardized training covariance.  The eigen-solver and a fixed sign
convention make fits bit-reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import Session
from .segmentation import BeatMatrix

SCALE_FLOOR = 1e-8
DEFAULT_COMPONENTS = 25


@dataclass(frozen=True, eq=False)
class FeatureModel:
    """Training-set standardization statistics plus an orthonormal PCA basis."""

    feature_mean: np.ndarray  # (width,)
    feature_scale: np.ndarray  # (width,), strictly positive
    components: np.ndarray  # (k, width), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing
    requested_components: int

    def __post_init__(self):
        for name in ("feature_mean", "feature_scale", "components", "explained_variance"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.components.ndim != 2:
            raise ValueError("components must be a (k, width) matrix")
        k, width = self.components.shape
        if self.feature_mean.shape != (width,) or self.feature_scale.shape != (width,):
            raise ValueError("mean/scale length must match component width")
        if self.explained_variance.shape != (k,):
            raise ValueError("one explained variance per component required")
        if (self.feature_scale <= 0).any():
            raise ValueError("feature_scale must be strictly positive")
        if (np.diff(self.explained_variance) > 1e-12).any():
            raise ValueError("explained_variance must be non-increasing")

    @property
    def n_components(self) -> int:
        return int(self.components.shape[0])

    @property
    def width(self) -> int:
        return int(self.components.shape[1])


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    subject: str
    session: Session
    genuine_label: bool | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).copy()
        if not np.isfinite(values).all():
            raise ValueError("feature vector contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def _beat_array(beats: BeatMatrix | np.ndarray) -> np.ndarray:
    if isinstance(beats, BeatMatrix):
        return beats.beats
    return np.asarray(beats, dtype=np.float64)


def fit_feature_model(train_beats: BeatMatrix | np.ndarray, k: int = DEFAULT_COMPONENTS) -> FeatureModel:
    """Fit standardization statistics and the top-k PCA basis on training rows.

    If k exceeds the number of available directions (the beat width), fewer
    components are returned with a warning.  The sign of each component is
    fixed so its largest-magnitude entry is positive.
    """
    x = _beat_array(train_beats)
    if x.ndim != 2:
        raise ValueError("training beats must form a 2-D matrix")
    n, width = x.shape
    if k < 1:
        raise ValueError("k must be at least 1")
    k_eff = min(k, width)
    if k_eff < k:
        warnings.warn(
            f"requested {k} components but the beat width is {width}; returning {k_eff}",
            RuntimeWarning,
            stacklevel=2,
        )
    if n <= k_eff:
        raise ValueError(f"need more than {k_eff} training rows, got {n}")

    mean = x.mean(axis=0)
    scale = np.maximum(x.std(axis=0), SCALE_FLOOR)
    z = (x - mean) / scale
    cov = (z.T @ z) / n
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1][:k_eff]
    variance = np.maximum(eigenvalues[order], 0.0)
    components = eigenvectors[:, order].T
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return FeatureModel(
        feature_mean=mean,
        feature_scale=scale,
        components=components,
        explained_variance=variance,
        requested_components=k,
    )


def standardize(beats: BeatMatrix | np.ndarray, model: FeatureModel) -> np.ndarray:
    x = _beat_array(beats)
    if x.shape[-1] != model.width:
        raise ValueError(f"beat width {x.shape[-1]} does not match model width {model.width}")
    return (x - model.feature_mean) / model.feature_scale


def project(beats: BeatMatrix | np.ndarray, model: FeatureModel) -> np.ndarray:
    """Standardize rows with training statistics and project onto the basis."""
    return standardize(beats, model) @ model.components.T


def transform(beats: BeatMatrix, model: FeatureModel) -> list[FeatureVector]:
    projected = project(beats, model)
    return [FeatureVector(values=row, subject=beats.subject, session=beats.session) for row in projected]


def with_label(vector: FeatureVector, target: str) -> FeatureVector:
    return replace(vector, genuine_label=(vector.subject == target))


# ---------------------------------------------------------------------------
# text serialization for audit

def write_feature_model(path: Path, model: FeatureModel) -> None:
    lines = [
        "# feature model",
        f"k {model.n_components}",
        f"requested_k {model.requested_components}",
        f"width {model.width}",
        "mean " + " ".join(repr(float(v)) for v in model.feature_mean),
        "scale " + " ".join(repr(float(v)) for v in model.feature_scale),
        "variance " + " ".join(repr(float(v)) for v in model.explained_variance),
    ]
    for row in model.components:
        lines.append("component " + " ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_feature_model(path: Path) -> FeatureModel:
    fields: dict[str, list[float]] = {}
    scalars: dict[str, int] = {}
    rows: list[list[float]] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key in ("k", "requested_k", "width"):
            scalars[key] = int(rest)
        elif key == "component":
            rows.append([float(t) for t in rest.split()])
        else:
            fields[key] = [float(t) for t in rest.split()]
    return FeatureModel(
        feature_mean=np.asarray(fields["mean"]),
        feature_scale=np.asarray(fields["scale"]),
        components=np.asarray(rows),
        explained_variance=np.asarray(fields["variance"]),
        requested_components=scalars.get("requested_k", scalars["k"]),
    )
