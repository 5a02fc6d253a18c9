"""Class taxonomy, prompt mapping, and probability-vector primitives.

A class distribution is a plain 1-D float64 ndarray of length c that sums
to one. Everything downstream (painting, voxel fusion, smoothing) moves
these vectors around, so they stay raw arrays instead of wrapper objects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, ParameterError, TaxonomyError, ZeroMassError

# Default sentinel for unlabeled/ignored points. Fits the 16-bit class-id
# field of the label file format, so it round-trips without remapping.
IGNORE_LABEL = 0xFFFF

_NORM_TOL = 1e-9


def normalize(raw, expected_len: int | None = None) -> np.ndarray:
    """Divide a non-negative vector by its sum.

    Raises ZeroMassError for an all-zero vector and DimensionError when
    expected_len is given and does not match.
    """
    v = np.asarray(raw, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    if expected_len is not None and v.shape[0] != expected_len:
        raise DimensionError(f"expected length {expected_len}, got {v.shape[0]}")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ParameterError("entries must be finite and non-negative")
    total = v.sum()
    if total <= 0.0:
        raise ZeroMassError("cannot normalize a zero-mass vector")
    return v / total


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    """Row-wise normalize; raises ZeroMassError if any row has zero mass."""
    rows = np.asarray(rows, dtype=np.float64)
    sums = rows.sum(axis=1, keepdims=True)
    if np.any(sums <= 0.0):
        raise ZeroMassError("zero-mass row in batch normalize")
    return rows / sums


def clamp_floor(dist, eps: float) -> np.ndarray:
    """Raise every entry to at least eps, then renormalize.

    Keeps later multiplicative fusion from permanently zeroing a class
    after one hard observation. Requires 0 < eps < 1/c.
    """
    d = np.asarray(dist, dtype=np.float64)
    if d.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {d.shape}")
    _check_eps(eps, d.shape[0])
    return normalize(np.maximum(d, eps))


def clamp_floor_rows(rows: np.ndarray, eps: float) -> np.ndarray:
    """Row-wise clamp_floor."""
    rows = np.asarray(rows, dtype=np.float64)
    _check_eps(eps, rows.shape[1])
    return normalize_rows(np.maximum(rows, eps))


def _check_eps(eps: float, c: int) -> None:
    if not (0.0 < eps < 1.0 / c):
        raise ParameterError(f"eps must lie in (0, 1/{c}), got {eps}")


def is_normalized(dist: np.ndarray, tol: float = _NORM_TOL) -> bool:
    return abs(float(np.sum(dist)) - 1.0) <= tol


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class list plus optional category/merge maps.

    categories maps class index to a coarse category index; merge_map maps
    class index to a merged class index for cross-dataset comparison.
    """

    classes: tuple[str, ...]
    categories: dict[int, int] | None = None
    merge_map: dict[int, int] | None = None
    ignore_label: int = IGNORE_LABEL

    def __post_init__(self):
        if len(self.classes) < 1:
            raise TaxonomyError("taxonomy needs at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise TaxonomyError("class names must be unique")
        if any(not name for name in self.classes):
            raise TaxonomyError("class names must be non-empty")
        c = len(self.classes)
        if c >= self.ignore_label:
            raise TaxonomyError(f"class count {c} collides with ignore label {self.ignore_label}")
        for name, mapping in (("categories", self.categories), ("merge_map", self.merge_map)):
            if mapping is None:
                continue
            for idx in mapping:
                if not (0 <= idx < c):
                    raise TaxonomyError(f"{name} refers to class index {idx} outside [0, {c})")

    @property
    def num_classes(self) -> int:
        return len(self.classes)


@dataclass(frozen=True)
class PromptMap:
    """Ordered (prompt, class index) pairs; every class needs at least one prompt."""

    prompts: tuple[tuple[str, int], ...]
    num_classes: int

    def __post_init__(self):
        seen = set()
        for text, idx in self.prompts:
            if not text:
                raise TaxonomyError("prompt text must be non-empty")
            if not (0 <= idx < self.num_classes):
                raise TaxonomyError(f"prompt {text!r} refers to class index {idx} outside [0, {self.num_classes})")
            seen.add(idx)
        missing = set(range(self.num_classes)) - seen
        if missing:
            raise TaxonomyError(f"classes without prompts: {sorted(missing)}")

    def __len__(self) -> int:
        return len(self.prompts)

    @property
    def class_indices(self) -> np.ndarray:
        """Class index per prompt, aligned to prompt (and logit) order."""
        return np.array([idx for _, idx in self.prompts], dtype=np.int64)


def load_taxonomy(path) -> tuple[ClassTaxonomy, PromptMap]:
    """Read the taxonomy JSON file: classes, prompts, optional maps.

    Format: {"classes": [...], "prompts": [["automobile", 0], ...],
    "categories": {"0": 0, ...}, "merge_map": {...}, "ignore_label": n}.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read taxonomy file {path}: {exc}") from exc
    if not isinstance(data, dict) or "classes" not in data:
        raise FormatError(f"taxonomy file {path} missing 'classes'")
    classes = tuple(data["classes"])
    kwargs = {}
    for key in ("categories", "merge_map"):
        if data.get(key) is not None:
            try:
                kwargs[key] = {int(k): int(v) for k, v in data[key].items()}
            except (TypeError, ValueError) as exc:
                raise FormatError(f"bad {key} in {path}: {exc}") from exc
    if data.get("ignore_label") is not None:
        kwargs["ignore_label"] = int(data["ignore_label"])
    tax = ClassTaxonomy(classes=classes, **kwargs)

    prompts = data.get("prompts")
    if prompts is None:
        # one prompt per class, named after it
        prompts = [[name, i] for i, name in enumerate(classes)]
    pm = PromptMap(
        prompts=tuple((str(p), int(i)) for p, i in prompts),
        num_classes=tax.num_classes,
    )
    return tax, pm


def save_taxonomy(path, taxonomy: ClassTaxonomy, prompt_map: PromptMap | None = None) -> None:
    data: dict = {"classes": list(taxonomy.classes), "ignore_label": taxonomy.ignore_label}
    if taxonomy.categories is not None:
        data["categories"] = {str(k): v for k, v in taxonomy.categories.items()}
    if taxonomy.merge_map is not None:
        data["merge_map"] = {str(k): v for k, v in taxonomy.merge_map.items()}
    if prompt_map is not None:
        data["prompts"] = [[t, i] for t, i in prompt_map.prompts]
    Path(path).write_text(json.dumps(data, indent=2))
