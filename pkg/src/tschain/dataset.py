"""Dataset ingestion, empirical marginals, and latent truncation bounds.

Observed values are mapped onto the latent Gaussian scale through their
empirical marginal distributions: ordinal codes become truncation intervals
between consecutive cutpoints, continuous values become degenerate points at
the normal quantile of their shrunk empirical CDF, and missing cells are
unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import ndtri

__all__ = [
    "VarKind",
    "OrdinalSeriesDataset",
    "MarginalModel",
    "LatentBounds",
    "load_dataset",
    "empirical_cdf",
    "estimate_marginals",
    "compute_bounds",
]

# Integer-valued variables with at most this many levels are treated as
# ordinal unless the schema says otherwise.
MAX_AUTO_ORDINAL_LEVELS = 20

REQUIRED_COLUMNS = ("sample_id", "time_index", "variable_id", "value")


@dataclass(frozen=True)
class VarKind:
    """Variable type tag: 'ordinal' with a category count, or 'continuous'."""

    kind: str
    n_categories: int | None = None

    def __post_init__(self):
        if self.kind not in ("ordinal", "continuous"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == "ordinal" and (self.n_categories is None or self.n_categories < 2):
            raise ValueError("ordinal variables need at least 2 categories")


@dataclass
class OrdinalSeriesDataset:
    """Dense n x T x p panel of ordinal codes / continuous values / NaN.

    Ordinal cells hold integer codes 0..c_k-1 stored as floats; missing cells
    are NaN.  Instances are treated as immutable after construction.
    """

    values: np.ndarray
    var_kinds: list[VarKind]
    variable_ids: list[str] = field(default_factory=list)
    sample_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("values must have shape (n, T, p)")
        n, T, p = self.values.shape
        if n < 1 or p < 1 or T < 2:
            raise ValueError(f"need n >= 1, p >= 1, T >= 2; got n={n}, T={T}, p={p}")
        if len(self.var_kinds) != p:
            raise ValueError("one VarKind per variable required")
        if not self.variable_ids:
            self.variable_ids = [f"V{j}" for j in range(p)]
        if not self.sample_ids:
            self.sample_ids = [str(i) for i in range(n)]
        self.values.setflags(write=False)
        self._validate_cells()

    def _validate_cells(self):
        for j, vk in enumerate(self.var_kinds):
            col = self.values[:, :, j]
            obs = col[~np.isnan(col)]
            if np.unique(obs).size < 2:
                raise ValueError(
                    f"variable {self.variable_ids[j]!r} has fewer than two observed levels"
                )
            if vk.kind == "ordinal":
                if not np.all(obs == np.round(obs)):
                    raise ValueError(
                        f"ordinal variable {self.variable_ids[j]!r} has non-integer codes"
                    )
                if obs.min() < 0 or obs.max() > vk.n_categories - 1:
                    raise ValueError(
                        f"codes of {self.variable_ids[j]!r} outside [0, {vk.n_categories - 1}]"
                    )

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def p(self) -> int:
        return self.values.shape[2]


@dataclass
class MarginalModel:
    """Per (variable, time) empirical marginals on the latent scale.

    ``cutpoints[t][j]`` is the cutpoint vector (length c_k + 1, ends at
    -inf/+inf) for ordinal variables, None for continuous ones.
    ``cdf_tables[t][j]`` is (sorted distinct values, shrunk cumulative
    probabilities) for continuous variables, None for ordinal ones.  With
    ``pooled=True`` every time index shares the table built from all times.
    """

    cutpoints: list[list[np.ndarray | None]]
    cdf_tables: list[list[tuple[np.ndarray, np.ndarray] | None]]
    pooled: bool = False


@dataclass
class LatentBounds:
    """Per-cell truncation intervals on the latent Gaussian scale.

    Continuous cells are degenerate (lower == upper == the latent point);
    missing cells are (-inf, +inf).
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 3:
            raise ValueError("lower/upper must both have shape (n, T, p)")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        self.lower.setflags(write=False)
        self.upper.setflags(write=False)

    @property
    def is_point(self) -> np.ndarray:
        return (self.lower == self.upper) & np.isfinite(self.lower)

    @property
    def shape(self):
        return self.lower.shape


def empirical_cdf(values: np.ndarray, query: float) -> float:
    """Shrunk empirical CDF: #{y_i <= query} / (n + 1).

    Always in (0, 1) for finite query sets, so normal quantiles of the result
    stay finite.
    """
    vals = np.asarray(values, dtype=float)
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise ValueError("empirical_cdf needs at least one observed value")
    return float(np.count_nonzero(vals <= query)) / (vals.size + 1)


def _infer_kind(obs: np.ndarray) -> VarKind:
    integral = np.all(obs == np.round(obs))
    if integral and obs.min() >= 0 and obs.max() <= MAX_AUTO_ORDINAL_LEVELS - 1:
        return VarKind("ordinal", int(obs.max()) + 1)
    return VarKind("continuous")


def load_dataset(path, schema: dict[str, str] | None = None, delimiter: str | None = None) -> OrdinalSeriesDataset:
    """Read a long-format table into a dense panel.

    The file must carry a header naming the columns sample_id, time_index,
    variable_id, value; empty fields and "NA" mark missing values.  Variable
    kind is inferred (small-range non-negative integers -> ordinal) unless
    ``schema`` maps a variable_id to 'ordinal' or 'continuous'.

    Raises
    ------
    ValueError
        On duplicate (sample, time, variable) triples, non-contiguous time
        indices, or variables with a single observed level.
    """
    df = pd.read_csv(
        path,
        sep=delimiter,
        engine="python" if delimiter is None else "c",
        na_values=["NA", ""],
        keep_default_na=False,
        dtype={"sample_id": str, "variable_id": str},
    )
    missing_cols = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing_cols:
        raise ValueError(f"missing required columns: {missing_cols}")
    df["value"] = pd.to_numeric(df["value"], errors="raise")
    df["time_index"] = df["time_index"].astype(int)

    dupes = df.duplicated(subset=["sample_id", "time_index", "variable_id"])
    if dupes.any():
        row = df[dupes].iloc[0]
        raise ValueError(
            "duplicate (sample, time, variable) triple: "
            f"({row['sample_id']}, {row['time_index']}, {row['variable_id']})"
        )

    times = np.sort(df["time_index"].unique())
    if times.size < 2:
        raise ValueError("need at least two time points")
    if not np.array_equal(times, np.arange(times[0], times[0] + times.size)):
        raise ValueError(f"time indices are not contiguous: {times.tolist()}")

    samples = sorted(df["sample_id"].unique())
    variables = sorted(df["variable_id"].unique())
    n, T, p = len(samples), times.size, len(variables)
    s_idx = {s: i for i, s in enumerate(samples)}
    t_idx = {t: i for i, t in enumerate(times)}
    v_idx = {v: j for j, v in enumerate(variables)}

    values = np.full((n, T, p), np.nan)
    for s, t, v, y in df[list(REQUIRED_COLUMNS)].itertuples(index=False):
        values[s_idx[s], t_idx[t], v_idx[v]] = y

    schema = schema or {}
    var_kinds = []
    for j, v in enumerate(variables):
        col = values[:, :, j]
        obs = col[~np.isnan(col)]
        if np.unique(obs).size < 2:
            raise ValueError(f"variable {v!r} has fewer than two observed levels")
        declared = schema.get(v)
        if declared == "continuous":
            var_kinds.append(VarKind("continuous"))
        elif declared == "ordinal":
            if not np.all(obs == np.round(obs)) or obs.min() < 0:
                raise ValueError(f"variable {v!r} declared ordinal but has invalid codes")
            var_kinds.append(VarKind("ordinal", int(obs.max()) + 1))
        else:
            var_kinds.append(_infer_kind(obs))

    return OrdinalSeriesDataset(values, var_kinds, variable_ids=variables, sample_ids=samples)


def _ordinal_cutpoints(obs: np.ndarray, n_categories: int) -> np.ndarray:
    """Cutpoints -inf = c_0 < c_1 < ... < c_C = +inf from shrunk counts."""
    counts = np.zeros(n_categories)
    codes, cnt = np.unique(obs.astype(int), return_counts=True)
    counts[codes] = cnt
    cum = np.cumsum(counts)[:-1] / (obs.size + 1)
    cuts = np.empty(n_categories + 1)
    cuts[0] = -np.inf
    cuts[-1] = np.inf
    # A zero-count category collapses its interval; such codes never occur in
    # the data that produced these counts, so the degenerate cut is unused.
    cuts[1:-1] = np.where(cum > 0, ndtri(np.maximum(cum, 1e-300)), -np.inf)
    return cuts


def _cdf_table(obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals = np.sort(np.unique(obs))
    cum = np.searchsorted(np.sort(obs), vals, side="right") / (obs.size + 1)
    return vals, cum


def estimate_marginals(dataset: OrdinalSeriesDataset, pool_times: bool = False) -> MarginalModel:
    """Empirical marginal tables per (variable, time), optionally pooled.

    Pooling uses all time points of a variable for one shared table, which is
    the robust choice when n is small relative to the category count.
    """
    n, T, p = dataset.values.shape
    cutpoints: list[list[np.ndarray | None]] = [[None] * p for _ in range(T)]
    cdf_tables: list[list[tuple[np.ndarray, np.ndarray] | None]] = [[None] * p for _ in range(T)]
    for j, vk in enumerate(dataset.var_kinds):
        if pool_times:
            obs = dataset.values[:, :, j]
            obs = obs[~np.isnan(obs)]
            if obs.size == 0:
                raise ValueError(f"variable {dataset.variable_ids[j]!r} fully missing")
            shared_cuts = _ordinal_cutpoints(obs, vk.n_categories) if vk.kind == "ordinal" else None
            shared_table = _cdf_table(obs) if vk.kind == "continuous" else None
            for t in range(T):
                cutpoints[t][j] = shared_cuts
                cdf_tables[t][j] = shared_table
        else:
            for t in range(T):
                obs = dataset.values[:, t, j]
                obs = obs[~np.isnan(obs)]
                if obs.size == 0:
                    raise ValueError(
                        f"variable {dataset.variable_ids[j]!r} fully missing at time {t}; "
                        "consider pooled marginals"
                    )
                if vk.kind == "ordinal":
                    cutpoints[t][j] = _ordinal_cutpoints(obs, vk.n_categories)
                else:
                    cdf_tables[t][j] = _cdf_table(obs)
    return MarginalModel(cutpoints, cdf_tables, pooled=pool_times)


def compute_bounds(dataset: OrdinalSeriesDataset, marginals: MarginalModel) -> LatentBounds:
    """Translate every observed cell into its latent truncation interval."""
    n, T, p = dataset.values.shape
    lower = np.full((n, T, p), -np.inf)
    upper = np.full((n, T, p), np.inf)
    for j, vk in enumerate(dataset.var_kinds):
        for t in range(T):
            col = dataset.values[:, t, j]
            obs_mask = ~np.isnan(col)
            if not np.any(obs_mask):
                continue
            if vk.kind == "ordinal":
                cuts = marginals.cutpoints[t][j]
                codes = col[obs_mask].astype(int)
                lower[obs_mask, t, j] = cuts[codes]
                upper[obs_mask, t, j] = cuts[codes + 1]
            else:
                vals, cum = marginals.cdf_tables[t][j]
                idx = np.searchsorted(vals, col[obs_mask], side="right") - 1
                if np.any(idx < 0):
                    raise ValueError("continuous value below every table entry")
                z = ndtri(cum[idx])
                lower[obs_mask, t, j] = z
                upper[obs_mask, t, j] = z
    return LatentBounds(lower, upper)
