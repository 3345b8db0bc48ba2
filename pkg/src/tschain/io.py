"""File formats: dense matrices, edge lists, long-format panels, manifests.

All numeric output uses 17 significant digits so downstream consumers can
reproduce values bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dataset import OrdinalSeriesDataset

FLOAT_FMT = "%.17g"


def write_matrix(path, matrix: np.ndarray, labels: list[str] | None = None) -> None:
    """Dense delimited matrix with a header row of column labels."""
    matrix = np.asarray(matrix, dtype=float)
    p = matrix.shape[1]
    labels = labels if labels is not None else [f"V{j}" for j in range(p)]
    header = ",".join(labels)
    np.savetxt(path, matrix, fmt=FLOAT_FMT, delimiter=",", header=header, comments="")


def read_matrix(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_undirected_edges(path, theta: np.ndarray, labels: list[str], partial_correlation: bool = False) -> None:
    """Edge list of the off-diagonal precision support (j < j').

    With ``partial_correlation`` the value column carries
    -theta_jj' / sqrt(theta_jj theta_j'j') instead of the raw entry.
    """
    p = theta.shape[0]
    lines = ["source,target,value"]
    for i in range(p):
        for j in range(i + 1, p):
            if theta[i, j] != 0.0:
                val = theta[i, j]
                if partial_correlation:
                    val = -theta[i, j] / np.sqrt(theta[i, i] * theta[j, j])
                lines.append(f"{labels[i]},{labels[j]},{FLOAT_FMT % val}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_directed_edges(path, gamma: np.ndarray, labels: list[str]) -> None:
    """Edge list of lag-1 effects: source at t-1, target at t."""
    p = gamma.shape[0]
    lines = ["source_lag1,target,value"]
    # gamma[j, l]: coefficient of variable l at t-1 in the prediction of j at t.
    for j in range(p):
        for l in range(p):
            if gamma[j, l] != 0.0:
                lines.append(f"{labels[l]},{labels[j]},{FLOAT_FMT % gamma[j, l]}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_long_panel(path, dataset: OrdinalSeriesDataset) -> None:
    """Long-format table (sample_id, time_index, variable_id, value)."""
    lines = ["sample_id,time_index,variable_id,value"]
    vals = dataset.values
    for i, sid in enumerate(dataset.sample_ids):
        for t in range(dataset.T):
            for j, vid in enumerate(dataset.variable_ids):
                y = vals[i, t, j]
                if np.isnan(y):
                    cell = ""
                elif dataset.var_kinds[j].kind == "ordinal":
                    cell = str(int(y))
                else:
                    cell = FLOAT_FMT % y
                lines.append(f"{sid},{t},{vid},{cell}")
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(path, command: str, seed, config: dict, outputs: list[str]) -> None:
    """Run manifest: version, seed, resolved configuration and its hash.

    Content is fully determined by the inputs (no timestamps) so reruns are
    byte-identical.
    """
    from . import __version__

    manifest = {
        "tool": "tschain",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "config_sha256": config_hash(config),
        "outputs": sorted(outputs),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
