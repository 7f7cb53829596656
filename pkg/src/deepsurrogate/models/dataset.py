"""Gridded simulator output: sites, fine-scale covariates, inputs and responses."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from deepsurrogate.errors import FormatError, ShapeError, UsageError
from deepsurrogate.models.tensor import Tensor
from deepsurrogate.utils.io import write_csv

logger = logging.getLogger(__name__)

SITES_FILE = "sites.csv"
INPUTS_FILE = "inputs.csv"
RESPONSES_FILE = "responses.csv"


@dataclass
class Dataset:
    """Responses of ``H`` simulations observed at the same ``n`` sites.

    Attributes:
        sites: ``(n, 2)`` spatial coordinates.
        fine_covariates: ``(n, q)`` site-level covariates shared by all runs.
        inputs: ``(H, p)`` simulation inputs.
        responses: ``(H, n)`` outputs; row ``h`` is simulation ``h``.
        sim_ids: Identifier per simulation row.
        site_ids: Identifier per site row.
    """

    sites: Tensor
    fine_covariates: Tensor
    inputs: Tensor
    responses: Tensor
    sim_ids: NDArray[np.int64] = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    site_ids: NDArray[np.int64] = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self) -> None:
        self.sites = np.asarray(self.sites, dtype=np.float64)
        self.fine_covariates = np.asarray(self.fine_covariates, dtype=np.float64)
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.responses = np.asarray(self.responses, dtype=np.float64)
        if self.fine_covariates.ndim == 1:
            self.fine_covariates = self.fine_covariates[:, None]

        if self.sites.ndim != 2 or self.sites.shape[1] != 2:
            raise ShapeError(f"sites must be (n, 2), got {self.sites.shape}")
        n = self.sites.shape[0]
        if self.fine_covariates.ndim != 2 or self.fine_covariates.shape[0] != n:
            raise ShapeError(
                f"fine covariates {self.fine_covariates.shape} do not match {n} sites"
            )
        if self.inputs.ndim != 2:
            raise ShapeError(f"inputs must be (H, p), got {self.inputs.shape}")
        if self.responses.shape != (self.inputs.shape[0], n):
            raise ShapeError(
                f"responses must be ({self.inputs.shape[0]}, {n}), got {self.responses.shape}"
            )
        for name in ("sites", "fine_covariates", "inputs", "responses"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise UsageError(f"dataset {name} contain missing or non-finite values")

        if self.sim_ids.size == 0:
            self.sim_ids = np.arange(self.H, dtype=np.int64)
        if self.site_ids.size == 0:
            self.site_ids = np.arange(n, dtype=np.int64)
        self.sim_ids = np.asarray(self.sim_ids, dtype=np.int64)
        self.site_ids = np.asarray(self.site_ids, dtype=np.int64)
        if self.sim_ids.shape != (self.H,) or self.site_ids.shape != (n,):
            raise ShapeError("identifier arrays do not match dataset dimensions")

    @property
    def n(self) -> int:
        return int(self.sites.shape[0])

    @property
    def H(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def p(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def q(self) -> int:
        return int(self.fine_covariates.shape[1])

    @property
    def n_pairs(self) -> int:
        return self.n * self.H

    def pairs(self, index: NDArray[np.int64]) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Rows for flattened pair indices ``k = h * n + i``.

        Returns:
            Sites, covariates, inputs and responses aligned by row.
        """
        h, i = np.divmod(np.asarray(index, dtype=np.int64), self.n)
        return self.sites[i], self.fine_covariates[i], self.inputs[h], self.responses[h, i]

    def select_sims(self, rows: Sequence[int] | NDArray[np.int64]) -> Dataset:
        """A dataset restricted to the given simulation rows."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            sites=self.sites,
            fine_covariates=self.fine_covariates,
            inputs=self.inputs[rows],
            responses=self.responses[rows],
            sim_ids=self.sim_ids[rows],
            site_ids=self.site_ids,
        )


def write_dataset_files(out_dir: str | Path, splits: Mapping[str, Dataset]) -> list[Path]:
    """Write ``sites.csv``, ``inputs.csv`` and ``responses.csv`` for named splits.

    All splits must share the same sites and covariates.
    """
    if not splits:
        raise UsageError("at least one split is required")
    out_dir = Path(out_dir)
    first = next(iter(splits.values()))
    for name, ds in splits.items():
        if not (np.array_equal(ds.sites, first.sites) and np.array_equal(ds.site_ids, first.site_ids)):
            raise UsageError(f"split '{name}' has different sites")

    site_frame = pd.DataFrame({"site_id": first.site_ids, "s1": first.sites[:, 0], "s2": first.sites[:, 1]})
    for j in range(first.q):
        site_frame[f"x{j + 1}"] = first.fine_covariates[:, j]

    input_rows, response_parts = [], []
    for name, ds in splits.items():
        for h in range(ds.H):
            row: dict[str, object] = {"sim_id": int(ds.sim_ids[h]), "split": name}
            row.update({f"z{j + 1}": float(ds.inputs[h, j]) for j in range(ds.p)})
            input_rows.append(row)
        response_parts.append(
            pd.DataFrame(
                {
                    "sim_id": np.repeat(ds.sim_ids, ds.n),
                    "site_id": np.tile(ds.site_ids, ds.H),
                    "y": ds.responses.reshape(-1),
                }
            )
        )
    input_frame = pd.DataFrame(input_rows).sort_values("sim_id", kind="stable")
    response_frame = pd.concat(response_parts, ignore_index=True).sort_values(
        ["sim_id", "site_id"], kind="stable"
    )
    return [
        write_csv(out_dir / SITES_FILE, site_frame),
        write_csv(out_dir / INPUTS_FILE, input_frame),
        write_csv(out_dir / RESPONSES_FILE, response_frame),
    ]


def _read(path: Path, required: Sequence[str]) -> pd.DataFrame:
    if not path.exists():
        raise FormatError(f"missing data file {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise FormatError(f"{path.name} lacks columns {missing}")
    if frame.isna().any().any():
        raise FormatError(f"{path.name} contains missing values")
    return frame


def _numbered(frame: pd.DataFrame, prefix: str) -> list[str]:
    cols = [c for c in frame.columns if c.startswith(prefix) and c[len(prefix):].isdigit()]
    return sorted(cols, key=lambda c: int(c[len(prefix):]))


def read_dataset(data_dir: str | Path, split: str | None = "train") -> Dataset:
    """Load one split (or every simulation when ``split`` is None) from CSV files.

    Raises:
        FormatError: If a file is missing, malformed, or a response is absent.
    """
    data_dir = Path(data_dir)
    sites = _read(data_dir / SITES_FILE, ["site_id", "s1", "s2"]).sort_values("site_id", kind="stable")
    inputs = _read(data_dir / INPUTS_FILE, ["sim_id"]).sort_values("sim_id", kind="stable")
    responses = _read(data_dir / RESPONSES_FILE, ["sim_id", "site_id", "y"])

    if split is not None:
        if "split" not in inputs.columns:
            raise FormatError(f"{INPUTS_FILE} has no 'split' column")
        inputs = inputs[inputs["split"] == split]
    if inputs.empty:
        raise FormatError(f"no simulations found for split {split!r}")

    site_ids = sites["site_id"].to_numpy(dtype=np.int64)
    sim_ids = inputs["sim_id"].to_numpy(dtype=np.int64)
    grid = responses.pivot_table(index="sim_id", columns="site_id", values="y", aggfunc="first")
    try:
        values = grid.loc[sim_ids, site_ids].to_numpy(dtype=np.float64)
    except KeyError as e:
        raise FormatError(f"responses missing for simulation or site {e}") from e
    if np.isnan(values).any():
        raise FormatError("responses do not cover every (simulation, site) pair")

    covariate_cols = _numbered(sites, "x")
    return Dataset(
        sites=sites[["s1", "s2"]].to_numpy(dtype=np.float64),
        fine_covariates=sites[covariate_cols].to_numpy(dtype=np.float64).reshape(len(sites), len(covariate_cols)),
        inputs=inputs[_numbered(inputs, "z")].to_numpy(dtype=np.float64),
        responses=values,
        sim_ids=sim_ids,
        site_ids=site_ids,
    )
