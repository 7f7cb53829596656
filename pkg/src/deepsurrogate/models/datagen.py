from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt, model_validator
from scipy.interpolate import BSpline
from scipy.spatial.distance import cdist

from deepsurrogate.errors import ConfigurationError
from deepsurrogate.models.dataset import Dataset, read_dataset, write_dataset_files
from deepsurrogate.models.tensor import DEFAULT_JITTER, Rng, Tensor, add_jitter, cholesky, mvn_sample
from deepsurrogate.utils.io import read_json, write_json

logger = logging.getLogger(__name__)

TRUTH_FILE = "truth.json"

Range = tuple[float, float]


class ScenarioSpec(BaseModel):
    """Full parameterization of one synthetic scenario."""

    model_config = ConfigDict(frozen=True)

    name: str = "custom"
    kind: Literal["basis", "gp"] = "basis"
    n: PositiveInt
    H: PositiveInt
    H0: PositiveInt
    p: PositiveInt = 5
    q: NonNegativeInt = 2
    rho: float = 0.1
    alpha2_range: Range
    ell_range: Range
    noise_var: PositiveFloat
    beta_range: Range = (-1.5, 1.5)
    beta0: float = 0.5
    seed: NonNegativeInt = 0
    n_basis_true: PositiveInt = 25
    spline_order: PositiveInt = 4
    n_knots: NonNegativeInt = 5
    knot_span: Range = (-3.0, 3.0)
    domain: Range = (0.0, 10.0)
    gp_cap: PositiveInt = 8_000
    jitter: float = Field(default=DEFAULT_JITTER, ge=0.0)

    @model_validator(mode="after")
    def _check_ranges(self) -> ScenarioSpec:
        for label in ("alpha2_range", "ell_range", "beta_range", "knot_span", "domain"):
            lo, hi = getattr(self, label)
            if lo > hi:
                raise ValueError(f"{label} has lower bound {lo} above upper bound {hi}")
        if self.alpha2_range[0] < 0:
            raise ValueError("spatial variances must be non-negative")
        if self.ell_range[0] <= 0:
            raise ValueError("spatial scales must be positive")
        if self.knot_span[0] == self.knot_span[1]:
            raise ValueError("knot_span must have positive width")
        return self

    @property
    def total_sims(self) -> int:
        return self.H + self.H0


_SPATIAL_WIDE = {"alpha2_range": (5.0, 10.0), "ell_range": (4.0, 8.0)}
_MISSPEC = {"kind": "gp", "alpha2_range": (1.0, 5.0), "ell_range": (1.0, 5.0)}

SCENARIOS: dict[str, dict[str, Any]] = {
    "s1": {"n": 600, "H": 100, "H0": 20, **_SPATIAL_WIDE, "noise_var": 1.0},
    "s2": {"n": 600, "H": 100, "H0": 20, "alpha2_range": (0.5, 1.0), "ell_range": (4.0, 8.0), "noise_var": 1.0},
    "s3": {"n": 600, "H": 100, "H0": 20, "alpha2_range": (0.5, 1.0), "ell_range": (0.5, 1.0), "noise_var": 1.0},
    "s4": {"n": 6000, "H": 20, "H0": 20, **_SPATIAL_WIDE, "noise_var": 1.0},
    "s5": {"n": 6000, "H": 10, "H0": 20, **_SPATIAL_WIDE, "noise_var": 1.0},
    "s6": {"n": 6000, "H": 10, "H0": 20, **_SPATIAL_WIDE, "noise_var": 0.5},
    "s7": {"n": 6000, "H": 10, "H0": 20, **_SPATIAL_WIDE, "noise_var": 0.1},
    "gp1": {"n": 1000, "H": 15, "H0": 5, **_MISSPEC, "noise_var": 1.0},
    "gp2": {"n": 2000, "H": 6, "H0": 4, **_MISSPEC, "noise_var": 1.0},
    "gp3": {"n": 1000, "H": 15, "H0": 5, **_MISSPEC, "noise_var": 0.5},
    "gp4": {"n": 2000, "H": 6, "H0": 4, **_MISSPEC, "noise_var": 0.5},
    "s6-desk": {"n": 1500, "H": 10, "H0": 10, **_SPATIAL_WIDE, "noise_var": 0.5},
    "s7-desk": {"n": 1500, "H": 10, "H0": 10, **_SPATIAL_WIDE, "noise_var": 0.1},
    "gp-desk": {"n": 200, "H": 6, "H0": 4, **_MISSPEC, "noise_var": 0.5},
}


def scenario(name: str, **overrides: Any) -> ScenarioSpec:
    """Build a preset :class:`ScenarioSpec`, optionally overriding fields."""
    if name not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario '{name}', expected one of {sorted(SCENARIOS)}")
    return ScenarioSpec(**{"name": name, **SCENARIOS[name], **overrides})


@dataclass
class GeneratedTruth:
    """A generated scenario with every component needed to rebuild it.

    ``surface`` and ``noise`` are indexed by simulation id, so
    ``beta0 + covariates @ beta + surface[h] + noise[h]`` reproduces the
    responses of simulation ``h`` exactly.
    """

    spec: ScenarioSpec
    dataset: Dataset
    test_dataset: Dataset
    beta0: float
    beta: Tensor
    surface: Tensor
    noise: Tensor
    alpha2: Tensor
    ell: Tensor
    basis_tuples: NDArray[np.int64] | None
    snr: float

    def sidecar(self) -> dict[str, Any]:
        """JSON-ready truth description written next to the CSV files."""
        return {
            "beta0": self.beta0,
            "beta": self.beta.tolist(),
            "spec": self.spec.model_dump(mode="json"),
            "seed": self.spec.seed,
            "alpha2": self.alpha2.tolist(),
            "ell": self.ell.tolist(),
            "basis_tuples": None if self.basis_tuples is None else self.basis_tuples.tolist(),
            "snr": self.snr,
            "train_sims": self.dataset.sim_ids.tolist(),
            "test_sims": self.test_dataset.sim_ids.tolist(),
        }


def sample_locations(n: int, rng: Rng, domain: Range = (0.0, 10.0)) -> Tensor:
    """``n`` i.i.d. uniform sites in ``domain × domain``."""
    if n < 1:
        raise ConfigurationError(f"need at least one site, got n={n}")
    return rng.uniform(domain[0], domain[1], (n, 2))


def compound_symmetric(p: int, rho: float) -> Tensor:
    """``(1 - ρ) I + ρ 11ᵀ``."""
    return (1.0 - rho) * np.eye(p) + rho * np.ones((p, p))


def sample_inputs(count: int, p: int, rho: float, rng: Rng) -> Tensor:
    """``count`` rows i.i.d. ``N(0, Σ)`` with compound-symmetric ``Σ``.

    Raises:
        ConfigurationError: If ``ρ`` makes ``Σ`` indefinite.
    """
    lower = -1.0 / (p - 1) if p > 1 else -np.inf
    if not lower < rho < 1.0:
        raise ConfigurationError(f"rho={rho} outside ({lower}, 1) for p={p}")
    chol = cholesky(compound_symmetric(p, rho))
    return mvn_sample(np.zeros(p), chol, rng, size=count)


def knot_vector(order: int = 4, n_knots: int = 5, span: Range = (-3.0, 3.0)) -> Tensor:
    """Clamped knots: ``order`` copies of each end and equally spaced interior knots."""
    lo, hi = span
    interior = np.linspace(lo, hi, n_knots + 2)[1:-1]
    return np.concatenate([np.full(order, lo), interior, np.full(order, hi)])


def bspline_basis_1d(
    values: Tensor, order: int = 4, n_knots: int = 5, span: Range = (-3.0, 3.0)
) -> Tensor:
    """Design matrix ``(len(values), n_knots + order)``; values are clamped to ``span``."""
    t = knot_vector(order, n_knots, span)
    x = np.clip(np.asarray(values, dtype=np.float64).reshape(-1), span[0], span[1])
    return BSpline.design_matrix(x, t, order - 1).toarray()


def select_basis_tuples(m: int, p: int, count: int, rng: Rng) -> NDArray[np.int64]:
    """Draw ``count`` distinct index tuples into an ``m``-per-dimension product basis."""
    total = m**p
    if count > total:
        raise ConfigurationError(f"cannot select {count} of {total} tensor-product functions")
    flat = rng.choice(total, size=count, replace=False)
    return np.stack(np.unravel_index(flat, (m,) * p), axis=1).astype(np.int64)


def bspline_features(
    z: Tensor,
    order: int = 4,
    knots: int = 5,
    span: Range = (-3.0, 3.0),
    tuples: NDArray[np.int64] | None = None,
) -> Tensor:
    """Tensor-product B-spline features of one input or a ``(rows, p)`` batch.

    Args:
        z: Input vector(s).
        order: Spline order (4 is cubic).
        knots: Number of interior knots per dimension.
        span: Knot interval; values outside are clamped.
        tuples: ``(K, p)`` per-dimension basis indices of each feature;
            ``None`` uses the full product.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    rows = np.atleast_2d(z)
    p = rows.shape[1]
    per_dim = [bspline_basis_1d(rows[:, d], order, knots, span) for d in range(p)]
    if tuples is None:
        m = per_dim[0].shape[1]
        tuples = np.stack(np.unravel_index(np.arange(m**p), (m,) * p), axis=1)
    features = np.ones((rows.shape[0], tuples.shape[0]))
    for d in range(p):
        features *= per_dim[d][:, tuples[:, d]]
    return features[0] if single else features


def exponential_kernel(a: Tensor, b: Tensor, alpha2: float, ell: float) -> Tensor:
    """``α² exp(-‖a_i - b_j‖ / ℓ)`` between the rows of ``a`` and ``b``."""
    return alpha2 * np.exp(-cdist(a, b) / ell)


def sample_coef_surface(
    sites: Tensor, alpha2: float, ell: float, rng: Rng, jitter: float = DEFAULT_JITTER
) -> Tensor:
    """One zero-mean exponential-kernel GP draw at ``sites``.

    Raises:
        ConfigurationError: If ``α² < 0`` or ``ℓ <= 0``.
        DecompositionError: If the kernel matrix cannot be factorized.
    """
    if alpha2 < 0 or ell <= 0:
        raise ConfigurationError(f"need alpha2 >= 0 and ell > 0, got {alpha2}, {ell}")
    n = sites.shape[0]
    if alpha2 == 0:
        return np.zeros(n)
    chol = cholesky(add_jitter(exponential_kernel(sites, sites, alpha2, ell), jitter))
    return mvn_sample(np.zeros(n), chol, rng)


def _basis_surface(
    spec: ScenarioSpec, sites: Tensor, inputs: Tensor, rng: Rng
) -> tuple[Tensor, Tensor, Tensor, NDArray[np.int64]]:
    m = spec.n_knots + spec.spline_order
    tuples = select_basis_tuples(m, spec.p, spec.n_basis_true, rng.spawn(0))
    params_rng = rng.spawn(1)
    alpha2 = params_rng.uniform(*spec.alpha2_range, spec.n_basis_true)
    ell = params_rng.uniform(*spec.ell_range, spec.n_basis_true)
    surfaces_rng = rng.spawn(2)
    eta = np.stack(
        [
            sample_coef_surface(sites, alpha2[k], ell[k], surfaces_rng.spawn(k), spec.jitter)
            for k in range(spec.n_basis_true)
        ]
    )
    features = bspline_features(inputs, spec.spline_order, spec.n_knots, spec.knot_span, tuples)
    return features @ eta, alpha2, ell, tuples


def _joint_gp_surface(
    spec: ScenarioSpec, sites: Tensor, inputs: Tensor, rng: Rng
) -> tuple[Tensor, Tensor, Tensor]:
    total = inputs.shape[0]
    size = spec.n * total
    if size > spec.gp_cap:
        raise ConfigurationError(
            f"joint GP needs a {size}x{size} factorization, above the cap of {spec.gp_cap}; "
            "reduce n (or raise gp_cap)"
        )
    params_rng = rng.spawn(0)
    alpha2 = float(params_rng.uniform(*spec.alpha2_range))
    ell = float(params_rng.uniform(*spec.ell_range))
    points = np.hstack([np.tile(sites, (total, 1)), np.repeat(inputs, spec.n, axis=0)])
    chol = cholesky(add_jitter(exponential_kernel(points, points, alpha2, ell), spec.jitter))
    f = mvn_sample(np.zeros(size), chol, rng.spawn(1)).reshape(total, spec.n)
    return f, np.array([alpha2]), np.array([ell])


def empirical_snr(surface: Tensor, fixed_effect: Tensor, noise_var: float) -> float:
    """Variance of the noiseless signal over every pair divided by the noise variance."""
    signal = surface + np.asarray(fixed_effect)[None, :]
    return float(np.var(signal) / noise_var)


def generate(spec: ScenarioSpec, rng: Rng | None = None) -> GeneratedTruth:
    """Generate a scenario and split it into ``H`` training and ``H0`` test runs.

    Raises:
        ConfigurationError: If ``ρ`` is invalid or the joint GP exceeds its cap.
    """
    rng = rng or Rng(spec.seed)
    total = spec.total_sims
    sites = sample_locations(spec.n, rng.spawn(0), spec.domain)
    covariates = rng.spawn(1).normal((spec.n, spec.q))
    inputs = sample_inputs(total, spec.p, spec.rho, rng.spawn(2))
    beta = rng.spawn(3).uniform(spec.beta_range[0], spec.beta_range[1], spec.q)

    tuples: NDArray[np.int64] | None = None
    if spec.kind == "basis":
        surface, alpha2, ell, tuples = _basis_surface(spec, sites, inputs, rng.spawn(4))
    else:
        surface, alpha2, ell = _joint_gp_surface(spec, sites, inputs, rng.spawn(4))

    noise = np.sqrt(spec.noise_var) * rng.spawn(5).normal((total, spec.n))
    fixed = spec.beta0 + covariates @ beta
    responses = fixed[None, :] + surface + noise

    order = rng.spawn(6).permutation(total)
    train_rows, test_rows = np.sort(order[: spec.H]), np.sort(order[spec.H :])
    sim_ids = np.arange(total, dtype=np.int64)

    def split(rows: NDArray[np.int64]) -> Dataset:
        return Dataset(sites, covariates, inputs[rows], responses[rows], sim_ids[rows])

    snr = empirical_snr(surface, covariates @ beta, spec.noise_var)
    logger.info("Generated scenario '%s' (%s): n=%d, H=%d, H0=%d, empirical SNR %.3f",
                spec.name, spec.kind, spec.n, spec.H, spec.H0, snr)
    return GeneratedTruth(
        spec=spec,
        dataset=split(train_rows),
        test_dataset=split(test_rows),
        beta0=spec.beta0,
        beta=beta,
        surface=surface,
        noise=noise,
        alpha2=alpha2,
        ell=ell,
        basis_tuples=tuples,
        snr=snr,
    )


def write_generated(truth: GeneratedTruth, out_dir: str | Path) -> list[Path]:
    """Write the CSV tables and the ``truth.json`` sidecar."""
    out_dir = Path(out_dir)
    paths = write_dataset_files(out_dir, {"train": truth.dataset, "test": truth.test_dataset})
    paths.append(write_json(out_dir / TRUTH_FILE, truth.sidecar()))
    return paths


def read_sidecar(data_dir: str | Path) -> dict[str, Any]:
    return read_json(Path(data_dir) / TRUTH_FILE)


def read_generated(data_dir: str | Path) -> tuple[Dataset, Dataset, dict[str, Any]]:
    """Training split, test split and truth sidecar of a generated directory."""
    return read_dataset(data_dir, "train"), read_dataset(data_dir, "test"), read_sidecar(data_dir)
