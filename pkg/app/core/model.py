# app/core/model.py
"""
Data model for compressive streaming PCA.

Covariances are kept in spectral form (eigenvalues + orthonormal basis) so that
the leading eigenvector and eigengap are always exact and a Gaussian draw costs
one basis multiply. Every random operation takes an explicit
numpy Generator; nothing here holds mutable state.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from app.core.errors import (
    DegenerateInputError,
    DimensionMismatchError,
    OjaError,
    OrthogonalityError,
    SpectrumError,
)

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-9
ORTHO_TOL = 1e-9
NORM_FLOOR = 1e-12
MAX_REDRAWS = 100


@dataclass(frozen=True, eq=False)
class UnitVector:
    coords: np.ndarray

    def __post_init__(self) -> None:
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim != 1 or coords.size < 2:
            raise DimensionMismatchError(
                f"A unit vector needs a 1-D array with d >= 2, got shape {coords.shape}."
            )
        norm = float(np.linalg.norm(coords))
        if abs(norm - 1.0) > UNIT_TOL:
            raise DegenerateInputError(f"Vector norm {norm!r} is not 1.")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return int(self.coords.size)

    @classmethod
    def axis(cls, d: int, i: int) -> UnitVector:
        e = np.zeros(d)
        e[i] = 1.0
        return cls(e)

    def dot(self, other: UnitVector | np.ndarray) -> float:
        arr = other.coords if isinstance(other, UnitVector) else np.asarray(other)
        check_dims(self.dim, arr.shape[-1])
        return float(self.coords @ arr)


@dataclass(frozen=True, eq=False)
class SpectralCovariance:
    """
    Sigma = basis @ diag(eigenvalues) @ basis.T, eigenvalues sorted descending
    with a strict gap between the first two.
    """

    eigenvalues: np.ndarray
    basis: np.ndarray

    def __post_init__(self) -> None:
        lam = np.array(self.eigenvalues, dtype=np.float64)
        basis = np.array(self.basis, dtype=np.float64)
        if lam.ndim != 1 or lam.size < 2:
            raise DimensionMismatchError("Need at least two eigenvalues.")
        if basis.shape != (lam.size, lam.size):
            raise DimensionMismatchError(
                f"Basis shape {basis.shape} does not match d={lam.size}."
            )
        if not lam[0] > lam[1]:
            raise SpectrumError(
                f"eigengap must be positive (lambda1={lam[0]!r}, lambda2={lam[1]!r})."
            )
        if np.any(np.diff(lam[1:]) > 0) or lam[-1] < 0:
            raise SpectrumError(
                "Eigenvalues must be non-increasing and non-negative."
            )
        deviation = orthonormality_error(basis)
        if deviation > ORTHO_TOL:
            raise SpectrumError(f"Basis is not orthonormal (max deviation {deviation:.3e}).")
        lam.setflags(write=False)
        basis.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "basis", basis)

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda2(self) -> float:
        return float(self.eigenvalues[1])

    @property
    def gap(self) -> float:
        return self.lambda1 - self.lambda2

    def leading_eigenvector(self) -> UnitVector:
        return UnitVector(self.basis[:, 0])

    def dense(self) -> np.ndarray:
        # Only used to check the spectral form against a dense oracle.
        return (self.basis * self.eigenvalues) @ self.basis.T


@dataclass(frozen=True, eq=False)
class Measurement:
    g: float
    h: float
    probe: UnitVector


@dataclass(frozen=True, eq=False)
class ImputedSample:
    weight: float
    projection: np.ndarray
    residual: np.ndarray
    imputed: np.ndarray


@dataclass(frozen=True)
class DriftParams:
    velocity: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.velocity < 1.0:
            raise OjaError(f"Drift velocity must lie in [0, 1), got {self.velocity!r}.")


def check_dims(a: int, b: int) -> None:
    if a != b:
        raise DimensionMismatchError(f"Dimension mismatch: {a} vs {b}.")


def check_orthogonal(u: UnitVector, b: UnitVector) -> None:
    check_dims(u.dim, b.dim)
    ip = u.dot(b)
    if abs(ip) > ORTHO_TOL:
        raise OrthogonalityError(f"Probe is not orthogonal to the estimate (u.b = {ip:.3e}).")


def orthonormality_error(basis: np.ndarray) -> float:
    gram = basis.T @ basis
    return float(np.max(np.abs(gram - np.eye(basis.shape[1]))))


def orthonormalize(basis: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt; column 0 keeps its direction."""
    q = np.array(basis, dtype=np.float64, copy=True)
    for j in range(q.shape[1]):
        for i in range(j):
            q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        norm = np.linalg.norm(q[:, j])
        if norm <= NORM_FLOOR:
            raise DegenerateInputError("Basis columns are linearly dependent.")
        q[:, j] /= norm
    return q


def random_orthonormal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthonormal matrix: QR of a Gaussian matrix with sign correction."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.where(np.diag(r) >= 0.0, 1.0, -1.0)
    return q * signs


def normalize(v: np.ndarray | Sequence[float]) -> UnitVector:
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm <= NORM_FLOOR:
        raise DegenerateInputError("Cannot normalize a (near-)zero vector.")
    return UnitVector(arr / norm)


def alignment(u: UnitVector, ref: UnitVector) -> tuple[float, float]:
    """Return (cos^2, sin^2) of the angle between u and ref."""
    cos2 = min(1.0, ref.dot(u) ** 2)
    return cos2, 1.0 - cos2


def make_covariance(
    d: int,
    lambda1: float,
    lambda2: float,
    tail: Sequence[float] | None = None,
    orientation: int | str | None = None,
) -> SpectralCovariance:
    """
    Build a covariance with spectrum (lambda1, lambda2, tail...).

    tail holds lambda3..lambda_d and defaults to a flat tail at lambda2.
    orientation None / "identity" keeps the standard basis (leading eigenvector
    e1); an integer seeds a uniformly random orthonormal basis.
    """
    if d < 2:
        raise DimensionMismatchError(f"Dimension must be at least 2, got {d}.")
    if lambda1 <= lambda2:
        raise SpectrumError(
            f"eigengap must be positive (lambda1={lambda1!r} <= lambda2={lambda2!r})."
        )
    if lambda2 < 0:
        raise SpectrumError(f"lambda2 must be non-negative, got {lambda2!r}.")

    if tail is None:
        tail_values = [lambda2] * (d - 2)
    else:
        tail_values = [float(x) for x in tail]
        if len(tail_values) != d - 2:
            raise SpectrumError(f"Tail must hold d-2={d - 2} eigenvalues, got {len(tail_values)}.")
        if any(x > lambda2 for x in tail_values):
            raise SpectrumError("Tail eigenvalues may not exceed lambda2.")

    eigenvalues = np.array([lambda1, lambda2, *tail_values], dtype=np.float64)

    if orientation is None or orientation == "identity":
        basis = np.eye(d)
    elif isinstance(orientation, (int, np.integer)) and not isinstance(orientation, bool):
        basis = random_orthonormal(d, np.random.default_rng(int(orientation)))
    else:
        raise OjaError(f"Orientation must be 'identity' or an integer seed, got {orientation!r}.")

    return SpectralCovariance(eigenvalues=eigenvalues, basis=basis)


def sample_data(
    cov: SpectralCovariance, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """
    Draw v ~ N(0, Sigma). With size=None returns shape (d,), otherwise
    (size, d) with one sample per row.
    """
    scale = np.sqrt(cov.eigenvalues)
    if size is None:
        return cov.basis @ (scale * rng.standard_normal(cov.dim))
    return (rng.standard_normal((size, cov.dim)) * scale) @ cov.basis.T


def sample_sphere(d: int, rng: np.random.Generator) -> UnitVector:
    if d < 2:
        raise DimensionMismatchError(f"Dimension must be at least 2, got {d}.")
    for _ in range(MAX_REDRAWS):
        x = rng.standard_normal(d)
        norm = float(np.linalg.norm(x))
        if norm > NORM_FLOOR:
            return UnitVector(x / norm)
    raise DegenerateInputError(f"No usable sphere draw after {MAX_REDRAWS} attempts.")


def project_orthogonal(x: np.ndarray, coords: np.ndarray) -> np.ndarray | None:
    """Unit direction of x with its component along coords removed; None if x is (near-)parallel."""
    x = x - (x @ coords) * coords
    norm = math.sqrt(float(x @ x))
    if norm <= NORM_FLOOR:
        return None
    return x / norm


def sample_orthogonal(u: UnitVector, rng: np.random.Generator) -> UnitVector:
    """Uniform unit vector on the sphere of the orthogonal complement of u."""
    for _ in range(MAX_REDRAWS):
        b = project_orthogonal(rng.standard_normal(u.dim), u.coords)
        if b is not None:
            return UnitVector(b)
    raise DegenerateInputError(f"No usable orthogonal probe after {MAX_REDRAWS} attempts.")


def sample_orthogonal_batch(u: UnitVector, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent orthogonal probes, one per row of an (n, d) array."""
    coords = u.coords
    out = rng.standard_normal((n, u.dim))
    out -= np.outer(out @ coords, coords)
    norms = np.linalg.norm(out, axis=1)

    bad = norms <= NORM_FLOOR
    attempts = 0
    while np.any(bad):
        attempts += 1
        if attempts > MAX_REDRAWS:
            raise DegenerateInputError(f"No usable orthogonal probe after {MAX_REDRAWS} attempts.")
        redraw = rng.standard_normal((int(bad.sum()), u.dim))
        redraw -= np.outer(redraw @ coords, coords)
        out[bad] = redraw
        norms[bad] = np.linalg.norm(redraw, axis=1)
        bad = norms <= NORM_FLOOR

    return out / norms[:, None]


def compress(u: UnitVector, b: UnitVector, v: np.ndarray) -> Measurement:
    """The two-row measurement A v with A = [u^T; b^T]."""
    check_orthogonal(u, b)
    check_dims(u.dim, len(v))
    return Measurement(g=float(u.coords @ v), h=float(b.coords @ v), probe=b)


def impute(u: UnitVector, b: UnitVector, v: np.ndarray) -> ImputedSample:
    """
    Reconstruct a full-dimensional surrogate from the two readings.

    w = u.v, p = u w, r = A^T (A v - A u w); the result p + r is the
    projection of v onto span(u, b).
    """
    check_orthogonal(u, b)
    check_dims(u.dim, len(v))
    sensing = np.vstack([u.coords, b.coords])
    weight = float(u.coords @ v)
    projection = u.coords * weight
    residual = sensing.T @ (sensing @ v - sensing @ projection)
    return ImputedSample(
        weight=weight,
        projection=projection,
        residual=residual,
        imputed=projection + residual,
    )


def drift_step(
    cov: SpectralCovariance, drift: DriftParams, rng: np.random.Generator
) -> SpectralCovariance:
    """
    Rotate the whole basis in the plane of the leading eigenvector and a random
    orthogonal direction q so that (u_bar . u_bar')^2 = 1 - V exactly.
    """
    if drift.velocity == 0.0:
        return cov

    q = sample_orthogonal(UnitVector(cov.basis[:, 0]), rng).coords
    return SpectralCovariance(
        eigenvalues=cov.eigenvalues, basis=rotate_leading(cov.basis, q, drift.velocity)
    )


def rotate_leading(basis: np.ndarray, q: np.ndarray, velocity: float) -> np.ndarray:
    """Rotate every column in the plane of basis[:, 0] and the unit vector q (q orthogonal to it)."""
    lead = basis[:, 0]
    cos_t = math.sqrt(1.0 - velocity)
    sin_t = math.sqrt(velocity)

    along_lead = lead @ basis
    along_q = q @ basis
    rotated = (
        basis
        + (cos_t - 1.0) * (np.outer(lead, along_lead) + np.outer(q, along_q))
        + sin_t * (np.outer(q, along_lead) - np.outer(lead, along_q))
    )

    deviation = orthonormality_error(rotated)
    if deviation > ORTHO_TOL:
        logger.debug("Re-orthonormalizing drifted basis (deviation %.3e).", deviation)
        rotated = orthonormalize(rotated)
    return rotated
