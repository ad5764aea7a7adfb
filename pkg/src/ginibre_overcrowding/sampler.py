"""Exact samplers for the conditioned ensemble.

Two samplers cover two different jobs:

* ``sample_radii_outer`` draws only the moduli of the outer points for a
  fixed index set J.  For a rotation-invariant projection family built on
  distinct monomials the moduli are independent, with r_k^2 following a
  Gamma(k+1, 1/N) law truncated to (R^2, oo).  Each modulus is produced by
  inverting the survival function with bisection on log Q, so the output
  is exact up to 1e-12 in t = r^2.  The angles of a full configuration are
  *not* independent of each other, so this sampler is valid for radial
  statistics only.

* ``sample_sequential`` draws a complete point configuration of the rank-m
  projection kernel (outer on |z| > R, or inner complement on |z| < R) one
  point at a time.  Step one draws from the density K(z, z)/m, which for
  these kernels is an exact mixture: a uniformly chosen basis index, the
  radial law of that index, and a uniform angle.  Later steps target the
  deflated diagonal and are realized by rejection against the step-one
  mixture with the envelope m/(m - j); a Gram-Schmidt list of unit vectors
  tracks the directions already spanned.  Acceptance ratios only involve
  the direction of the feature vector, so all magnitudes are handled in
  log space and normalized per proposal, which keeps the sampler usable at
  N in the hundreds where the raw feature entries underflow.

Randomness comes from ``RandomStream``, a counter-based Philox generator
keyed by (seed, stream_id).  Two streams with different ids are
independent for all practical purposes, and the same (seed, stream_id)
replays bit-identically on any platform, which the serialization tests
and the validation suite rely on.  Configuration-producing samplers
require a ``RandomStream`` (the recorded seed documents provenance);
``sample_radii_outer`` also accepts a bare ``numpy.random.Generator``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .gamma import log_gamma_lower, log_q_integer
from .mixture import (
    ConstraintViolation,
    EnsembleParams,
    IndexSet,
    bernoulli_weights,
    sample_conditioned_indexset,
)

__all__ = [
    "SamplingError",
    "RandomStream",
    "PointConfiguration",
    "radial_survival",
    "sample_radii_outer",
    "sample_sequential",
    "sample_conditioned_ensemble",
]

_LOG_PI = math.log(math.pi)
_TWO_PI = 2.0 * math.pi

# Proposal budget per point before the sequential sampler gives up.
_MAX_PROPOSALS = 1_000_000
# Bisection width, in t = r^2, for survival-function inversion.
_BISECT_TOL = 1e-12
# Below this acceptance rate the inner radial draw switches from rejection
# against the untruncated Gamma(k+1) to direct inversion of the lower tail.
_INNER_REJECTION_LOG_FLOOR = math.log(0.02)
# A freshly accepted direction should never be this close to the span of
# the previous ones; if it is, the Gram-Schmidt basis has degenerated.
_MIN_DIRECTION_NORM = 1e-10
# Chunk length for the vectorized log Q evaluations inside bisection.
_CHUNK = 1 << 14

_REGIONS = ("outer", "inner", "full")
_SAMPLERS = ("radial", "sequential")
_BASES = ("outer_J", "inner_complement_J")
_SCHEMA = "point-configuration/1"
_UINT64_SPAN = 1 << 64


class SamplingError(RuntimeError):
    """A rejection loop exhausted its proposal budget or lost its basis."""


@dataclass(frozen=True)
class RandomStream:
    """Replayable random source keyed by (seed, stream_id).

    Backed by the Philox counter-based bit generator, so distinct
    stream_ids give independent streams from one seed.  Parallel
    Monte-Carlo runs should give each worker ``substream(i)`` instead of
    sharing one generator.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        for label, value in (("seed", self.seed), ("stream_id", self.stream_id)):
            if value != int(value) or not (0 <= value < _UINT64_SPAN):
                raise ValueError(f"{label} must be an integer in [0, 2^64), got {value!r}")

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of the stream."""
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))

    def substream(self, offset: int) -> "RandomStream":
        """The stream ``offset`` slots further along the stream_id axis."""
        return RandomStream(seed=self.seed, stream_id=self.stream_id + offset)


def _as_generator(rng: "RandomStream | np.random.Generator") -> np.random.Generator:
    if isinstance(rng, RandomStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(rng).__name__}")


def _require_stream(rng: RandomStream) -> RandomStream:
    if not isinstance(rng, RandomStream):
        raise TypeError(
            "configuration samplers record their seed and therefore require a "
            f"RandomStream, got {type(rng).__name__}"
        )
    return rng


@dataclass(frozen=True)
class PointConfiguration:
    """A sampled point set together with everything needed to replay it.

    The region tag states which support the points live on: ``outer``
    (all |z| > R), ``inner`` (all |z| < R) or ``full`` (exactly N points
    of which exactly N_c lie outside radius R).  Configurations from the
    radial sampler carry moduli as points on the positive real axis.
    """

    points: tuple[complex, ...]
    params: EnsembleParams
    index_set: IndexSet
    region: str
    seed: int
    sampler: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(complex(z) for z in self.points))
        if self.region not in _REGIONS:
            raise ValueError(f"region must be one of {_REGIONS}, got {self.region!r}")
        if self.sampler not in _SAMPLERS:
            raise ValueError(f"sampler must be one of {_SAMPLERS}, got {self.sampler!r}")
        if self.index_set.N != self.params.N:
            raise ConstraintViolation(
                f"index set is over {{0..{self.index_set.N - 1}}} but N = {self.params.N}"
            )
        R = self.params.R
        if self.region == "outer" and any(abs(z) <= R for z in self.points):
            raise ConstraintViolation("outer configuration contains a point with |z| <= R")
        if self.region == "inner" and any(abs(z) >= R for z in self.points):
            raise ConstraintViolation("inner configuration contains a point with |z| >= R")
        if self.region == "full":
            if len(self.points) != self.params.N:
                raise ConstraintViolation(
                    f"full configuration needs N = {self.params.N} points, got {len(self.points)}"
                )
            if self.n_outside != self.params.N_c:
                raise ConstraintViolation(
                    f"full configuration needs N_c = {self.params.N_c} points outside "
                    f"radius R, got {self.n_outside}"
                )

    @property
    def n_outside(self) -> int:
        return sum(1 for z in self.points if abs(z) > self.params.R)

    def point_regions(self) -> tuple[str, ...]:
        """Per-point region tags; full configurations split by |z| vs R."""
        if self.region != "full":
            return tuple(self.region for _ in self.points)
        R = self.params.R
        return tuple("outer" if abs(z) > R else "inner" for z in self.points)

    def _header(self) -> dict:
        return {
            "schema": _SCHEMA,
            "params": {"N": self.params.N, "c": self.params.c, "R": self.params.R},
            "index_set": list(self.index_set.members),
            "region": self.region,
            "seed": self.seed,
            "sampler": self.sampler,
        }

    def to_json(self) -> str:
        doc = self._header()
        doc["points"] = [[z.real, z.imag] for z in self.points]
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "PointConfiguration":
        doc = json.loads(text)
        if doc.get("schema") != _SCHEMA:
            raise ValueError(f"unrecognized schema {doc.get('schema')!r}")
        params = EnsembleParams(N=doc["params"]["N"], c=doc["params"]["c"], R=doc["params"]["R"])
        return cls(
            points=tuple(complex(re, im) for re, im in doc["points"]),
            params=params,
            index_set=IndexSet(members=tuple(doc["index_set"]), N=params.N),
            region=doc["region"],
            seed=doc["seed"],
            sampler=doc["sampler"],
        )

    def write_csv(self, path: "str | Path") -> Path:
        """Write ``re,im,region`` rows plus a JSON metadata sidecar.

        The sidecar lands at ``<path>.meta.json`` and holds everything but
        the points, so the pair round-trips losslessly via ``read_csv``.
        """
        path = Path(path)
        rows = ["re,im,region"]
        rows.extend(
            f"{z.real!r},{z.imag!r},{tag}" for z, tag in zip(self.points, self.point_regions())
        )
        path.write_text("\n".join(rows) + "\n")
        Path(str(path) + ".meta.json").write_text(json.dumps(self._header()) + "\n")
        return path

    @classmethod
    def read_csv(cls, path: "str | Path") -> "PointConfiguration":
        path = Path(path)
        header = json.loads(Path(str(path) + ".meta.json").read_text())
        if header.get("schema") != _SCHEMA:
            raise ValueError(f"unrecognized schema {header.get('schema')!r}")
        points = []
        lines = path.read_text().splitlines()
        if not lines or lines[0] != "re,im,region":
            raise ValueError(f"{path} does not start with the re,im,region header")
        for line in lines[1:]:
            re_s, im_s, _tag = line.split(",")
            points.append(complex(float(re_s), float(im_s)))
        params = EnsembleParams(
            N=header["params"]["N"], c=header["params"]["c"], R=header["params"]["R"]
        )
        return cls(
            points=tuple(points),
            params=params,
            index_set=IndexSet(members=tuple(header["index_set"]), N=params.N),
            region=header["region"],
            seed=header["seed"],
            sampler=header["sampler"],
        )


@lru_cache(maxsize=256)
def _log_factorials_vec(n: int) -> np.ndarray:
    out = np.array([math.lgamma(i + 1.0) for i in range(n)])
    out.flags.writeable = False
    return out


def _log_q_int_arr(n: int, x: np.ndarray) -> np.ndarray:
    """log Q(n, x_i) for integer n >= 1, vectorized over x.

    Mode-anchored logsumexp over the Poisson block; mirrors the scalar
    ``gamma.log_q_integer`` route and is tested against it.
    """
    lg = _log_factorials_vec(n)
    ii = np.arange(n, dtype=float)
    out = np.empty_like(x)
    for start in range(0, x.size, _CHUNK):
        xs = x[start : start + _CHUNK]
        log_terms = ii[:, None] * np.log(xs)[None, :] - lg[:, None]
        peak = log_terms.max(axis=0)
        out[start : start + _CHUNK] = (
            peak + np.log(np.exp(log_terms - peak).sum(axis=0)) - xs
        )
    return out


def _check_index_set(params: EnsembleParams, J: IndexSet) -> None:
    if J.N != params.N:
        raise ConstraintViolation(f"index set is over {{0..{J.N - 1}}} but N = {params.N}")


def radial_survival(params: EnsembleParams, k: int, t: float) -> float:
    """P(r_k^2 > t) for the outer modulus of index k: Q(k+1, Nt)/Q(k+1, NR^2).

    Equals 1 for every t at or below R^2 because the law is supported on
    (R^2, oo).  This is the analytic reference the sampling tests invert.
    """
    if k != int(k) or not (0 <= k < params.N):
        raise ConstraintViolation(f"index must be an integer in [0, {params.N}), got {k!r}")
    if not (t >= 0.0 and math.isfinite(t)):
        raise ValueError(f"t must be finite and nonnegative, got {t!r}")
    r_sq = params.R * params.R
    if t <= r_sq:
        return 1.0
    n = int(k) + 1
    return math.exp(log_q_integer(n, params.N * t) - log_q_integer(n, params.z))


def _invert_outer_survival(
    n: int, N: int, r_sq: float, u: np.ndarray
) -> np.ndarray:
    """Quantiles t with Q(n, Nt)/Q(n, N r_sq) = u, elementwise, by bisection."""
    u = np.where(u == 0.0, 2.0 ** -53, u)
    anchor = _log_q_int_arr(n, np.array([N * r_sq]))[0]
    target = np.log(u) + anchor

    lo = np.full(u.shape, r_sq)
    hi = np.full(u.shape, r_sq + (n + 12.0 * math.sqrt(n) + 50.0) / N)
    for _ in range(200):
        grow = _log_q_int_arr(n, N * hi) > target
        if not grow.any():
            break
        hi[grow] = r_sq + (hi[grow] - r_sq) * 2.0
    else:
        raise SamplingError("failed to bracket an outer radial quantile")

    for _ in range(200):
        if float(np.max(hi - lo)) <= _BISECT_TOL:
            break
        mid = 0.5 * (lo + hi)
        above = _log_q_int_arr(n, N * mid) >= target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def sample_radii_outer(
    params: EnsembleParams,
    J: IndexSet,
    rng: "RandomStream | np.random.Generator",
    size: "int | None" = None,
):
    """Independent outer moduli {r_k} for k in J, by survival inversion.

    With ``size=None`` returns a plain list of |J| radii in member order,
    one draw per index.  With an integer ``size`` returns an array of
    shape (size, |J|) of independent repetitions, which is how the
    Monte-Carlo tests batch their draws.  Only radial statistics of a
    configuration are faithfully reproduced; see the module docstring.
    """
    _check_index_set(params, J)
    gen = _as_generator(rng)
    if size is not None and (size != int(size) or size < 1):
        raise ValueError(f"size must be a positive integer or None, got {size!r}")
    draws = 1 if size is None else int(size)
    r_sq = params.R * params.R
    out = np.empty((draws, J.size))
    for col, k in enumerate(J.members):
        t = _invert_outer_survival(k + 1, params.N, r_sq, gen.random(draws))
        out[:, col] = np.sqrt(t)
    if size is None:
        return [float(v) for v in out[0]]
    return out


@lru_cache(maxsize=4096)
def _truncated_poisson_cumulative(k: int, z0: float) -> np.ndarray:
    """Cumulative weights of i ~ Poisson(z0) conditioned on i <= k."""
    logs = np.arange(k + 1) * math.log(z0) - _log_factorials_vec(k + 1)
    w = np.exp(logs - logs.max())
    cum = np.cumsum(w)
    cum /= cum[-1]
    cum[-1] = 1.0
    cum.flags.writeable = False
    return cum


def _outer_t_block(params: EnsembleParams, ks: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Exact draws of t = r^2 for outer indices ks (may repeat), vectorized.

    Uses the arrival-time decomposition of the truncated Gamma law: with
    u = Nt ~ Gamma(k+1) conditioned on u > z0, the number i of Poisson
    arrivals before z0 is a truncated Poisson(z0) and the overshoot past
    z0 is an independent Gamma(k+1-i).  No tolerance enters anywhere.
    """
    z0 = params.z
    t = np.empty(ks.size)
    for k in np.unique(ks):
        sel = np.nonzero(ks == k)[0]
        cum = _truncated_poisson_cumulative(int(k), z0)
        i = np.searchsorted(cum, gen.random(sel.size), side="right")
        w = gen.standard_gamma(k + 1.0 - i)
        t[sel] = (z0 + w) / params.N
    return t


def _inner_t_block(params: EnsembleParams, ks: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Draws of t = r^2 on (0, R^2) for inner-complement indices ks.

    Indices whose lower tail carries at least a couple percent of the
    Gamma(k+1) mass use plain rejection against the untruncated law;
    starved indices fall back to inverting the lower tail by bisection.
    """
    weights = bernoulli_weights(params)
    z0 = params.z
    r_sq = params.R * params.R
    N = params.N
    t = np.empty(ks.size)
    for k in np.unique(ks):
        sel = np.nonzero(ks == k)[0]
        if weights.log_one_minus_a[k] >= _INNER_REJECTION_LOG_FLOOR:
            draws = gen.standard_gamma(k + 1.0, size=sel.size)
            bad = draws > z0
            rounds = 0
            while bad.any():
                rounds += 1
                if rounds > 10_000:
                    raise SamplingError(
                        f"inner radial rejection stalled at index {int(k)} (N={N})"
                    )
                draws[bad] = gen.standard_gamma(k + 1.0, size=int(bad.sum()))
                bad = draws > z0
            t[sel] = draws / N
        else:
            lp0 = log_gamma_lower(k + 1.0, z0)
            vals = np.empty(sel.size)
            for pos, u in enumerate(gen.random(sel.size)):
                if u == 0.0:
                    u = 2.0 ** -53
                tgt = math.log(u) + lp0
                lo, hi = 0.0, r_sq
                for _ in range(200):
                    if hi - lo <= _BISECT_TOL:
                        break
                    mid = 0.5 * (lo + hi)
                    if log_gamma_lower(k + 1.0, N * mid) >= tgt:
                        hi = mid
                    else:
                        lo = mid
                vals[pos] = 0.5 * (lo + hi)
            t[sel] = vals
    return t


def _basis_arrays(params: EnsembleParams, J: IndexSet, basis: str):
    """(indices, unregularized log norms, radial block sampler) for a basis."""
    weights = bernoulli_weights(params)
    if basis == "outer_J":
        ks = np.array(J.members, dtype=np.int64)
        log_norms = weights.log_a[ks] + _log_factorials_vec(params.N)[ks]
        return ks, log_norms, _outer_t_block
    members = set(J.members)
    ks = np.array([k for k in range(params.N) if k not in members], dtype=np.int64)
    if ks.size:
        log_norms = weights.log_one_minus_a[ks] + _log_factorials_vec(params.N)[ks]
    else:
        log_norms = np.empty(0)
    return ks, log_norms, _inner_t_block


def _unit_feature_rows(
    params: EnsembleParams,
    ks: np.ndarray,
    log_norms: np.ndarray,
    t: np.ndarray,
    theta: np.ndarray,
) -> np.ndarray:
    """Unit vectors proportional to (phi_k(z))_k at z = sqrt(t) e^{i theta}.

    Acceptance ratios and Gram-Schmidt updates only see directions, so the
    overall magnitude is shifted out per row before exponentiating.
    """
    half = 0.5 * ((ks + 1.0) * math.log(params.N) - _LOG_PI - log_norms)
    log_mag = 0.5 * np.multiply.outer(np.log(t), ks.astype(float)) - (0.5 * params.N) * t[:, None]
    log_mag += half[None, :]
    log_mag -= log_mag.max(axis=1, keepdims=True)
    phase = np.multiply.outer(theta, ks.astype(float))
    psi = np.exp(log_mag) * (np.cos(phase) + 1j * np.sin(phase))
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    return psi


def _sample_projection(
    params: EnsembleParams, J: IndexSet, basis: str, gen: np.random.Generator
) -> list[complex]:
    """Sequential draw of all m points of the rank-m projection kernel."""
    ks, log_norms, radial_block = _basis_arrays(params, J, basis)
    m = int(ks.size)
    if m == 0:
        return []
    span = np.zeros((m, m), dtype=complex)
    points: list[complex] = []
    for j in range(m):
        # Expected proposals per accepted point is m/(m-j); oversize the
        # block a little so one batch usually suffices.
        block = int(min(128, max(8, math.ceil(2.0 * m / (m - j)))))
        used = 0
        while True:
            if used >= _MAX_PROPOSALS:
                raise SamplingError(
                    f"no acceptance within {used} proposals at point {j + 1} of {m} "
                    f"(basis={basis}, N={params.N}, c={params.c}, R={params.R})"
                )
            picks = gen.integers(0, m, size=block)
            t = radial_block(params, ks[picks], gen)
            theta = _TWO_PI * gen.random(block)
            psi = _unit_feature_rows(params, ks, log_norms, t, theta)
            if j:
                coeff = psi @ span[:j].conj().T
                accept = 1.0 - (np.abs(coeff) ** 2).sum(axis=1)
            else:
                coeff = None
                accept = np.ones(block)
            hits = gen.random(block) < np.clip(accept, 0.0, 1.0)
            used += block
            if not hits.any():
                continue
            b = int(np.argmax(hits))
            v = psi[b].copy()
            if j:
                v -= coeff[b] @ span[:j]
                v -= (span[:j].conj() @ v) @ span[:j]
            norm = float(np.linalg.norm(v))
            if norm < _MIN_DIRECTION_NORM:
                raise SamplingError(
                    f"accepted direction nearly collinear with the span at point {j + 1} of {m}"
                )
            span[j] = v / norm
            r = math.sqrt(t[b])
            points.append(complex(r * math.cos(theta[b]), r * math.sin(theta[b])))
            break
    return points


def sample_sequential(
    params: EnsembleParams, J: IndexSet, basis: str, rng: RandomStream
) -> PointConfiguration:
    """Exact configuration of the projection kernel selected by ``basis``.

    ``basis`` is ``"outer_J"`` (rank |J|, support |z| > R) or
    ``"inner_complement_J"`` (rank N - |J|, support |z| < R).  Identical
    (params, J, basis, stream) replay bit-identically.
    """
    if basis not in _BASES:
        raise ValueError(f"basis must be one of {_BASES}, got {basis!r}")
    _check_index_set(params, J)
    stream = _require_stream(rng)
    points = _sample_projection(params, J, basis, stream.generator())
    return PointConfiguration(
        points=tuple(points),
        params=params,
        index_set=J,
        region="outer" if basis == "outer_J" else "inner",
        seed=stream.seed,
        sampler="sequential",
    )


def sample_conditioned_ensemble(params: EnsembleParams, rng: RandomStream) -> PointConfiguration:
    """One full draw of the ensemble conditioned on the overcrowding count.

    Draws the index set from the conditioned mixture, then the outer and
    inner point sets from their projection kernels; given J the two are
    independent, so they simply consume the same stream in a fixed order.
    """
    stream = _require_stream(rng)
    gen = stream.generator()
    J = sample_conditioned_indexset(params, params.N_c, gen)
    outer = _sample_projection(params, J, "outer_J", gen)
    inner = _sample_projection(params, J, "inner_complement_J", gen)
    return PointConfiguration(
        points=tuple(outer) + tuple(inner),
        params=params,
        index_set=J,
        region="full",
        seed=stream.seed,
        sampler="sequential",
    )
