"""Tests for the radial and sequential samplers.

Statistical assertions run on fixed RandomStream seeds so every run sees
the same draws; thresholds were chosen with a margin of at least 3x over
the observed values at those seeds.  Analytic references come from three
independent routes: quadrature of the radial density, mpmath overlap
matrices for the two-point determinant formula, and the survival function
built on the package's own incomplete-gamma routines (itself tested
against quadrature here and in test_gamma).
"""

import json
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from ginibre_overcrowding.gamma import log_gamma_lower, log_q_integer
from ginibre_overcrowding.mixture import (
    ConstraintViolation,
    EnsembleParams,
    IndexSet,
    sample_conditioned_indexset,
)
from ginibre_overcrowding import sampler
from ginibre_overcrowding.sampler import (
    PointConfiguration,
    RandomStream,
    SamplingError,
    radial_survival,
    sample_conditioned_ensemble,
    sample_radii_outer,
    sample_sequential,
)

mp.mp.dps = 30


def top_block(params: EnsembleParams) -> IndexSet:
    return IndexSet(members=tuple(range(params.N - params.N_c, params.N)), N=params.N)


def quad_survival(params: EnsembleParams, k: int, t: float) -> float:
    """Quadrature oracle for P(r_k^2 > t), independent of the gamma module."""
    N = params.N
    shift = k * math.log(k / N) - k if k else 0.0
    upper = (k + 1) / N + 40.0 * math.sqrt(k + 1) / N + 5.0

    def f(s: float) -> float:
        return math.exp(k * math.log(s) - N * s - shift)

    num, _ = integrate.quad(f, t, upper, limit=400)
    den, _ = integrate.quad(f, params.R**2, upper, limit=400)
    return num / den


def overlap_matrix(params, ks, t_lo, t_hi, th_lo, th_hi) -> np.ndarray:
    """M_{kl} = integral over the annular sector of phi_k conj(phi_l).

    Closed form: a diagonal angular factor and an incomplete-gamma radial
    factor of (possibly half-integer) shape (k+l)/2 + 1, all in mpmath.
    """
    N, z0 = params.N, params.z
    norm = [mp.sqrt(mp.mpf(N) ** (k + 1) / (mp.pi * mp.gammainc(k + 1, a=z0))) for k in ks]
    M = np.empty((len(ks), len(ks)), dtype=complex)
    for i, k in enumerate(ks):
        for j, l in enumerate(ks):
            d = k - l
            if d == 0:
                ang = mp.mpf(th_hi - th_lo)
            else:
                ang = (mp.exp(1j * d * th_hi) - mp.exp(1j * d * th_lo)) / (1j * d)
            shape = mp.mpf(k + l) / 2 + 1
            rad = mp.gammainc(shape, a=N * t_lo, b=N * t_hi) / (2 * mp.mpf(N) ** shape)
            M[i, j] = complex(norm[i] * norm[j] * ang * rad)
    return M


# ---------------------------------------------------------------------------
# RandomStream


def test_random_stream_replays_and_splits():
    a = RandomStream(seed=123, stream_id=4)
    assert np.array_equal(a.generator().random(8), a.generator().random(8))
    b = a.substream(1)
    assert b == RandomStream(seed=123, stream_id=5)
    assert not np.array_equal(a.generator().random(8), b.generator().random(8))


@pytest.mark.parametrize("bad", [{"seed": -1}, {"seed": 1 << 64}, {"seed": 0.5}, {"seed": 3, "stream_id": -2}])
def test_random_stream_rejects_bad_keys(bad):
    with pytest.raises(ValueError):
        RandomStream(**bad)


# ---------------------------------------------------------------------------
# Radial law: survival function and bisection sampler


def test_truncated_poisson_table_matches_scipy():
    cum = sampler._truncated_poisson_cumulative(12, 7.3)
    pmf = stats.poisson.pmf(np.arange(13), 7.3)
    ref = np.cumsum(pmf / pmf.sum())
    assert np.allclose(cum, ref, rtol=0, atol=1e-12)
    assert cum[-1] == 1.0
    assert np.allclose(sampler._truncated_poisson_cumulative(0, 2.0), [1.0])


def test_vectorized_log_q_matches_scalar_route():
    for n in (1, 7, 30, 200):
        xs = np.geomspace(0.3, 3.0 * n + 50.0, 40)
        vec = sampler._log_q_int_arr(n, xs)
        for x, got in zip(xs, vec):
            want = log_q_integer(n, float(x))
            assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


def test_radial_survival_matches_quadrature():
    params = EnsembleParams(N=25, c=0.6, R=0.7)
    for k in (15, 24):
        for t in (0.49, 0.55, 0.7, 0.9, 1.2):
            want = quad_survival(params, k, t)
            got = radial_survival(params, k, t)
            assert got == pytest.approx(want, rel=1e-9)


def test_radial_survival_is_one_at_the_wall():
    params = EnsembleParams(N=25, c=0.6, R=0.7)
    assert radial_survival(params, 20, params.R**2) == 1.0
    assert radial_survival(params, 20, 0.1) == 1.0
    assert radial_survival(params, 20, 0.0) == 1.0


def test_radial_survival_validation():
    params = EnsembleParams(N=25, c=0.6, R=0.7)
    with pytest.raises(ConstraintViolation):
        radial_survival(params, 25, 0.6)
    with pytest.raises(ConstraintViolation):
        radial_survival(params, -1, 0.6)
    with pytest.raises(ValueError):
        radial_survival(params, 3, -0.2)
    with pytest.raises(ValueError):
        radial_survival(params, 3, math.nan)


def test_sample_radii_outer_modes_and_determinism():
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    J = top_block(params)
    rs = RandomStream(seed=5150)
    single = sample_radii_outer(params, J, rs)
    assert isinstance(single, list) and len(single) == J.size
    assert all(r > params.R for r in single)
    assert single == sample_radii_outer(params, J, rs)

    batch = sample_radii_outer(params, J, rs, size=64)
    assert batch.shape == (64, J.size)
    assert (batch > params.R).all()
    assert np.array_equal(batch, sample_radii_outer(params, J, rs, size=64))


def test_sample_radii_outer_validation():
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    J = top_block(params)
    with pytest.raises(ValueError):
        sample_radii_outer(params, J, RandomStream(seed=1), size=0)
    with pytest.raises(TypeError):
        sample_radii_outer(params, J, rng=42)
    with pytest.raises(ConstraintViolation):
        sample_radii_outer(params, IndexSet(members=(1, 2), N=13), RandomStream(seed=1))


def test_sample_radii_outer_empirical_cdf():
    # Spec-level check: KS distance of r^2 against the analytic survival
    # stays under 0.02 on 1e4 draws.
    params = EnsembleParams(N=30, c=0.5, R=0.8)
    J = IndexSet(members=(16, 29), N=30)
    batch = sample_radii_outer(params, J, RandomStream(seed=31415), size=10_000)
    for col, k in enumerate(J.members):
        t = batch[:, col] ** 2

        def cdf(v, k=k):
            return 1.0 - np.array([radial_survival(params, k, x) for x in np.atleast_1d(v)])

        res = stats.kstest(t, cdf)
        assert res.statistic < 0.02


def test_sample_radii_outer_mean_at_large_k():
    # k = N-1 with R small: truncation is negligible (the lower tail mass
    # below N R^2 is ~1e-78), so E[r^2] is the plain Gamma(k+1, 1/N) mean.
    params = EnsembleParams(N=100, c=0.99, R=0.2)
    J = IndexSet(members=(99,), N=100)
    batch = sample_radii_outer(params, J, RandomStream(seed=2718), size=100_000)
    mean = float(np.mean(batch[:, 0] ** 2))
    want = 100.0 / params.N
    se = math.sqrt(100.0) / params.N / math.sqrt(batch.shape[0])
    assert abs(mean - want) < 4.0 * se


def test_inner_radial_starved_tail_uses_inversion():
    # Indices whose lower-tail mass is under the rejection floor switch to
    # bisection; check the resulting law against the analytic lower CDF.
    params = EnsembleParams(N=40, c=0.95, R=0.65)
    k = 39
    assert math.exp(log_gamma_lower(k + 1.0, params.z)) < 0.02
    gen = RandomStream(seed=909).generator()
    t = sampler._inner_t_block(params, np.full(500, k), gen)
    assert (t < params.R**2).all()
    lp0 = log_gamma_lower(k + 1.0, params.z)

    def cdf(v):
        return np.array(
            [math.exp(log_gamma_lower(k + 1.0, params.N * x) - lp0) for x in np.atleast_1d(v)]
        )

    res = stats.kstest(t, cdf)
    assert res.pvalue > 1e-3


# ---------------------------------------------------------------------------
# Sequential sampler


def test_sequential_counts_support_and_determinism():
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    J = top_block(params)
    rs = RandomStream(seed=20240817)
    outer = sample_sequential(params, J, "outer_J", rs)
    assert len(outer.points) == J.size
    assert all(abs(z) > params.R for z in outer.points)
    assert outer.points == sample_sequential(params, J, "outer_J", rs).points
    assert (outer.region, outer.sampler, outer.seed) == ("outer", "sequential", 20240817)

    inner = sample_sequential(params, J, "inner_complement_J", rs)
    assert len(inner.points) == params.N - J.size
    assert all(abs(z) < params.R for z in inner.points)
    assert inner.region == "inner"


def test_sequential_empty_ranks():
    params = EnsembleParams(N=6, c=0.9, R=0.8)
    full = IndexSet(members=tuple(range(6)), N=6)
    empty = IndexSet(members=(), N=6)
    assert sample_sequential(params, full, "inner_complement_J", RandomStream(seed=1)).points == ()
    assert sample_sequential(params, empty, "outer_J", RandomStream(seed=1)).points == ()


def test_sequential_rank_one_matches_radial_law_and_uniform_angle():
    params = EnsembleParams(N=10, c=0.5, R=0.8)
    J = IndexSet(members=(9,), N=10)
    moduli = np.empty(4000)
    angles = np.empty(4000)
    for i in range(4000):
        cfg = sample_sequential(params, J, "outer_J", RandomStream(seed=424242, stream_id=i))
        (z,) = cfg.points
        moduli[i] = abs(z)
        angles[i] = math.atan2(z.imag, z.real)
    direct = sample_radii_outer(params, J, RandomStream(seed=515151), size=4000)[:, 0]
    ks = stats.ks_2samp(moduli, direct)
    assert ks.pvalue > 1e-3
    counts, _ = np.histogram(angles, bins=12, range=(-math.pi, math.pi))
    chi = stats.chisquare(counts)
    assert chi.pvalue > 1e-3


def test_sequential_pooled_moduli_match_radial_sampler():
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    J = top_block(params)
    n_cfg = 2500
    pooled = []
    for i in range(n_cfg):
        cfg = sample_sequential(params, J, "outer_J", RandomStream(seed=606060, stream_id=i))
        pooled.extend(abs(z) for z in cfg.points)
    direct = sample_radii_outer(params, J, RandomStream(seed=707070), size=n_cfg)
    ks = stats.ks_2samp(np.array(pooled), direct.ravel())
    assert ks.statistic < 0.02


def test_sequential_intensity_chisquare():
    # Binned one-point intensity against the kernel diagonal, whose bin
    # masses are survival differences times the sector fraction.
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    J = top_block(params)
    n_cfg = 3000
    r_edges = [0.6, 0.72, 0.78, 0.84, 0.92, 1.02, 1.2]
    n_sect = 4
    obs = np.zeros((len(r_edges), n_sect))
    for i in range(n_cfg):
        cfg = sample_sequential(params, J, "outer_J", RandomStream(seed=808080, stream_id=i))
        for z in cfg.points:
            r, th = abs(z), math.atan2(z.imag, z.real)
            row = np.searchsorted(r_edges, r, side="right") - 1
            col = min(int((th + math.pi) / (2.0 * math.pi) * n_sect), n_sect - 1)
            obs[row, col] += 1
    surv = [sum(radial_survival(params, k, e * e) for k in J.members) for e in r_edges]
    surv.append(0.0)
    expected = np.array([surv[i] - surv[i + 1] for i in range(len(r_edges))])
    exp_grid = np.outer(expected, np.full(n_sect, 1.0 / n_sect)) * n_cfg
    assert exp_grid.min() > 5.0
    res = stats.chisquare(obs.ravel(), exp_grid.ravel())
    assert res.pvalue > 1e-3


def test_sequential_two_point_moments_match_determinant_formula():
    # E[N_A N_B] over disjoint sectors and the second factorial moment of
    # one sector, both against exact overlap-matrix values.
    params = EnsembleParams(N=8, c=0.6, R=0.7)
    ks = (4, 5, 6, 7)
    J = IndexSet(members=ks, N=8)
    t_lo, t_hi = 0.72**2, 0.95**2
    MA = overlap_matrix(params, ks, t_lo, t_hi, -math.pi / 4, math.pi / 4)
    MB = overlap_matrix(params, ks, t_lo, t_hi, 3 * math.pi / 4, 5 * math.pi / 4)
    mu_a = MA.trace().real
    # route check: the diagonal of M must reproduce the survival masses
    direct = sum(radial_survival(params, k, t_lo) - radial_survival(params, k, t_hi) for k in ks)
    assert mu_a == pytest.approx(direct / 4.0, rel=1e-10)

    want_cross = mu_a * MB.trace().real - (MA * MB.conj()).sum().real
    want_pairs = mu_a * mu_a - float((np.abs(MA) ** 2).sum())
    n_cfg = 12_000
    cross = np.empty(n_cfg)
    pairs = np.empty(n_cfg)
    for i in range(n_cfg):
        cfg = sample_sequential(params, J, "outer_J", RandomStream(seed=99, stream_id=i))
        n_a = n_b = 0
        for z in cfg.points:
            t = abs(z) ** 2
            if t_lo < t < t_hi:
                th = math.atan2(z.imag, z.real)
                if abs(th) < math.pi / 4:
                    n_a += 1
                elif abs(th) > 3 * math.pi / 4:
                    n_b += 1
        cross[i] = n_a * n_b
        pairs[i] = n_a * (n_a - 1)
    for emp, want in ((cross, want_cross), (pairs, want_pairs)):
        se = emp.std(ddof=1) / math.sqrt(n_cfg)
        assert abs(emp.mean() - want) < 4.0 * se


def test_outer_and_inner_independent_given_index_set():
    params = EnsembleParams(N=16, c=0.5, R=0.75)
    J = top_block(params)
    n_cfg = 2000
    inner_counts = np.empty(n_cfg)
    outer_means = np.empty(n_cfg)
    for i in range(n_cfg):
        rs = RandomStream(seed=1234, stream_id=i)
        outer = sample_sequential(params, J, "outer_J", rs)
        inner = sample_sequential(params, J, "inner_complement_J", rs.substream(100_000))
        inner_counts[i] = sum(1 for z in inner.points if abs(z) < 0.3)
        outer_means[i] = np.mean([abs(z) for z in outer.points])
    corr = stats.pearsonr(inner_counts, outer_means).statistic
    assert abs(corr) * math.sqrt(n_cfg) < 4.0


def test_rejection_cap_raises_with_diagnostics(monkeypatch):
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    monkeypatch.setattr(sampler, "_MAX_PROPOSALS", 0)
    with pytest.raises(SamplingError, match="no acceptance within"):
        sample_sequential(params, top_block(params), "outer_J", RandomStream(seed=3))


def test_sequential_validation():
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    J = top_block(params)
    with pytest.raises(ValueError, match="basis"):
        sample_sequential(params, J, "outer", RandomStream(seed=3))
    with pytest.raises(TypeError, match="RandomStream"):
        sample_sequential(params, J, "outer_J", np.random.default_rng(0))
    with pytest.raises(ConstraintViolation):
        sample_sequential(params, IndexSet(members=(0,), N=11), "outer_J", RandomStream(seed=3))


# ---------------------------------------------------------------------------
# Full conditioned ensemble


def test_full_configuration_invariants():
    params = EnsembleParams(N=20, c=0.6, R=0.7)
    for i in range(25):
        cfg = sample_conditioned_ensemble(params, RandomStream(seed=42, stream_id=i))
        assert len(cfg.points) == params.N
        assert cfg.n_outside == params.N_c
        assert cfg.index_set.size == params.N_c
        assert cfg.region == "full"
    again = sample_conditioned_ensemble(params, RandomStream(seed=42, stream_id=0))
    first = sample_conditioned_ensemble(params, RandomStream(seed=42, stream_id=0))
    assert again.points == first.points and again.index_set == first.index_set


def test_full_configuration_three_region_profile():
    # Depleted annulus below R, crowding just past R, ordinary bulk beyond:
    # measured per-area densities at this seed are roughly 11, 0.12, 49, 10.
    params = EnsembleParams(N=40, c=0.9, R=0.7)
    radii = []
    n_cfg = 300
    for i in range(n_cfg):
        cfg = sample_conditioned_ensemble(params, RandomStream(seed=321, stream_id=i))
        radii.extend(abs(z) for z in cfg.points)
    radii = np.array(radii)

    def density(a, b):
        return ((radii > a) & (radii < b)).sum() / n_cfg / (math.pi * (b * b - a * a))

    bulk_inner = density(0.05, 0.28)
    depleted = density(0.45, 0.63)
    spike = density(0.70, 0.78)
    far = density(0.88, 0.98)
    assert depleted < 0.1 * bulk_inner
    assert spike > 2.0 * far


def test_full_configuration_count_beyond_matches_circle_law():
    # Outside R + 0.2 the conditioned ensemble should count points like an
    # unconditioned Ginibre of the same size.
    params = EnsembleParams(N=100, c=0.8, R=0.5)
    s = 0.7
    surv = np.array([radial_survival(params, k, s * s) for k in range(params.N)])
    gen = RandomStream(seed=5).generator()
    ref = float(
        np.mean(
            [
                surv[list(sample_conditioned_indexset(params, params.N_c, gen).members)].sum()
                for _ in range(4000)
            ]
        )
    )
    ginibre = sum(math.exp(log_q_integer(k + 1, params.N * s * s)) for k in range(params.N))
    circle_law = (1.0 - s * s) * params.N
    assert abs(ref - ginibre) < 0.2
    assert abs(ginibre - circle_law) < 0.5

    n_cfg = 120
    counts = np.array(
        [
            sum(
                1
                for z in sample_conditioned_ensemble(params, RandomStream(seed=77, stream_id=i)).points
                if abs(z) > s
            )
            for i in range(n_cfg)
        ],
        dtype=float,
    )
    se = counts.std(ddof=1) / math.sqrt(n_cfg)
    assert abs(counts.mean() - ref) < 4.0 * se


# ---------------------------------------------------------------------------
# PointConfiguration container and serialization


def test_point_configuration_validates_region_support():
    params = EnsembleParams(N=6, c=0.9, R=0.8)
    J = top_block(params)
    with pytest.raises(ConstraintViolation):
        PointConfiguration((0.1 + 0.0j,), params, J, "outer", 0, "sequential")
    with pytest.raises(ConstraintViolation):
        PointConfiguration((0.9 + 0.0j,), params, J, "inner", 0, "sequential")
    with pytest.raises(ConstraintViolation):
        PointConfiguration((0.9 + 0.0j,), params, J, "full", 0, "sequential")
    with pytest.raises(ValueError, match="region"):
        PointConfiguration((), params, J, "annulus", 0, "sequential")
    with pytest.raises(ValueError, match="sampler"):
        PointConfiguration((), params, J, "outer", 0, "magic")


def test_point_configuration_region_tags_split_full():
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    cfg = sample_conditioned_ensemble(params, RandomStream(seed=8))
    tags = cfg.point_regions()
    assert tags.count("outer") == params.N_c
    for z, tag in zip(cfg.points, tags):
        assert (abs(z) > params.R) == (tag == "outer")


def test_json_roundtrip_is_exact():
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    cfg = sample_conditioned_ensemble(params, RandomStream(seed=99))
    clone = PointConfiguration.from_json(cfg.to_json())
    assert clone == cfg
    doc = json.loads(cfg.to_json())
    assert doc["schema"] == "point-configuration/1"
    with pytest.raises(ValueError, match="schema"):
        PointConfiguration.from_json(json.dumps({**doc, "schema": "nope"}))


def test_csv_roundtrip_and_byte_determinism(tmp_path):
    params = EnsembleParams(N=12, c=0.7, R=0.6)
    cfg = sample_conditioned_ensemble(params, RandomStream(seed=100))
    p1 = cfg.write_csv(tmp_path / "a.csv")
    clone = PointConfiguration.read_csv(p1)
    assert clone == cfg

    cfg2 = sample_conditioned_ensemble(params, RandomStream(seed=100))
    cfg2.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv.meta.json").read_bytes() == (tmp_path / "b.csv.meta.json").read_bytes()

    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "re,im,region"
    (tmp_path / "bad.csv").write_text("x,y\n")
    (tmp_path / "bad.csv.meta.json").write_text(json.dumps(json.loads((tmp_path / "a.csv.meta.json").read_text())))
    with pytest.raises(ValueError, match="header"):
        PointConfiguration.read_csv(tmp_path / "bad.csv")


@settings(max_examples=25, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(min_value=0.62, max_value=3.0),
            st.floats(min_value=-math.pi, max_value=math.pi),
        ),
        max_size=8,
    )
)
def test_json_roundtrip_property(polar):
    params = EnsembleParams(N=9, c=0.7, R=0.6)
    points = tuple(complex(r * math.cos(a), r * math.sin(a)) for r, a in polar)
    cfg = PointConfiguration(points, params, top_block(params), "outer", 7, "radial")
    assert PointConfiguration.from_json(cfg.to_json()) == cfg
