import json
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as hst

from umbilic_yamabe import symtensor as st


def test_empty_coeffset_gives_zero_tensor():
    H = st.make_H(st.CoeffSet(6, 2, {}))
    assert not H.nonzero()


def test_standard_example_is_admissible(E0):
    rep = st.check_admissible(st.make_H(E0))
    assert rep.ok, rep.failures


def test_single_entry_fails_radial_row_check():
    c = st.CoeffSet(6, 2, {(0, 0, (2, 0, 0, 0, 0, 0)): 1})
    rep = st.check_admissible(st.make_H(c))
    assert not rep.radial_rows_vanish_on_boundary


def test_doubling_one_entry_breaks_radial_rows(E0):
    e = dict(E0.entries)
    key = next(k for k in e if k[:2] == (2, 3))
    e[key] *= 2
    rep = st.check_admissible(st.make_H(st.CoeffSet(6, E0.d, e)))
    assert not rep.radial_rows_vanish_on_boundary


def test_zero_tensor_passes_all_checks():
    assert st.check_admissible(st.make_H(st.CoeffSet(6, 2, {}))).ok


def test_A_vanishes_for_E0_but_Z_does_not(E0):
    # E0 is transverse-traceless with E0 x = 0, which kills A identically
    H = st.make_H(E0)
    assert not st.compute_A(H).nonzero()
    Z = st.compute_Z(H)
    assert Z.nonzero()
    assert all(v == 0 for v in st.z_symmetry_defects(Z).values())


def test_divergence_identity_for_E0(E0):
    assert not st.divergence_identity_residual(st.make_H(E0)).nonzero()


@pytest.mark.parametrize("n", [6, 8])
def test_random_admissible_passes_checks(n):
    for seed in range(3):
        H = st.make_H(st.random_admissible(n, seed=seed))
        assert st.check_admissible(H).ok
        assert all(p.is_zero for p in st.boundary_A_normal(H))


def test_z_map_rank_on_E0_span(E0):
    assert st.z_map_rank([E0]) == 1


def test_z_kernel_precondition():
    with pytest.raises(ValueError):
        st.z_kernel(6, 3)


def test_ball_moment_volume_and_symmetry():
    import math
    n = 6
    assert st.ball_moment(1, (0,) * n, (0,) * n) == pytest.approx(math.pi ** 3 / 6, rel=1e-14)
    assert st.ball_moment(1, (0,) * n, (1, 0, 0, 0, 0, 0)) == 0.0
    a = (2, 0, 0, 0, 0, 0)
    assert st.ball_moment(Fraction(1, 2), (0,) * n, a) == pytest.approx(
        Fraction(1, 2) ** (n + 2) * st.ball_moment(1, (0,) * n, a), rel=1e-13)


def test_ball_moment_matches_mc():
    import random
    rng = random.Random(3)
    for _ in range(20):
        n = 6
        alpha = tuple(rng.randrange(3) for _ in range(n))
        rho = Fraction(rng.randrange(1, 5), 4)
        ctr = tuple(Fraction(rng.randrange(-4, 5), 4) for _ in range(n))
        exact = st.ball_moment(rho, ctr, alpha)
        est, se = st.ball_moment_mc(rho, ctr, alpha, samples=100_000, seed=rng.randrange(10 ** 6))
        assert abs(est - exact) <= 4 * se + 1e-12


def test_gram_K1_symmetric_psd():
    import numpy as np
    r = st.gram_K1(6, 2)
    G = r.gram
    assert np.allclose(G, G.T)
    assert np.linalg.eigvalsh(G).min() > -1e-12 * np.abs(G).max()


@settings(max_examples=20, deadline=None)
@given(hst.integers(0, 10 ** 6))
def test_coeffset_json_roundtrip(seed):
    c = st.random_admissible(6, seed=seed)
    back = st.CoeffSet.from_json(json.dumps(c.to_json()))
    assert back.entries == c.entries


def test_coeffset_json_rejects_bad_index():
    with pytest.raises(ValueError, match="entries\\[0\\]"):
        st.CoeffSet.from_json({"n": 6, "d": 2, "entries": [{"i": 9, "k": 1, "alpha": [2, 0, 0, 0, 0, 0], "value": "1"}]})


def test_scaling_law_exact():
    c = st.homogeneous_part(st.random_admissible(6, seed=4), 2)
    assert st.scaling_defect(c, Fraction(5, 3)) == 0
