import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sipsim.model import (
    Configuration,
    EmptySiteError,
    ModelParams,
    active_rates,
    apply_jump,
    jump_rate,
    log_mu,
    log_weight,
)


def make_params(N=16, L=12, d_N=1e-4, k=2):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ModelParams(N=N, L=L, d_N=d_N, k=k)


def test_theta_is_time_scale_over_d():
    p = make_params(N=8, L=8, d_N=1e-3)
    assert p.theta_N == pytest.approx(64 / 1e-3)
    assert p.theta_N * p.d_N == pytest.approx(64.0)


def test_rho_and_indicator():
    p = make_params(N=32, L=16, d_N=1e-7)
    assert p.rho == 2.0
    assert p.condensing_indicator == pytest.approx(1e-7 * 32**3 * math.log(32))


def test_condensing_warning_emitted():
    with pytest.warns(UserWarning, match="condensing"):
        ModelParams(N=16, L=16, d_N=1e-2, k=1)


def test_from_sites_and_occupancy():
    eta = Configuration.from_sites(6, [(0, 3), (2, 4)])
    assert list(eta.occupancy) == [3, 0, 4, 0, 0, 0]
    assert eta.total == 7
    assert list(eta.occupied_sites()) == [0, 2]


def test_from_sites_accumulates_and_wraps():
    eta = Configuration.from_sites(4, [(0, 2), (0, 3), (7, 2)])
    assert list(eta.occupancy) == [5, 0, 0, 2]
    with pytest.raises(ValueError):
        Configuration.from_sites(4, [(1, -2)])


def test_jump_rate_formula():
    p = make_params(N=7, L=6, d_N=0.01, k=1)
    eta = Configuration.from_sites(6, [(0, 3), (1, 4)])
    # rate = theta * eta_x * (d + eta_y)
    assert jump_rate(p, eta, 0, +1) == pytest.approx(p.theta_N * 3 * (0.01 + 4))
    assert jump_rate(p, eta, 1, -1) == pytest.approx(p.theta_N * 4 * (0.01 + 3))
    assert jump_rate(p, eta, 1, +1) == pytest.approx(p.theta_N * 4 * 0.01)


def test_empty_source_has_zero_rate_and_no_jump():
    p = make_params(N=7, L=6, d_N=0.01, k=1)
    eta = Configuration.from_sites(6, [(0, 7)])
    assert jump_rate(p, eta, 3, +1) == 0.0
    with pytest.raises(EmptySiteError):
        apply_jump(eta, 3, +1)


def test_apply_jump_moves_one_particle():
    eta = Configuration.from_sites(5, [(0, 2), (4, 1)])
    eta2 = apply_jump(eta, 0, -1)
    assert list(eta2.occupancy) == [1, 0, 0, 0, 2]
    assert eta2.total == eta.total


def test_apply_jump_wraps_around():
    eta = Configuration.from_sites(3, [(2, 1)])
    eta2 = apply_jump(eta, 2, +1)
    assert list(eta2.occupancy) == [1, 0, 0]


def test_active_rates_covers_all_channels():
    p = make_params(N=5, L=4, d_N=0.1, k=1)
    eta = Configuration.from_sites(4, [(0, 2), (2, 3)])
    chans = active_rates(p, eta)
    assert len(chans) == 4  # two occupied sites, two directions each
    total = sum(r for _, _, r in chans)
    brute = sum(
        jump_rate(p, eta, x, s)
        for x in (0, 2)
        for s in (-1, +1)
    )
    assert total == pytest.approx(brute)


def test_log_weight_small_d_behaviour():
    # w_n = Gamma(d+n)/(Gamma(d) n!) ~ d/n for small d
    d = 1e-8
    p = make_params(N=10, L=8, d_N=d, k=1)
    for n in (1, 2, 5):
        assert log_weight(p, n) == pytest.approx(math.log(d / n), abs=1e-4)
    assert log_weight(p, 0) == 0.0


def test_log_mu_is_sum_of_log_weights():
    p = make_params(N=7, L=5, d_N=0.05, k=1)
    eta = Configuration.from_sites(5, [(0, 3), (2, 4)])
    expected = log_weight(p, 3) + log_weight(p, 4) + 3 * log_weight(p, 0)
    assert log_mu(p, eta) == pytest.approx(expected)


@given(
    st.lists(st.integers(min_value=0, max_value=6), min_size=4, max_size=8),
    st.data(),
)
@settings(max_examples=60, deadline=None)
def test_jump_preserves_mass_and_balance(occ_list, data):
    """Any allowed jump conserves particles and satisfies the log flux
    identity mu(eta) r(eta -> eta') = mu(eta') r(eta' -> eta)."""
    if sum(occ_list) == 0:
        return
    L = len(occ_list)
    eta = Configuration(np.array(occ_list, dtype=np.int64))
    p = make_params(N=eta.total, L=L, d_N=0.02, k=1)
    sites = list(eta.occupied_sites())
    x = int(data.draw(st.sampled_from(sites)))
    s = data.draw(st.sampled_from([-1, +1]))
    eta2 = apply_jump(eta, x, s)
    assert eta2.total == eta.total

    y = (x + s) % L
    fwd = log_mu(p, eta) + math.log(jump_rate(p, eta, x, s))
    bwd = log_mu(p, eta2) + math.log(jump_rate(p, eta2, y, -s))
    assert fwd == pytest.approx(bwd, abs=1e-9)
