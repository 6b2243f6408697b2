"""Network loading: propagation, FIFO splitting, conservation, per-driver maps."""
import numpy as np
import pytest

from kinwave import (AdmissibilityError, ArcDescriptor, CostFunction, CumulativeCurve,
                     DepartureProfile, DomainError, FluxDescriptor, GroupDescriptor,
                     Network, arrival_time_path, modulus_of_continuity, network_load,
                     per_driver_times)

from helpers import random_scenario
from oracles import brute_lax_hopf

TRI = FluxDescriptor.triangular(1.0, 1.0, 1.0)
GS = FluxDescriptor.greenshields(1.0, 1.0)


def make_network(arcs_spec, groups_spec):
    nodes = sorted({n for a in arcs_spec for n in (a[0], a[1])})
    arcs = [ArcDescriptor(a, b, L, flux) for a, b, L, flux in arcs_spec]
    groups = [
        GroupDescriptor(size, o, d, CostFunction.affine(0.0, -1.0),
                        CostFunction.quadratic(0.0, 1.0, 0.2))
        for size, o, d in groups_spec
    ]
    return Network(nodes, arcs, groups)


def single_arc(flux=TRI, size=0.16):
    return make_network([("a", "b", 1.0, flux)], [(size, "a", "b")])


class TestProfileValidation:
    def test_negative_rates(self):
        net = single_arc()
        with pytest.raises(AdmissibilityError):
            DepartureProfile(0.0, 1.0, -np.ones((1, 1, 2))).validate(net)

    def test_shape_mismatch(self):
        net = single_arc()
        with pytest.raises(AdmissibilityError):
            DepartureProfile(0.0, 1.0, np.zeros((2, 1, 2))).validate(net)

    def test_mass_mismatch(self):
        net = single_arc(size=0.5)
        prof = DepartureProfile(0.0, 1.0, 0.1 * np.ones((1, 1, 2)))
        with pytest.raises(AdmissibilityError):
            prof.validate(net)
        prof.validate(net, check_mass=False)  # probe mode skips the balance

    def test_rate_cap(self):
        net = single_arc(size=1.0)
        prof = DepartureProfile(0.0, 1.0, np.full((1, 1, 1), 1.0))
        with pytest.raises(AdmissibilityError):
            prof.validate(net, rate_cap=0.5)

    def test_flow_on_nonconnecting_path(self):
        net = make_network(
            [("a", "b", 1.0, TRI), ("b", "c", 1.0, TRI)],
            [(0.1, "a", "b"), (0.1, "b", "c")],
        )
        rates = np.zeros((2, len(net.paths), 1))
        # both groups dump their mass on group 0's path
        p0 = net.paths_for_group(0)[0]
        rates[0, p0, 0] = 0.1
        rates[1, p0, 0] = 0.1
        with pytest.raises(AdmissibilityError):
            DepartureProfile(0.0, 1.0, rates).validate(net)


class TestNetworkLoad:
    def test_zero_profile(self):
        net = single_arc(size=0.0)
        prof = DepartureProfile(0.0, 1.0, np.zeros((1, 1, 2)))
        res = network_load(net, prof)
        assert res.arrival_total(0) == 0.0
        res.check_invariants()

    def test_steady_state_arrivals(self):
        # sub-capacity constant inflow: post-transient drivers ride the
        # kinematic-wave steady state with travel time L*g(u)/u = 1.25
        net = single_arc(flux=GS, size=0.16)
        prof = DepartureProfile(0.0, 1.0, np.full((1, 1, 1), 0.16))
        res = network_load(net, prof, dt=1e-3)
        res.check_invariants()
        assert arrival_time_path(res, net.paths[0], 1.0) == pytest.approx(
            2.25, abs=2e-3
        )
        # the first drivers beat the steady shift (startup fan)
        assert arrival_time_path(res, net.paths[0], 0.0) < 1.25 - 0.05
        # arrival curve agrees with the brute-force variational oracle
        entry = res.arc_flows[("a", "b")].entry
        exit_c = res.arc_flows[("a", "b")].exit
        for t in (1.2, 1.8, 2.2):
            oracle = brute_lax_hopf(entry.t, entry.v, GS.conjugate, 1.0, t)
            assert exit_c(t) == pytest.approx(oracle, abs=2e-3)

    def test_two_group_merge_conserves_per_group(self):
        net = make_network(
            [("a", "b", 1.0, TRI), ("b", "c", 1.0, TRI)],
            [(0.3, "a", "c"), (0.2, "b", "c")],
        )
        rates = np.zeros((2, len(net.paths), 2))
        rates[0, net.paths_for_group(0)[0]] = [0.2, 0.4]
        rates[1, net.paths_for_group(1)[0]] = [0.3, 0.1]
        prof = DepartureProfile(0.0, 0.5, rates)
        res = network_load(net, prof)
        res.check_invariants()
        assert res.arrival_total(0) == pytest.approx(0.3, abs=1e-9)
        assert res.arrival_total(1) == pytest.approx(0.2, abs=1e-9)

    def test_overloaded_shared_arc_slope_at_capacity(self):
        net = make_network(
            [("a", "b", 1.0, TRI), ("b", "c", 1.0, TRI)],
            [(0.8, "a", "c"), (0.8, "b", "c")],
        )
        rates = np.zeros((2, len(net.paths), 1))
        rates[0, net.paths_for_group(0)[0]] = 0.8
        rates[1, net.paths_for_group(1)[0]] = 0.8
        res = network_load(net, DepartureProfile(0.0, 1.0, rates))
        res.check_invariants()
        exit_c = res.arc_flows[("b", "c")].exit
        assert exit_c.max_slope <= 0.5 + 1e-9
        # the queue drains exactly at capacity for a while
        assert np.max(exit_c.slopes) == pytest.approx(0.5, abs=1e-9)

    def test_fifo_split_shares(self):
        # two groups entering one arc: exit shares at time t equal entry
        # shares at the matched entry time
        net = make_network([("a", "b", 1.0, TRI)],
                           [(0.6, "a", "b"), (0.3, "a", "b")])
        rates = np.zeros((2, 1, 2))
        rates[0, 0] = [0.8, 0.4]
        rates[1, 0] = [0.2, 0.4]
        res = network_load(net, DepartureProfile(0.0, 0.5, rates))
        comp = res.arc_flows[("a", "b")]
        for t in np.linspace(1.05, 3.0, 12):
            tau = comp.entry.inverse(min(comp.exit(t), comp.entry.total))
            for k in (0, 1):
                part = res.comp_exit[(k, 0, ("a", "b"))]
                assert part(t) == pytest.approx(
                    res.departures[(k, 0)](tau), abs=1e-9
                )

    def test_random_scenarios_invariants(self):
        rng = np.random.default_rng(42)
        for _ in range(6):
            net, prof = random_scenario(rng)
            res = network_load(net, prof)
            res.check_invariants(tol=1e-6)

    def test_perturbation_continuity(self):
        # shrinking a one-bin perturbation shrinks every arrival-time change
        net = single_arc(flux=TRI, size=0.6)
        base = DepartureProfile(0.0, 0.5, np.array([[[0.4, 0.8]]]))
        res0 = network_load(net, base)
        ts = np.linspace(0.0, 1.0, 21)
        a0 = arrival_time_path(res0, net.paths[0], ts)
        sups = []
        for delta in (1e-2, 1e-3):
            rates = base.rates.copy()
            rates[0, 0, 1] += delta / 0.5
            res = network_load(
                net, DepartureProfile(0.0, 0.5, rates), check_mass=False
            )
            sups.append(np.max(np.abs(arrival_time_path(res, net.paths[0], ts) - a0)))
        assert sups[1] <= sups[0] + 1e-9
        phi = modulus_of_continuity(net.arcs[0], M=2.0, G=1.0)
        assert sups[0] <= phi(1e-2 / 0.5) + 1e-6


class TestArrivalTimePath:
    def test_free_flow_two_arcs(self):
        net = make_network(
            [("a", "b", 1.0, TRI), ("b", "c", 2.0, TRI)], [(0.0, "a", "c")]
        )
        prof = DepartureProfile(0.0, 1.0, np.zeros((1, len(net.paths), 1)))
        res = network_load(net, prof)
        assert arrival_time_path(res, net.paths[0], 0.5) == pytest.approx(3.5)

    def test_single_arc_matches_exit_time(self):
        net = single_arc(size=0.8)
        prof = DepartureProfile(0.0, 1.0, np.full((1, 1, 1), 0.8))
        res = network_load(net, prof)
        comp = res.arc_flows[("a", "b")]
        for t in np.linspace(0.0, 1.0, 7):
            assert arrival_time_path(res, net.paths[0], t) == pytest.approx(
                comp.exit_time(t), abs=1e-12
            )

    def test_monotone_in_departure(self):
        net = make_network(
            [("a", "b", 1.0, TRI), ("b", "c", 0.5, TRI)], [(1.0, "a", "c")]
        )
        prof = DepartureProfile(0.0, 0.5, np.full((1, 1, 4), 0.5))
        res = network_load(net, prof)
        ts = np.linspace(-0.5, 3.0, 141)
        arr = arrival_time_path(res, net.paths[0], ts)
        assert np.all(np.diff(arr) >= -1e-12)


class TestPerDriverTimes:
    def test_uniform_departures(self):
        net = single_arc(size=0.5)
        prof = DepartureProfile(0.0, 1.0, np.full((1, 1, 1), 0.5))
        res = network_load(net, prof)
        dep_inv, arr_inv = per_driver_times(res, 0, 0)
        assert dep_inv(0.25) == pytest.approx(0.5)

    def test_free_flow_shift(self):
        net = single_arc(size=0.1)
        prof = DepartureProfile(0.0, 1.0, np.full((1, 1, 1), 0.1))
        res = network_load(net, prof)
        dep_inv, arr_inv = per_driver_times(res, 0, 0)
        for beta in (0.0, 0.03, 0.09):
            assert arr_inv(beta) == pytest.approx(dep_inv(beta) + 1.0, abs=1e-9)

    def test_congested_consistency(self):
        net = single_arc(size=1.2)
        prof = DepartureProfile(0.0, 1.0, np.full((1, 1, 1), 1.2))
        res = network_load(net, prof)
        dep_inv, arr_inv = per_driver_times(res, 0, 0)
        betas = np.linspace(0.0, 1.2, 13)
        arr = arr_inv(betas)
        assert np.all(np.diff(arr) >= -1e-12)
        for beta in betas[1:-1]:
            assert arr_inv(beta) == pytest.approx(
                arrival_time_path(res, net.paths[0], dep_inv(beta)), abs=1e-9
            )

    def test_out_of_range(self):
        net = single_arc(size=0.5)
        prof = DepartureProfile(0.0, 1.0, np.full((1, 1, 1), 0.5))
        res = network_load(net, prof)
        dep_inv, _ = per_driver_times(res, 0, 0)
        with pytest.raises(DomainError):
            dep_inv(0.6)
