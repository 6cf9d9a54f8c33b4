import pytest

from gridshield.attack import AttackVector
from gridshield.oracle import (EnumerationLimitError, attack_surface, enumerate_optimal_plan,
                               enumerate_worst_attack, surface_size)
from gridshield.powerflow import solve_base_opf
from gridshield.threat import Attacker

from conftest import threat


def test_surface_size_counts_branch_subsets(two_bus):
    att = Attacker("a", "advanced", 1, 0.1)
    # empty set, plus each bus with the line either open or closed
    assert surface_size(two_bus, att) == 1 + 2 + 2
    assert len(list(attack_surface(two_bus, att))) == 5


def test_firewalls_shrink_the_basic_surface(two_bus):
    att = Attacker("a", "basic", 1, 0.1)
    assert surface_size(two_bus, att, [1.0, 0.0]) == 1 + 2
    assert all(1 not in v.buses for v in attack_surface(two_bus, att, [1.0, 0.0]))


def test_surface_is_lexicographic(three_bus):
    att = Attacker("a", "advanced", 2, 0.1)
    keys = [v.key for v in attack_surface(three_bus, att)]
    assert len(keys) == len(set(keys)) == surface_size(three_bus, att)


def test_ties_keep_the_smallest_vector(two_bus):
    th = threat(("a", "advanced", 1, 0.1))
    plan, _ = solve_base_opf(two_bus, th)
    vec, val = enumerate_worst_attack(two_bus, th, th.attackers[0], plan)
    # cutting off the remote unit alone already sheds everything
    assert vec == AttackVector("a", frozenset({1}))
    assert val == pytest.approx(5000.0 * 60.0)


def test_cap_is_enforced(five_bus):
    th = threat(("a", "advanced", 2, 0.1), budget=2)
    plan, _ = solve_base_opf(five_bus, th)
    with pytest.raises(EnumerationLimitError):
        enumerate_worst_attack(five_bus, th, th.attackers[0], plan, cap=10)
    with pytest.raises(EnumerationLimitError):
        enumerate_optimal_plan(five_bus, th, cap=10)


def test_plan_surface_covers_every_pattern(three_bus):
    th = threat(("a", "basic", 1, 0.2), budget=1)
    orc = enumerate_optimal_plan(three_bus, th)
    assert set(orc.surface) == {(), (1,), (2,), (3,)}
    assert orc.total == pytest.approx(min(orc.surface.values()))
    assert orc.total == pytest.approx(orc.reserve_dispatch_cost + orc.firewall_cost
                                      + orc.expected_cost)


def test_no_attackers_gives_the_base_case(five_bus):
    th = threat(budget=2)
    _, base = solve_base_opf(five_bus, th)
    orc = enumerate_optimal_plan(five_bus, th)
    assert orc.total == pytest.approx(base, rel=1e-9)
    assert orc.secured == ()
