import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridshield.linmodel import Model, solve
from gridshield.network import Bus, Generator, Network, load_benchmark
from gridshield.powerflow import (OFF, ON, BigMPolicy, ConfigurationError, InsufficientCapacity,
                                  PlanDecision, add_dc_flow_block, add_operator_block,
                                  check_bigm, dc_power_flow, solve_base_opf)
from gridshield.threat import ThreatModel, apply_default_costs

from conftest import toy

NO_THREAT = ThreatModel(planner_budget=3)


def test_one_bus_base_cost():
    net = Network([Bus(1, 5.0)], [], [Generator(1, 1, 10.0, 10.0)])
    plan, cost = solve_base_opf(net, NO_THREAT)
    assert cost == pytest.approx(50.0)
    assert plan.base_flow.size == 0


def test_base_case_buys_no_reserve_and_no_firewalls():
    net = toy("five_bus")
    plan, cost = solve_base_opf(net, NO_THREAT)
    assert np.all(plan.reserve == 0) and np.all(plan.firewall == 0)
    assert cost == pytest.approx(plan.dispatch_cost(net))
    assert plan.violations(net, NO_THREAT) == []


def test_base_case_24_bus():
    net = apply_default_costs(load_benchmark("case24"))
    _, cost = solve_base_opf(net, NO_THREAT)
    assert cost == pytest.approx(41904.11, rel=1e-3)


def test_insufficient_capacity():
    net = Network([Bus(1, 50.0)], [], [Generator(1, 1, 10.0, 10.0)])
    with pytest.raises(InsufficientCapacity):
        solve_base_opf(net, NO_THREAT)


def _flows_on(net, injections, status, bigm=None, printed=False):
    """Minimum-shedding flows for fixed bus injections."""
    threat = ThreatModel()
    m = Model()
    inj = list(injections)
    op = add_operator_block(m, net, threat, injection=inj, up_caps=[[0.0]] * net.n_gen,
                            dp_cap=[float(x) for x in inj], status=status, bigm=bigm,
                            printed=printed)
    m.set_objective(op.cost)
    res = solve(m)
    assert res.ok
    return res, op


def test_all_on_block_matches_base_case_flows():
    net = toy("five_bus")
    plan, _ = solve_base_opf(net, NO_THREAT)
    res, op = _flows_on(net, plan.dispatch, [ON] * net.n_branch)
    assert res.objective_value == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(res.values(op.f), plan.base_flow, atol=1e-6)


def test_islanding_forces_full_shedding():
    net = toy("two_bus")
    # the remote unit at bus 1 carries everything; the local unit is off
    res, op = _flows_on(net, [60.0, 0.0], [OFF])
    assert res.values(op.shed)[1] == pytest.approx(60.0)
    assert res.objective_value == pytest.approx(5000.0 * 60.0)


def test_conditional_branch_with_intact_endpoints_is_exact():
    net = toy("five_bus")
    plan, _ = solve_base_opf(net, NO_THREAT)
    bigm = BigMPolicy().values(net)
    exact, op1 = _flows_on(net, plan.dispatch, [ON] * net.n_branch)
    cond, op2 = _flows_on(net, plan.dispatch, [("cond", 1.0, 1.0)] * net.n_branch, bigm)
    np.testing.assert_allclose(cond.values(op2.f), exact.values(op1.f), atol=1e-6)


def test_conditional_branch_with_intruded_endpoint_carries_no_flow():
    net = toy("three_bus")
    plan, _ = solve_base_opf(net, NO_THREAT)
    bigm = BigMPolicy().values(net)
    m = Model()
    e = m.add_binary("e")
    m.add_constraint(e <= 0)
    status = [("cond", e, 1.0), ON, ON]
    f, _ = add_dc_flow_block(m, net, status, bigm)
    m.set_objective(f[0], "max")
    assert solve(m).objective_value == pytest.approx(0.0, abs=1e-9)


def test_undersized_bigm_is_rejected():
    net = toy("three_bus")
    small = np.full(net.n_branch, 1.0)
    with pytest.raises(ConfigurationError):
        check_bigm(net, small)
    with pytest.raises(ConfigurationError, match="big-M"):
        add_dc_flow_block(Model(), net, [("cond", 1.0, 1.0)] * 3, small)
    with pytest.raises(ConfigurationError, match="need a big-M"):
        add_dc_flow_block(Model(), net, [("cond", 1.0, 1.0)] * 3, None)


def test_bigm_policy():
    net = toy("three_bus")
    M = BigMPolicy(math.pi).values(net)
    assert M[0] == pytest.approx(60.0 + math.pi / 0.001)


def test_dc_power_flow_matches_plan():
    net = toy("five_bus")
    plan, _ = solve_base_opf(net, NO_THREAT)
    f, theta = dc_power_flow(net, plan.dispatch)
    rebuilt = PlanDecision(plan.dispatch, plan.reserve, plan.firewall, f, theta)
    assert rebuilt.violations(net, NO_THREAT) == []


def test_plan_dict_roundtrip_and_recomputed_flows():
    net = toy("five_bus")
    plan, _ = solve_base_opf(net, NO_THREAT)
    plan.firewall[2] = 1.0
    doc = plan.to_dict(net)
    again = PlanDecision.from_dict(net, doc)
    np.testing.assert_allclose(again.dispatch, plan.dispatch)
    assert again.secured_buses(net) == [3]
    del doc["base_flow"], doc["base_angle"]
    recomputed = PlanDecision.from_dict(net, doc)
    assert recomputed.violations(net, NO_THREAT) == []
    with pytest.raises(ValueError, match="unknown generator"):
        PlanDecision.from_dict(net, {"dispatch": {"99": 1.0}})


def test_plan_violations_are_listed():
    net = toy("five_bus")
    plan, _ = solve_base_opf(net, NO_THREAT)
    bad = PlanDecision(plan.dispatch * 1.5, plan.reserve + 1e4, np.ones(net.n_bus) * 0.5,
                       plan.base_flow, plan.base_angle)
    text = " ".join(bad.violations(net, ThreatModel(planner_budget=0)))
    assert "exceeds capacity" in text
    assert "binary" in text
    assert "power balance" in text


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_angle_shift_invariance(shift):
    net = toy("five_bus")
    plan, _ = solve_base_opf(net, NO_THREAT)
    shifted = PlanDecision(plan.dispatch, plan.reserve, plan.firewall, plan.base_flow,
                           plan.base_angle + shift)
    assert shifted.violations(net, NO_THREAT) == []


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_lossless_balance(weights):
    net = toy("five_bus")
    caps = np.array([g.capacity for g in net.generators])
    inj = caps * np.array(weights)
    res, op = _flows_on(net, inj, [ON] * net.n_branch)
    supplied = float(np.sum(inj + res.values(op.up) - res.values(op.dp)))
    delivered = net.total_demand - float(res.values(op.shed).sum())
    assert supplied == pytest.approx(delivered, abs=1e-6)
