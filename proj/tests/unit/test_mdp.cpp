#include <doctest.h>

#include <cmath>
#include <limits>

#include "support/oracles.hpp"
#include "valbound/envs.hpp"
#include "valbound/mdp.hpp"
#include "valbound/mdp_io.hpp"

using namespace valbound;

namespace {

TabularMdp single_state(double r, double gamma) {
    RewardTable rt(1, 1, r);
    return TabularMdp(1, 1, {1.0}, rt, gamma);
}

// s0 -> s1 -> g with reward -1 per interior move; g absorbing with reward 0.
TabularMdp chain3(double gamma) {
    std::vector<double> p(3 * 1 * 3, 0.0);
    p[0 * 3 + 1] = 1.0;
    p[1 * 3 + 2] = 1.0;
    p[2 * 3 + 2] = 1.0;
    RewardTable r(3, 1, -1.0);
    r(2, 0) = 0.0;
    return TabularMdp(3, 1, p, r, gamma, {2});
}

QTable row(std::vector<double> xs) {
    QTable q(1, xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) q(0, i) = xs[i];
    return q;
}

}  // namespace

TEST_CASE("mdp construction rejects malformed input") {
    RewardTable r(2, 1, 0.0);
    CHECK_THROWS_AS(TabularMdp(2, 1, {0.5, 0.4, 0.0, 1.0}, r, 0.9), std::invalid_argument);
    CHECK_THROWS_AS(TabularMdp(2, 1, {1.5, -0.5, 0.0, 1.0}, r, 0.9), std::invalid_argument);
    CHECK_THROWS_AS(TabularMdp(2, 1, {1.0, 0.0, 0.0, 1.0}, r, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(TabularMdp(2, 1, {1.0, 0.0, 0.0, 1.0}, r, 1.0), std::invalid_argument);
    // absorbing state must self-loop
    CHECK_THROWS_AS(TabularMdp(2, 1, {1.0, 0.0, 1.0, 0.0}, r, 0.9, {1}), std::invalid_argument);
    RewardTable bad(2, 1, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(TabularMdp(2, 1, {1.0, 0.0, 0.0, 1.0}, bad, 0.9), std::invalid_argument);
}

TEST_CASE("regularization spec validation") {
    CHECK_THROWS(RegularizationSpec::soft_uniform(0.0, 2, 2));
    CHECK_THROWS(RegularizationSpec::soft_uniform(-1.0, 2, 2));
    StateActionTable prior(1, 2, 0.3);
    CHECK_THROWS(RegularizationSpec::soft(1.0, prior));
    auto std_reg = RegularizationSpec::standard(2, 2);
    CHECK(std_reg.is_standard());
    CHECK_THROWS_AS(std_reg.beta(), std::logic_error);
}

TEST_CASE("soft state value examples") {
    auto reg = RegularizationSpec::soft_uniform(1.0, 1, 2);
    CHECK(soft_state_value(row({0.0, 0.0}), reg)[0] == doctest::Approx(0.0));

    for (double beta : {0.01, 1.0, 37.0}) {
        StateActionTable prior(1, 2);
        prior(0, 0) = 0.2;
        prior(0, 1) = 0.8;
        auto r = RegularizationSpec::soft(beta, prior);
        CHECK(soft_state_value(row({-3.25, -3.25}), r)[0] == -3.25);
    }

    auto reg2 = RegularizationSpec::soft_uniform(2.0, 1, 2);
    const double expect = 0.5 * std::log((1.0 + std::exp(2.0)) / 2.0);
    CHECK(std::abs(soft_state_value(row({0.0, 1.0}), reg2)[0] - expect) <= 1e-15);

    QTable big = row({1000.0, 999.0});
    auto v = soft_state_value(big, RegularizationSpec::soft_uniform(5.0, 1, 2));
    CHECK(std::isfinite(v[0]));

    QTable nan = row({0.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS(soft_state_value(nan, reg));
}

TEST_CASE("hard state value examples and soft limit") {
    CHECK(hard_state_value(row({3.0, -1.0}))[0] == 3.0);
    CHECK(hard_state_value(row({2.5, 2.5}))[0] == 2.5);
    QTable q = row({0.3, -1.2, 0.29});
    auto reg = RegularizationSpec::soft_uniform(1e9, 1, 3);
    CHECK(std::abs(soft_state_value(q, reg)[0] - hard_state_value(q)[0]) <= 1e-6);
}

TEST_CASE("soft and hard backup examples") {
    auto mdp = single_state(1.0, 0.5);
    QTable q(1, 1, 2.0);
    auto reg = RegularizationSpec::soft_uniform(1.0, 1, 1);
    CHECK(soft_backup(mdp, reg, q)(0, 0) == doctest::Approx(2.0));
    CHECK(hard_backup(mdp, q)(0, 0) == doctest::Approx(2.0));

    Rng rng(11);
    auto m = oracle::random_mdp(rng, 6, 3, 0.5, 0.99);
    QTable zero(m.num_states(), m.num_actions(), 0.0);
    auto sreg = RegularizationSpec::soft_uniform(0.7, m.num_states(), m.num_actions());
    CHECK(max_abs_diff(soft_backup(m, sreg, zero), m.reward()) == 0.0);
    CHECK(max_abs_diff(hard_backup(m, zero), m.reward()) == 0.0);
}

TEST_CASE("backups match the oracle recomputation") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        auto m = oracle::random_mdp(rng, 5, 3, 0.3, 0.99);
        auto q = oracle::random_table(rng, m.num_states(), m.num_actions(), -4.0, 4.0);
        const double beta = oracle::random_table(rng, 1, 1, 0.05, 20.0)(0, 0);
        auto prior = oracle::random_policy(rng, m.num_states(), m.num_actions());
        auto reg = RegularizationSpec::soft(beta, prior);
        CHECK(max_abs_diff(soft_backup(m, reg, q), oracle::backup(m, q, beta, prior)) <= 1e-12);
        CHECK(max_abs_diff(hard_backup(m, q), oracle::backup(m, q, std::nullopt, prior)) <= 1e-12);
    }
}

TEST_CASE("hard backup is the large-beta limit of the soft backup") {
    Rng rng(8);
    auto m = oracle::random_mdp(rng, 5, 3, 0.5, 0.95);
    auto q = oracle::random_table(rng, m.num_states(), m.num_actions(), -1.0, 1.0);
    auto reg = RegularizationSpec::soft_uniform(1e9, m.num_states(), m.num_actions());
    CHECK(max_abs_diff(soft_backup(m, reg, q), hard_backup(m, q)) <= 1e-6);
}

TEST_CASE("backups pin absorbing states") {
    auto m = chain3(0.9);
    QTable q(3, 1, 5.0);
    CHECK(hard_backup(m, q)(2, 0) == 0.0);
    CHECK(hard_backup(m, q)(1, 0) == doctest::Approx(-1.0 + 0.9 * 5.0));
    std::vector<double> v{1.0, 2.0, 3.0};
    CHECK(m.expected_next(v, 2, 0) == 0.0);
    CHECK(m.expected_next(v, 0, 0) == 2.0);
}

TEST_CASE("solve examples") {
    auto one = single_state(1.0, 0.5);
    auto rep = solve(one, RegularizationSpec::standard(1, 1), 1e-12);
    CHECK(rep.q(0, 0) == doctest::Approx(2.0).epsilon(1e-11));

    auto chain = chain3(1.0);
    auto c = solve(chain, RegularizationSpec::standard(3, 1));
    CHECK(c.q(0, 0) == -2.0);
    CHECK(c.q(1, 0) == -1.0);

    auto maze = maze_to_mdp(default_maze_spec());
    const auto spec = default_maze_spec();
    auto reg = RegularizationSpec::soft_uniform(spec.beta, maze.mdp.num_states(), maze.mdp.num_actions());
    auto mrep = solve(maze.mdp, reg, 1e-10, 5000);
    CHECK(mrep.residual <= 1e-10);
    CHECK(mrep.iterations <= 5000);
}

TEST_CASE("solve signals non-convergence") {
    // gamma = 1 loop that never reaches the absorbing state
    std::vector<double> p{1.0, 0.0, 0.0, 1.0};
    RewardTable r(2, 1, -1.0);
    TabularMdp m(2, 1, p, r, 1.0, {1});
    try {
        solve(m, RegularizationSpec::standard(2, 1), 1e-10, 50);
        FAIL("expected NonConvergenceError");
    } catch (const NonConvergenceError& e) {
        CHECK(e.iterations() == 50);
        CHECK(e.residual() > 0.0);
    }
    CHECK_THROWS(solve(m, RegularizationSpec::standard(2, 1), 0.0, 50));
}

TEST_CASE("boltzmann policy examples") {
    QTable q(2, 3);
    for (std::size_t a = 0; a < 3; ++a) q(0, a) = 1.5, q(1, a) = -2.0;
    auto prior = StateActionTable(2, 3);
    for (std::size_t s = 0; s < 2; ++s) prior(s, 0) = 0.5, prior(s, 1) = 0.3, prior(s, 2) = 0.2;
    auto pi = boltzmann_policy(q, RegularizationSpec::soft(3.0, prior));
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t a = 0; a < 3; ++a) CHECK(pi(s, a) == doctest::Approx(prior(s, a)).epsilon(1e-14));

    auto p2 = boltzmann_policy(row({0.0, std::log(2.0)}), RegularizationSpec::soft_uniform(1.0, 1, 2));
    CHECK(p2(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(p2(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

    QTable q3 = row({0.1, 0.4, 0.39});
    auto hot = boltzmann_policy(q3, RegularizationSpec::soft_uniform(1e9, 1, 3));
    CHECK(hot(0, 1) == doctest::Approx(1.0));
    CHECK(greedy_actions(q3)[0] == 1);
    auto ties = greedy_policy(row({1.0, 1.0}));
    CHECK(ties(0, 0) == 1.0);
    CHECK(ties(0, 1) == 0.0);
}

TEST_CASE("policy evaluation examples") {
    Rng rng(21);
    auto m = oracle::random_mdp(rng, 6, 3, 0.5, 0.9);
    auto reg = RegularizationSpec::soft_uniform(2.0, m.num_states(), m.num_actions());
    const double tol = 1e-11;
    auto star = solve(m, reg, tol);
    auto q_pi = policy_evaluation(m, reg, boltzmann_policy(star.q, reg), tol);
    CHECK(max_abs_diff(q_pi, star.q) <= 10 * tol * m.horizon());

    RewardTable rc(m.num_states(), m.num_actions(), 0.75);
    auto mc = m.with_reward(rc);
    auto pi0 = PolicyTable(reg.prior());
    auto qc = policy_evaluation(mc, reg, pi0, 1e-12);
    for (double x : qc.values()) CHECK(x == doctest::Approx(0.75 / (1.0 - m.gamma())).epsilon(1e-10));

    // deterministic policy, deterministic chain: discounted rollout sum
    auto chain = chain3(0.9);
    auto qchain = policy_evaluation(chain, RegularizationSpec::standard(3, 1), PolicyTable(StateActionTable(3, 1, 1.0)));
    CHECK(qchain(0, 0) == doctest::Approx(-1.0 - 0.9 * 1.0));

    // positive mass where the prior has none
    StateActionTable prior(1, 2);
    prior(0, 0) = 1.0;
    auto one = TabularMdp(1, 2, {1.0, 1.0}, RewardTable(1, 2, 0.0), 0.5);
    StateActionTable pi(1, 2, 0.5);
    CHECK_THROWS(policy_evaluation(one, RegularizationSpec::soft(1.0, prior), PolicyTable(pi)));
}

TEST_CASE("policy evaluation matches the oracle") {
    Rng rng(22);
    for (int trial = 0; trial < 10; ++trial) {
        auto m = oracle::random_mdp(rng, 5, 3, 0.3, 0.9);
        auto prior = oracle::random_policy(rng, m.num_states(), m.num_actions());
        auto pi = oracle::random_policy(rng, m.num_states(), m.num_actions());
        auto reg = RegularizationSpec::soft(1.3, prior);
        CHECK(max_abs_diff(policy_evaluation(m, reg, PolicyTable(pi), 1e-12), oracle::policy_value(m, pi, 1.3, prior)) <=
              1e-9);
    }
}

TEST_CASE("property: backups contract in sup norm") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        auto m = oracle::random_mdp(rng, 8, 4, 0.1, 0.99);
        auto q1 = oracle::random_table(rng, m.num_states(), m.num_actions(), -5.0, 5.0);
        auto q2 = oracle::random_table(rng, m.num_states(), m.num_actions(), -5.0, 5.0);
        const double d = max_abs_diff(q1, q2);
        auto reg = RegularizationSpec::soft_uniform(uniform(rng, 0.05, 10.0), m.num_states(), m.num_actions());
        CHECK(max_abs_diff(soft_backup(m, reg, q1), soft_backup(m, reg, q2)) <= m.gamma() * d + 1e-12);
        CHECK(max_abs_diff(hard_backup(m, q1), hard_backup(m, q2)) <= m.gamma() * d + 1e-12);
    }
}

TEST_CASE("property: solve output is a fixed point") {
    Rng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = oracle::random_mdp(rng, 8, 4, 0.5, 0.95);
        auto reg = RegularizationSpec::soft_uniform(uniform(rng, 0.1, 5.0), m.num_states(), m.num_actions());
        const double tol = 1e-9;
        auto rep = solve(m, reg, tol);
        CHECK(rep.residual <= tol);
        CHECK(max_abs_diff(soft_backup(m, reg, rep.q), rep.q) <= tol);
        auto hrep = solve(m, RegularizationSpec::standard(m.num_states(), m.num_actions()), tol);
        CHECK(max_abs_diff(hard_backup(m, hrep.q), hrep.q) <= tol);
    }
}

TEST_CASE("property: soft-to-hard limit and uniform-prior sandwich") {
    Rng rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t S = 1 + uniform_index(rng, 5), A = 1 + uniform_index(rng, 6);
        auto q = oracle::random_table(rng, S, A, -50.0, 50.0);
        const auto hard = hard_state_value(q);
        const auto lim = soft_state_value(q, RegularizationSpec::soft_uniform(1e6, S, A));
        const double beta = std::exp(uniform(rng, std::log(1e-3), std::log(1e3)));
        const auto soft = soft_state_value(q, RegularizationSpec::soft_uniform(beta, S, A));
        for (std::size_t s = 0; s < S; ++s) {
            CHECK(std::abs(lim[s] - hard[s]) <= std::log(static_cast<double>(A)) / 1e6 + 1e-9);
            CHECK(soft[s] <= hard[s] + 1e-12);
            CHECK(soft[s] >= hard[s] - std::log(static_cast<double>(A)) / beta - 1e-12);
        }
    }
}

TEST_CASE("property: solve is bitwise deterministic") {
    Rng rng(34);
    auto m = oracle::random_mdp(rng, 8, 4, 0.9, 0.95);
    auto reg = RegularizationSpec::soft_uniform(0.5, m.num_states(), m.num_actions());
    auto a = solve(m, reg);
    auto b = solve(m, reg);
    CHECK(a.q == b.q);
    CHECK(a.iterations == b.iterations);
    CHECK(a.residual == b.residual);
}

TEST_CASE("mdp json round trip is exact") {
    Rng rng(35);
    auto m = oracle::random_mdp(rng, 5, 3, 0.5, 0.99);
    auto back = mdp_from_json(nlohmann::json::parse(mdp_to_string(m)));
    CHECK(back.num_states() == m.num_states());
    CHECK(back.gamma() == m.gamma());
    CHECK(back.reward() == m.reward());
    for (std::size_t i = 0; i < m.transition_tensor().size(); ++i)
        CHECK(back.transition_tensor()[i] == m.transition_tensor()[i]);
    auto chain = chain3(1.0);
    CHECK(mdp_from_json(mdp_to_json(chain)).absorbing() == chain.absorbing());
}
