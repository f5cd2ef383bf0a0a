#include "codac/cde_operators.hpp"
#include "codac/envs.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace codac;

TEST_CASE("pm_reset never starts inside the risky disk")
{
    RiskyPointMass env;
    Rng rng(3);
    for (int k = 0; k < 10000; ++k) {
        const auto s = pm_reset(env, rng);
        REQUIRE_FALSE(env.in_risky_region(s.x, s.y));
        REQUIRE(s.x >= 0.1);
        REQUIRE(s.x <= 0.9);
        REQUIRE(s.y >= 0.1);
        REQUIRE(s.y <= 0.9);
        REQUIRE(s.steps == 0);
    }
}

TEST_CASE("pm_reset is reproducible for a fixed seed")
{
    RiskyPointMass env;
    Rng a(11), b(11);
    for (int k = 0; k < 50; ++k) {
        const auto x = pm_reset(env, a);
        const auto y = pm_reset(env, b);
        CHECK(x.x == y.x);
        CHECK(x.y == y.y);
    }
}

TEST_CASE("pm_step far from the disk pays distance plus step cost only")
{
    RiskyPointMass env;
    Rng rng(1);
    PointMassState s{0.9, 0.1, 0};
    for (int k = 0; k < 1000; ++k) {
        const auto out = pm_step(env, s, 4, rng);
        CHECK(out.reward == doctest::Approx(-std::hypot(0.8, 0.0) - 0.1).epsilon(1e-14));
        CHECK_FALSE(out.violation);
    }
}

TEST_CASE("pm_step clamps to the unit square and moves by the action displacement")
{
    RiskyPointMass env;
    Rng rng(2);
    const auto out = pm_step(env, {0.95, 0.02, 0}, 8, rng); // (+1, +1)
    CHECK(out.state.x == 1.0);
    CHECK(out.state.y == doctest::Approx(0.12));
    const auto left = pm_step(env, {0.05, 0.5, 0}, 0, rng); // (-1, -1)
    CHECK(left.state.x == 0.0);
    CHECK(left.state.y == doctest::Approx(0.4));
    CHECK_THROWS_AS(pm_step(env, {0.5, 0.5, 0}, 9, rng), std::invalid_argument);
}

TEST_CASE("pm_step penalty frequency inside the disk is about 0.1")
{
    RiskyPointMass env;
    Rng rng(5);
    int hits = 0;
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
        const auto out = pm_step(env, {0.5, 0.5, 0}, 4, rng);
        REQUIRE(out.violation);
        if (out.reward < -10.0) {
            ++hits;
        }
    }
    CHECK(std::abs(hits / double(n) - 0.1) <= 0.01);
}

TEST_CASE("pm_step terminates at the goal and at the step limit")
{
    RiskyPointMass env;
    Rng rng(0);
    const auto at_goal = pm_step(env, {0.2, 0.2, 0}, 0, rng);
    CHECK(at_goal.terminal);
    CHECK(at_goal.done);
    const auto timeout = pm_step(env, {0.9, 0.9, 99}, 4, rng);
    CHECK(timeout.done);
    CHECK_FALSE(timeout.terminal);
    const auto running = pm_step(env, {0.9, 0.9, 10}, 4, rng);
    CHECK_FALSE(running.done);
}

TEST_CASE("point mass rewards stay within their bounds along random rollouts")
{
    PointMassEnv env;
    Rng rng(9);
    const double lo = -std::sqrt(2.0) - 0.1 - 50.0;
    std::uniform_int_distribution<int> act(0, 8);
    for (int ep = 0; ep < 50; ++ep) {
        env.reset(rng);
        for (int t = 0; t < 100; ++t) {
            const auto step = env.step(act(rng), rng);
            REQUIRE(step.reward >= lo);
            REQUIRE(step.reward <= -0.1);
            REQUIRE(step.observation.size() == 4u);
            if (step.done) {
                break;
            }
        }
    }
}

TEST_CASE("grid_compile produces a valid MDP with risky two-point rewards")
{
    RiskyGrid spec;
    const auto mdp = grid_compile(spec);
    CHECK(validate_mdp(mdp).empty());
    CHECK(mdp.n_states == 49);
    CHECK(mdp.n_actions == 5);
    for (int row = 0; row < spec.width; ++row) {
        for (int col = 0; col < spec.width; ++col) {
            const int s = spec.state_id(row, col);
            const double base = spec.is_goal(row, col) ? 0.0 : -std::hypot(row, col) / spec.width - 0.1;
            for (int a = 0; a < 5; ++a) {
                if (spec.is_risky(row, col)) {
                    REQUIRE(mdp.reward(s, a).size() == 2u);
                    CHECK(mdp.mean_reward(s, a) == doctest::Approx(base - 5.0));
                } else {
                    REQUIRE(mdp.reward(s, a).size() == 1u);
                    CHECK(mdp.reward(s, a)[0].value == doctest::Approx(base));
                }
            }
        }
    }
    // Goal absorbs.
    for (int a = 0; a < 5; ++a) {
        CHECK(mdp.p(0, a, 0) == 1.0);
    }
    RiskyGrid tiny;
    tiny.width = 2;
    CHECK_THROWS_AS(grid_compile(tiny), std::invalid_argument);
}

TEST_CASE("grid slip spreads 0.05 uniformly over the five moves")
{
    RiskyGrid spec;
    const auto mdp = grid_compile(spec);
    const int s = spec.state_id(3, 0); // left edge, not risky
    // "right" from (3, 0)
    CHECK(mdp.p(s, 3, spec.state_id(3, 1)) == doctest::Approx(0.95 + 0.01));
    CHECK(mdp.p(s, 3, spec.state_id(2, 0)) == doctest::Approx(0.01));
    // left and stay both land on s
    CHECK(mdp.p(s, 3, s) == doctest::Approx(0.02));
}

TEST_CASE("grid shortest-path returns have a lower tail next to the risky block")
{
    RiskyGrid spec;
    const auto mdp = grid_compile(spec);
    const auto pi = grid_shortest_path_policy(spec);
    const int n = 64;
    const auto fp = solve_fixed_point(exact_operator(mdp, pi), initial_ztable(mdp.n_states, 5, n, mdp.v_min(), mdp.v_max()),
                                      1e-8, 100000);
    int checked = 0;
    for (int row = 0; row < spec.width; ++row) {
        for (int col = 0; col < spec.width; ++col) {
            if (spec.is_risky(row, col) || spec.is_goal(row, col)) {
                continue;
            }
            bool adjacent = false;
            for (auto [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
                const int r = row + dr, c = col + dc;
                adjacent |= r >= 0 && r < spec.width && c >= 0 && c < spec.width && spec.is_risky(r, c);
            }
            if (!adjacent) {
                continue;
            }
            const int s = spec.state_id(row, col);
            const int a = static_cast<int>(std::distance(pi.probs.row(s).data(),
                                                         std::max_element(pi.probs.row(s).data(), pi.probs.row(s).data() + 5)));
            const auto q = fp.z.quantile(s, a);
            CHECK(distorted_expectation(q, DistortionSpec::cvar(0.1)) < distorted_expectation(q, DistortionSpec::uniform()));
            ++checked;
        }
    }
    CHECK(checked == 12);
}

TEST_CASE("tabular env counts steps taken from risky states")
{
    RiskyGrid spec;
    spec.slip = 0.0;
    const auto mdp = grid_compile(spec);
    std::vector<bool> risky(49, false);
    risky[static_cast<size_t>(spec.state_id(3, 3))] = true;
    FiniteMDP start = mdp;
    start.initial.assign(49, 0.0);
    start.initial[static_cast<size_t>(spec.state_id(3, 3))] = 1.0;
    TabularEnv env(start, 5, risky);
    Rng rng(0);
    const auto obs = env.reset(rng);
    CHECK(obs == one_hot(spec.state_id(3, 3), 49));
    const auto first = env.step(4, rng); // stay
    CHECK(first.violation);
    const auto second = env.step(0, rng); // up to (2, 3)
    CHECK(second.violation);
    const auto third = env.step(0, rng); // from (2, 3), not in the list
    CHECK_FALSE(third.violation);
    env.step(4, rng);
    CHECK(env.step(4, rng).done); // horizon
}

TEST_CASE("bandit quantiles and validation")
{
    DistBandit bandit{{{{0.0, 0.125}, {0.25, 0.25}, {0.5, 0.25}, {1.0, 0.375}}}};
    bandit.validate();
    CHECK(bandit.quantile(0, 0.05) == 0.0);
    CHECK(bandit.quantile(0, 0.125) == 0.0);
    CHECK(bandit.quantile(0, 0.2) == 0.25);
    CHECK(bandit.quantile(0, 0.5) == 0.5);
    CHECK(bandit.quantile(0, 0.9) == 1.0);
    Rng rng(4);
    int ones = 0;
    for (int k = 0; k < 20000; ++k) {
        ones += bandit.sample(0, rng) == 1.0;
    }
    CHECK(std::abs(ones / 20000.0 - 0.375) < 0.015);

    DistBandit bad{{{{0.0, 0.5}, {1.0, 0.6}}}};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(DistBandit{}.validate(), std::invalid_argument);
}

TEST_CASE("vector datasets round-trip and tabular data converts to one-hot")
{
    OfflineDataset tab;
    tab.transitions = {{0, 1, 0.5, 2, false}, {2, 0, -1.0, 1, true}};
    const auto vec = to_vector_dataset(tab, 3, 2);
    REQUIRE(vec.size() == 2u);
    CHECK(vec.transitions[0].s == one_hot(0, 3));
    CHECK(vec.transitions[0].sn == one_hot(2, 3));
    CHECK(vec.transitions[1].done);

    std::stringstream buf;
    write_vector_dataset(vec, buf);
    const auto back = read_vector_dataset(buf);
    REQUIRE(back.size() == 2u);
    CHECK(back.state_dim == 3);
    CHECK(back.n_actions == 2);
    CHECK(back.transitions[1].r == -1.0);
    CHECK(back.transitions[1].a == 0);
    CHECK(back.transitions[1].sn == one_hot(1, 3));
}
