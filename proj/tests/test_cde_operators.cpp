#include "codac/cde_operators.hpp"
#include "codac/theory_verify.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace codac;

namespace {

ZTable random_table(int S, int A, int n, double lo, double hi, std::mt19937_64 &gen)
{
    ZTable z(S, A, n, lo, hi);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            const auto v = testing::sorted_uniform(n, lo, hi, gen);
            std::copy(v.begin(), v.end(), z.at(s, a).begin());
        }
    }
    return z;
}

EmpiricalModel model_of(const FiniteMDP &mdp, const TabularPolicy &behavior, int episodes, uint64_t seed)
{
    return estimate_empirical_model(generate_dataset(mdp, behavior, episodes, 20, seed), mdp.n_states, mdp.n_actions);
}

} // namespace

TEST_CASE("bellman_q examples")
{
    const auto mdp = testing::one_state_mdp(1.0, 0.5);
    const auto pi = TabularPolicy::uniform(1, 1);
    CHECK(bellman_q(mdp, pi, Eigen::MatrixXd::Zero(1, 1))(0, 0) == 1.0);
    CHECK(solve_q_linear(mdp, pi)(0, 0) == doctest::Approx(2.0));
    CHECK_THROWS_AS(bellman_q(mdp, pi, Eigen::MatrixXd::Zero(2, 1)), std::invalid_argument);
}

TEST_CASE("iterated bellman_q matches the frozen linear-solve oracle")
{
    const auto mdp = testing::oracle_mdp();
    const auto pi = testing::oracle_policy();
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(3, 2);
    for (int k = 0; k < 1000; ++k) {
        q = bellman_q(mdp, pi, q);
    }
    // numpy.linalg.solve of (I - gamma P^pi) q = r (tests/oracles/tabular_oracles.py)
    const double expect[3][2] = {{0.92566308, 0.62270374}, {1.11580748, 0.64891121}, {1.01800146, 0.90463444}};
    const Eigen::MatrixXd lin = solve_q_linear(mdp, pi);
    for (int s = 0; s < 3; ++s) {
        for (int a = 0; a < 2; ++a) {
            CHECK(q(s, a) == doctest::Approx(expect[s][a]).epsilon(1e-7));
            CHECK(std::abs(q(s, a) - lin(s, a)) < 1e-8);
        }
    }
}

TEST_CASE("distributional bellman examples")
{
    const auto mdp = testing::one_state_mdp(1.0, 0.5);
    const auto pi = TabularPolicy::uniform(1, 1);
    const ZTable zero(1, 1, 4, 0.0, 2.0);
    const auto once = distributional_bellman(mdp, pi, zero);
    CHECK(once.values == std::vector<double>(4, 1.0));

    FiniteMDP coin(1, 1, 0.0);
    coin.p(0, 0, 0) = 1.0;
    coin.reward(0, 0) = {{0.0, 0.5}, {1.0, 0.5}};
    coin.fit_reward_range();
    CHECK(distributional_bellman(coin, pi, ZTable(1, 1, 4, 0.0, 1.0)).values == std::vector<double>{0, 0, 1, 1});

    const auto fp = solve_fixed_point(exact_operator(mdp, pi), initial_ztable(1, 1, 8, mdp.v_min(), mdp.v_max()), 1e-9, 1000);
    for (double v : fp.z.values) {
        CHECK(v == doctest::Approx(2.0));
    }
    CHECK(fp.residual < 1e-9);
    CHECK_THROWS_AS(distributional_bellman(mdp, pi, ZTable(2, 1, 4, 0.0, 1.0)), std::invalid_argument);
}

TEST_CASE("empirical operator names the missing pair")
{
    const auto mdp = testing::oracle_mdp();
    OfflineDataset d;
    d.transitions = {{0, 0, 0.0, 1, false}, {1, 1, 1.0, 0, false}};
    const auto model = estimate_empirical_model(d, 3, 2);
    const ZTable z(3, 2, 4, 0.0, 2.0);
    try {
        distributional_bellman(model, 0.5, TabularPolicy::uniform(3, 2), z);
        FAIL("expected a coverage error");
    } catch (const CoverageError &e) {
        CHECK(e.s == 0);
        CHECK(e.a == 1);
    }
}

TEST_CASE("exact fixed point matches frozen Monte Carlo quantiles")
{
    const auto mdp = testing::oracle_mdp();
    const auto pi = testing::oracle_policy();
    const auto fp = solve_fixed_point(exact_operator(mdp, pi), initial_ztable(3, 2, 8, mdp.v_min(), mdp.v_max()), 1e-9, 100000);
    // 10^6 rollouts per (s, a), horizon 31 (tests/oracles/tabular_oracles.py)
    const double mc[3][2][8] = {
        {{0.182059, 0.336037, 0.500022, 0.686431, 1.182008, 1.335058, 1.499681, 1.685914},
         {0.339855, 0.425215, 0.498083, 0.568751, 0.636252, 0.72248, 0.825205, 0.95865}},
        {{0.652131, 0.875429, 0.994214, 1.080302, 1.175119, 1.261962, 1.373434, 1.511328},
         {0.158623, 0.299262, 0.403057, 0.480976, 0.564573, 0.660182, 1.138138, 1.556195}},
        {{0.729774, 0.817304, 0.886489, 0.9564, 1.031197, 1.124386, 1.228708, 1.360806},
         {0.257285, 0.38889, 0.576787, 0.802752, 1.058984, 1.189775, 1.376001, 1.601572}},
    };
    for (int s = 0; s < 3; ++s) {
        for (int a = 0; a < 2; ++a) {
            for (int i = 0; i < 8; ++i) {
                CHECK(std::abs(fp.z.at(s, a)[i] - mc[s][a][i]) < 0.05);
            }
        }
    }
}

TEST_CASE("fixed point of the uniform distortion agrees with Q")
{
    const auto mdp = testing::oracle_mdp();
    const auto pi = testing::oracle_policy();
    const int n = 32;
    const auto fp = solve_fixed_point(exact_operator(mdp, pi), initial_ztable(3, 2, n, mdp.v_min(), mdp.v_max()), 1e-10, 100000);
    const Eigen::MatrixXd q = solve_q_linear(mdp, pi);
    const double tol = 2.0 * (mdp.v_max() - mdp.v_min()) / n;
    for (int s = 0; s < 3; ++s) {
        for (int a = 0; a < 2; ++a) {
            CHECK(std::abs(distorted_expectation(fp.z.at(s, a), DistortionSpec::uniform()) - q(s, a)) <= tol);
        }
    }
}

TEST_CASE("solve_fixed_point reports non-convergence")
{
    const auto mdp = testing::oracle_mdp();
    try {
        solve_fixed_point(exact_operator(mdp, testing::oracle_policy()), initial_ztable(3, 2, 8, 0.0, 2.0), 1e-12, 3);
        FAIL("expected a convergence error");
    } catch (const ConvergenceError &e) {
        CHECK(e.iterations == 3);
        CHECK(e.residual > 0.0);
    }
}

TEST_CASE("trace CSV has the documented header")
{
    const auto mdp = testing::one_state_mdp(1.0, 0.5);
    const auto fp = solve_fixed_point(exact_operator(mdp, TabularPolicy::uniform(1, 1)), initial_ztable(1, 1, 4, 2.0, 2.0), 1e-9, 100);
    std::stringstream ss;
    write_trace_csv(fp.trace, ss);
    std::string header;
    std::getline(ss, header);
    CHECK(header == "iter,residual,wall_ms");
    CHECK(fp.trace.size() == static_cast<size_t>(fp.iterations));
}

TEST_CASE("shift operator")
{
    std::mt19937_64 gen(2);
    const ZTable z = random_table(3, 2, 8, -1, 1, gen);
    CHECK(shift_op(z, Eigen::MatrixXd::Zero(3, 2)).values == z.values);
    const ZTable down = shift_op(z, Eigen::MatrixXd::Ones(3, 2));
    for (size_t i = 0; i < z.values.size(); ++i) {
        CHECK(down.values[i] == doctest::Approx(z.values[i] - 1.0));
    }
    const Eigen::MatrixXd c = Eigen::MatrixXd::Random(3, 2);
    const ZTable back = shift_op(shift_op(z, c), -c);
    for (size_t i = 0; i < z.values.size(); ++i) {
        CHECK(back.values[i] == doctest::Approx(z.values[i]).epsilon(1e-14));
    }
    for (int trial = 0; trial < 20; ++trial) {
        const ZTable a = random_table(3, 2, 8, -1, 1, gen);
        const ZTable b = random_table(3, 2, 8, -1, 1, gen);
        const Eigen::MatrixXd shift = Eigen::MatrixXd::Random(3, 2);
        CHECK(sup_wasserstein(shift_op(a, shift), shift_op(b, shift), 2.0) ==
              doctest::Approx(sup_wasserstein(a, b, 2.0)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(shift_op(z, Eigen::MatrixXd::Zero(2, 2)), std::invalid_argument);
}

TEST_CASE("penalty shift")
{
    Eigen::MatrixXd c0(1, 1);
    c0 << 0.0;
    CHECK(penalty_shift(c0, 5.0, 2.0)(0, 0) == 0.0);
    c0 << 0.5;
    CHECK(penalty_shift(c0, 2.0, 2.0)(0, 0) == doctest::Approx(0.5));
    c0 << 9.0;
    CHECK(penalty_shift(c0, 3.0, 3.0)(0, 0) == doctest::Approx(3.0));
    c0 << -9.0;
    CHECK(penalty_shift(c0, 3.0, 3.0)(0, 0) == doctest::Approx(-3.0));
    CHECK_THROWS_AS(penalty_shift(c0, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("c0 from policies")
{
    TabularPolicy beta, mu;
    beta.probs.resize(1, 2);
    mu.probs.resize(1, 2);
    beta.probs << 0.5, 0.5;
    CHECK(c0_from_policies(beta, beta, false).isZero());
    mu.probs << 0.75, 0.25;
    const auto raw = c0_from_policies(mu, beta, false);
    CHECK(raw(0, 0) == doctest::Approx(0.5));
    CHECK(raw(0, 1) == doctest::Approx(-0.5));
    const auto shifted = c0_from_policies(mu, beta, true);
    CHECK(shifted(0, 0) == doctest::Approx(2.0));
    CHECK(shifted(0, 1) == doctest::Approx(1.0));
    TabularPolicy hole;
    hole.probs.resize(1, 2);
    hole.probs << 1.0, 0.0;
    CHECK_THROWS_AS(c0_from_policies(mu, hole, false), std::invalid_argument);
}

TEST_CASE("concentration bound")
{
    Eigen::MatrixXi counts = Eigen::MatrixXi::Constant(2, 2, 1000);
    const auto d = concentration_delta(counts, 1.0, 0.05, 2, 2);
    // Decimal evaluation at 40 digits (tests/oracles/tabular_oracles.py)
    CHECK(d.delta_sa(0, 0) == doctest::Approx(0.24017329151664163).epsilon(1e-12));
    CHECK(concentration_delta(counts, 2.0, 0.05, 2, 2).delta_sa(1, 1) == doctest::Approx(d.delta_sa(1, 1) / 2.0));
    counts.setConstant(1000000000);
    CHECK(concentration_delta(counts, 1.0, 0.05, 2, 2).delta_sa(0, 1) < 1e-3);
    counts(1, 0) = 0;
    const auto flagged = concentration_delta(counts, 1.0, 0.05, 2, 2);
    CHECK(std::isinf(flagged.delta_sa(1, 0)));
    CHECK_FALSE(flagged.all_finite());
    CHECK(flagged.max_finite() < 1e-3);
}

TEST_CASE("alpha lower bound")
{
    ConcentrationTable zero{Eigen::MatrixXd::Zero(2, 2)};
    CHECK(alpha_lower_bound(zero, Eigen::MatrixXd::Ones(2, 2), 2.0) == 0.0);
    ConcentrationTable one{Eigen::MatrixXd::Constant(1, 1, 0.5)};
    CHECK(alpha_lower_bound(one, Eigen::MatrixXd::Ones(1, 1), 2.0) == doctest::Approx(1.0));

    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        ConcentrationTable t{Eigen::MatrixXd(3, 2)};
        Eigen::MatrixXd c0(3, 2);
        double expect = 0.0;
        const double p = 1.5 + u(gen);
        for (int s = 0; s < 3; ++s) {
            for (int a = 0; a < 2; ++a) {
                t.delta_sa(s, a) = u(gen);
                c0(s, a) = u(gen);
                expect = std::max(expect, p * std::pow(t.delta_sa(s, a), p - 1.0) / c0(s, a));
            }
        }
        CHECK(alpha_lower_bound(t, c0, p) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK_THROWS_AS(alpha_lower_bound(one, Eigen::MatrixXd::Zero(1, 1), 2.0), std::invalid_argument);
}

TEST_CASE("conservative operator is the shifted empirical operator")
{
    const auto mdp = testing::oracle_mdp();
    const auto pi = testing::oracle_policy();
    const auto model = model_of(mdp, TabularPolicy::uniform(3, 2), 50, 4);
    std::mt19937_64 gen(5);
    Eigen::MatrixXd c0(3, 2);
    c0 << 1.0, 2.0, 0.5, 1.5, 3.0, 1.0;
    const Eigen::MatrixXd c = penalty_shift(c0, 0.7, 2.0);
    for (int trial = 0; trial < 5; ++trial) {
        const ZTable z = random_table(3, 2, 16, 0, 2, gen);
        const ZTable lhs = conservative_operator(model, mdp.gamma, pi, c).apply(z);
        const ZTable rhs = shift_op(empirical_operator(model, mdp.gamma, pi).apply(z), c);
        CHECK(lhs.values == rhs.values);
    }
    const ZTable z = random_table(3, 2, 16, 0, 2, gen);
    CHECK(conservative_operator(model, mdp.gamma, pi, Eigen::MatrixXd::Zero(3, 2)).apply(z).values ==
          empirical_operator(model, mdp.gamma, pi).apply(z).values);
}

TEST_CASE("operators preserve monotonicity and contract")
{
    std::mt19937_64 gen(6);
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(100 + trial);
        RandomMdpSpec spec;
        spec.n_states = 2 + trial % 5;
        spec.n_actions = 1 + trial % 3;
        const auto mdp = random_mdp(spec, rng);
        const auto pi = random_policy(spec.n_states, spec.n_actions, rng);
        const auto model = model_of(mdp, TabularPolicy::uniform(spec.n_states, spec.n_actions), 200, trial);
        const int n = 64;
        const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(spec.n_states, spec.n_actions, 0.3);
        bool covered = true;
        for (int s = 0; s < spec.n_states; ++s) {
            for (int a = 0; a < spec.n_actions; ++a) {
                covered = covered && model.visited(s, a);
            }
        }
        std::vector<ZOperator> ops = {exact_operator(mdp, pi)};
        if (covered) {
            ops.push_back(empirical_operator(model, mdp.gamma, pi));
            ops.push_back(conservative_operator(model, mdp.gamma, pi, c));
        }
        const double slack = 2.0 * (mdp.v_max() - mdp.v_min()) / n;
        for (const auto &op : ops) {
            const ZTable a = random_table(spec.n_states, spec.n_actions, n, mdp.v_min(), mdp.v_max(), gen);
            const ZTable b = random_table(spec.n_states, spec.n_actions, n, mdp.v_min(), mdp.v_max(), gen);
            const ZTable ta = op.apply(a);
            const ZTable tb = op.apply(b);
            for (int s = 0; s < spec.n_states; ++s) {
                for (int act = 0; act < spec.n_actions; ++act) {
                    CHECK(std::is_sorted(ta.at(s, act).begin(), ta.at(s, act).end()));
                }
            }
            CHECK(sup_wasserstein(ta, tb, 2.0) <= mdp.gamma * sup_wasserstein(a, b, 2.0) + slack);
        }
    }
}
