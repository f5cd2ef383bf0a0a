#include "codac/theory_verify.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace codac;

namespace {

FiniteMDP deterministic_mdp(int S, int A, double gamma, Rng &rng)
{
    FiniteMDP mdp(S, A, gamma);
    std::uniform_int_distribution<int> next(0, S - 1);
    std::uniform_int_distribution<int> grid(0, 10);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            mdp.p(s, a, next(rng)) = 1.0;
            mdp.reward(s, a) = {{grid(rng) / 10.0, 1.0}};
        }
    }
    mdp.r_min = 0.0;
    mdp.r_max = 1.0;
    return mdp;
}

// Every (s, a) visited `per_pair` times.
OfflineDataset pair_dataset(const FiniteMDP &mdp, int per_pair, Rng &rng)
{
    OfflineDataset d;
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            for (int k = 0; k < per_pair; ++k) {
                const int sn = sample_index(mdp.successors(s, a), rng);
                std::vector<double> probs;
                for (const auto &atom : mdp.reward(s, a)) {
                    probs.push_back(atom.prob);
                }
                d.transitions.push_back({s, a, mdp.reward(s, a)[sample_index(probs, rng)].value, sn, false});
            }
        }
    }
    return d;
}

} // namespace

TEST_CASE("theorem ids round-trip through strings")
{
    for (auto id : {TheoremId::contraction, TheoremId::lower_bound, TheoremId::distorted_lower_bound,
                    TheoremId::gap_expansion, TheoremId::distorted_gap_expansion,
                    TheoremId::empirical_fixed_point_bound}) {
        CHECK(theorem_from_string(to_string(id)) == id);
    }
    CHECK_THROWS_AS(theorem_from_string("nope"), std::invalid_argument);
    CHECK(is_probabilistic(TheoremId::lower_bound));
    CHECK_FALSE(is_probabilistic(TheoremId::contraction));
}

TEST_CASE("report bookkeeping")
{
    TheoremReport r;
    r.theorem_id = TheoremId::lower_bound;
    r.add_trial(0.5, true);
    r.add_trial(-0.1, false);
    CHECK(r.trials == 2);
    CHECK(r.passes == 1);
    CHECK(r.worst_margin == -0.1);
    CHECK(r.required_pass_rate() == doctest::Approx(0.92));
    CHECK_FALSE(r.passed());
    CHECK_THROWS(r.add_trial(std::nan(""), true));

    const auto j = report_to_json(r);
    for (const char *key : {"schema_version", "theorem_id", "trials", "passes", "worst_margin", "config", "seed",
                            "margins", "pass_rate", "passed"}) {
        CHECK(j.contains(key));
    }
    CHECK(j.at("margins").size() == 2);
    CHECK(projection_slack(0.0, 10.0, 32) == doctest::Approx(0.625));
}

TEST_CASE("random generators produce valid objects")
{
    Rng rng(1);
    for (int t = 0; t < 30; ++t) {
        RandomMdpSpec spec;
        spec.n_states = 1 + t % 7;
        spec.n_actions = 1 + t % 4;
        const auto mdp = random_mdp(spec, rng);
        CHECK(validate_mdp(mdp).empty());
        for (int s = 0; s < spec.n_states; ++s) {
            for (int a = 0; a < spec.n_actions; ++a) {
                CHECK(mdp.reward(s, a).size() <= 3);
            }
        }
        CHECK(validate_policy(random_policy(spec.n_states, spec.n_actions, rng, 0.3)).empty());
        const auto w = dirichlet(5, 1.0, rng);
        double total = 0.0;
        for (double x : w) {
            CHECK(x >= 0.0);
            total += x;
        }
        CHECK(total == doctest::Approx(1.0));
    }
}

TEST_CASE("contraction with gamma 0 collapses distances")
{
    Rng rng(2);
    RandomMdpSpec spec;
    spec.gamma = 0.0;
    const auto mdp = random_mdp(spec, rng);
    // v_min = v_max range is [0, 1] here; the pushforward ignores Z entirely.
    const auto r = check_contraction(mdp, random_policy(4, 3, rng), 2.0, 20, rng, 64);
    CHECK(r.trials + r.skipped == 20);
    for (double m : r.margins) {
        CHECK(m <= 1e-12);
    }
    CHECK(r.passed());
}

TEST_CASE("identical tables are skipped as degenerate")
{
    Rng rng(3);
    const auto mdp = testing::one_state_mdp(1.0, 0.5);
    // v_min == v_max forces every random table to the same constant.
    const auto r = check_contraction(mdp, TabularPolicy::uniform(1, 1), 1.0, 5, rng, 8);
    CHECK(r.skipped == 5);
    CHECK(r.trials == 0);
}

TEST_CASE("contraction on a random five-state MDP")
{
    Rng rng(4);
    RandomMdpSpec spec;
    spec.n_states = 5;
    const auto mdp = random_mdp(spec, rng);
    const auto r = check_contraction(mdp, random_policy(5, 3, rng), 2.0, 100, rng, 64);
    CHECK(r.trials == 100);
    CHECK(r.passed());
    for (double m : r.margins) {
        CHECK(m + mdp.gamma <= 0.92);
    }
}

TEST_CASE("lower bound holds with a dominating penalty")
{
    Rng rng(5);
    RandomMdpSpec spec;
    const auto mdp = random_mdp(spec, rng);
    const auto pi = random_policy(4, 3, rng);
    const auto d = pair_dataset(mdp, 30, rng);
    CdeConfig cfg;
    cfg.alpha = 1000.0;
    const auto r = check_quantile_lower_bound(mdp, d, pi, cfg);
    CHECK(r.passed());
    CHECK(r.worst_margin > 1.0);
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(check_quantile_lower_bound(mdp, d, pi, cfg), std::invalid_argument);
}

TEST_CASE("zero penalty on the exact model reproduces the oracle")
{
    const auto mdp = testing::oracle_mdp();
    const auto problem = make_exact_problem(mdp, testing::oracle_policy(), Eigen::MatrixXi::Constant(3, 2, 10));
    CdeConfig cfg;
    cfg.c0_mode = C0Mode::constant;
    cfg.c0_constant = 0.0;
    cfg.alpha = 5.0;
    const auto mu = TabularPolicy::uniform(3, 2);
    const auto r = check_lower_bounds(problem, cfg, mu, {DistortionSpec::uniform(), DistortionSpec::cvar(1.0)});
    const double tol = projection_slack(mdp.v_min(), mdp.v_max(), cfg.n_quantiles);
    CHECK(r.quantile.worst_margin == doctest::Approx(tol).epsilon(1e-9));
    CHECK(r.distorted.worst_margin == doctest::Approx(tol).epsilon(1e-9));
}

TEST_CASE("lower-bound margins grow with alpha")
{
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(100 + seed);
        RandomMdpSpec spec;
        const auto mdp = random_mdp(spec, rng);
        const auto pi = random_policy(4, 3, rng);
        const auto problem = make_problem(mdp, pair_dataset(mdp, 20, rng), pi);
        const auto mu = TabularPolicy::uniform(4, 3);
        CdeConfig cfg;
        cfg.alpha = certified_alpha(problem, cfg, mu);
        const double m1 = check_lower_bounds(problem, cfg, mu, {}).quantile.worst_margin;
        cfg.alpha *= 2.0;
        const double m2 = check_lower_bounds(problem, cfg, mu, {}).quantile.worst_margin;
        CHECK(m2 >= m1 - 1e-9);
    }
}

TEST_CASE("certified alpha shrinks with more data")
{
    Rng rng(6);
    RandomMdpSpec spec;
    const auto mdp = random_mdp(spec, rng);
    const auto pi = random_policy(4, 3, rng);
    const auto mu = TabularPolicy::uniform(4, 3);
    CdeConfig cfg;
    double prev = std::numeric_limits<double>::infinity();
    for (int per_pair : {10, 100, 1000}) {
        const double a = certified_alpha(make_problem(mdp, pair_dataset(mdp, per_pair, rng), pi), cfg, mu);
        CHECK(a < prev);
        prev = a;
    }
}

TEST_CASE("distorted lower bound follows the quantile bound")
{
    Rng rng(7);
    RandomMdpSpec spec;
    const auto mdp = random_mdp(spec, rng);
    const auto pi = random_policy(4, 3, rng);
    const auto d = pair_dataset(mdp, 200, rng);
    const auto problem = make_problem(mdp, d, pi);
    const auto mu = TabularPolicy::uniform(4, 3);
    CdeConfig cfg;
    cfg.alpha = certified_alpha(problem, cfg, mu);
    const auto r = check_lower_bounds(problem, cfg, mu, {DistortionSpec::uniform(), DistortionSpec::cvar(0.1)});
    const double tol = projection_slack(mdp.v_min(), mdp.v_max(), cfg.n_quantiles);
    if (r.quantile.passed()) {
        CHECK(r.distorted.worst_margin >= -tol);
    }
    const auto uni = check_lower_bounds(problem, cfg, mu, {DistortionSpec::uniform()});
    const auto cv1 = check_lower_bounds(problem, cfg, mu, {DistortionSpec::cvar(1.0)});
    CHECK(uni.distorted.worst_margin == cv1.distorted.worst_margin);
}

TEST_CASE("gap expansion preconditions and degenerate case")
{
    const auto mdp = testing::oracle_mdp();
    Eigen::MatrixXi counts(3, 2);
    counts << 30, 10, 10, 30, 20, 5;
    const auto problem = make_exact_problem(mdp, testing::oracle_policy(), counts);
    const auto mu = TabularPolicy::uniform(3, 2);
    CdeConfig cfg;
    cfg.alpha = 0.0;
    const auto r = check_gap_expansion(problem, mu, cfg, {DistortionSpec::uniform()});
    const double tol = projection_slack(mdp.v_min(), mdp.v_max(), cfg.n_quantiles);
    CHECK(r.quantile.worst_margin == doctest::Approx(tol).epsilon(1e-9));

    CHECK_THROWS_AS(check_gap_expansion(problem, problem.behavior, cfg, {}), std::invalid_argument);
    cfg.p = 3.0;
    CHECK_THROWS_AS(check_gap_expansion(problem, mu, cfg, {}), std::invalid_argument);
}

TEST_CASE("empirical bound is tight on deterministic MDPs")
{
    Rng rng(8);
    const auto mdp = deterministic_mdp(4, 2, 0.9, rng);
    CHECK(validate_mdp(mdp).empty());
    const auto problem = make_problem(mdp, pair_dataset(mdp, 3, rng), TabularPolicy::uniform(4, 2));
    CdeConfig cfg;
    const auto r = check_empirical_fixed_point_bound(problem, cfg);
    const auto delta = concentration_delta(problem.counts, 1.0, 0.05, 4, 2);
    const double bound = delta.max_finite() / (1.0 - mdp.gamma) + projection_slack(mdp.v_min(), mdp.v_max(), 32);
    // Identical models give identical fixed points, so the margin is the whole bound.
    CHECK(r.worst_margin == doctest::Approx(bound).epsilon(1e-9));

    OfflineDataset partial;
    partial.transitions = {{0, 0, 0.0, 0, false}};
    CHECK_THROWS(check_empirical_fixed_point_bound(mdp, partial, TabularPolicy::uniform(4, 2), cfg));
}

TEST_CASE("suites are reproducible")
{
    SuiteConfig cfg;
    cfg.trials = 3;
    cfg.seed = 11;
    const auto a = report_to_json(run_suite(TheoremId::empirical_fixed_point_bound, cfg));
    const auto b = report_to_json(run_suite(TheoremId::empirical_fixed_point_bound, cfg));
    CHECK(a.dump() == b.dump());
    cfg.trials = 2;
    const auto c = run_contraction_suite(cfg);
    REQUIRE(c.size() == 3);
    for (const auto &r : c) {
        CHECK(r.trials == 2);
    }
}
