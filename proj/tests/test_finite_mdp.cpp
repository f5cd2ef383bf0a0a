#include "codac/finite_mdp.hpp"
#include "codac/theory_verify.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace codac;

namespace {

OfflineDataset make_dataset(std::vector<Transition> ts)
{
    OfflineDataset d;
    d.transitions = std::move(ts);
    return d;
}

FiniteMDP two_state_cycle()
{
    FiniteMDP mdp(2, 1, 0.9);
    mdp.p(0, 0, 1) = 1.0;
    mdp.p(1, 0, 0) = 1.0;
    mdp.reward(0, 0) = {{0.0, 1.0}};
    mdp.reward(1, 0) = {{1.0, 1.0}};
    mdp.fit_reward_range();
    return mdp;
}

} // namespace

TEST_CASE("rollout on a one-state chain repeats its reward")
{
    const auto mdp = testing::one_state_mdp(1.0, 0.5);
    Rng rng(1);
    const auto traj = rollout(mdp, TabularPolicy::uniform(1, 1), 0, 3, rng);
    REQUIRE(traj.size() == 3);
    for (const auto &t : traj) {
        CHECK(t.r == 1.0);
        CHECK(t.s == 0);
        CHECK_FALSE(t.done);
    }
}

TEST_CASE("rollout follows forced transitions")
{
    const auto mdp = two_state_cycle();
    const int actions[] = {0, 0};
    Rng rng(2);
    const auto traj = rollout(mdp, TabularPolicy::deterministic(actions, 1), 0, 2, rng);
    REQUIRE(traj.size() == 2);
    CHECK(traj[0].s == 0);
    CHECK(traj[1].s == 1);
    CHECK(traj[0].sn == 1);
}

TEST_CASE("rollout is deterministic per seed and rejects bad input")
{
    const auto mdp = testing::oracle_mdp();
    const auto pi = testing::oracle_policy();
    Rng a(7), b(7);
    const auto ta = rollout(mdp, pi, 1, 50, a);
    const auto tb = rollout(mdp, pi, 1, 50, b);
    REQUIRE(ta.size() == tb.size());
    for (size_t i = 0; i < ta.size(); ++i) {
        CHECK(ta[i].s == tb[i].s);
        CHECK(ta[i].a == tb[i].a);
        CHECK(ta[i].r == tb[i].r);
    }
    Rng rng(0);
    CHECK_THROWS_AS(rollout(mdp, pi, 3, 5, rng), std::invalid_argument);
    CHECK_THROWS_AS(rollout(mdp, pi, -1, 5, rng), std::invalid_argument);
    CHECK_THROWS_AS(rollout(mdp, pi, 0, 0, rng), std::invalid_argument);
}

TEST_CASE("rollout rewards stay in the reward support")
{
    const auto mdp = testing::oracle_mdp();
    Rng rng(11);
    const auto traj = rollout(mdp, testing::oracle_policy(), 0, 2000, rng);
    for (const auto &t : traj) {
        bool found = false;
        for (const auto &atom : mdp.reward(t.s, t.a)) {
            found = found || atom.value == t.r;
        }
        CHECK(found);
    }
}

TEST_CASE("generate_dataset concatenates episodes and records its seed")
{
    const auto mdp = testing::one_state_mdp(1.0, 0.5);
    const auto d = generate_dataset(mdp, TabularPolicy::uniform(1, 1), 2, 3, 42, "uniform");
    CHECK(d.size() == 6);
    CHECK(d.meta.seed == 42);
    CHECK(d.meta.policy == "uniform");
    CHECK(d.meta.episodes == 2);
    CHECK_THROWS_AS(generate_dataset(mdp, TabularPolicy::uniform(1, 1), 0, 3, 1), std::invalid_argument);
}

TEST_CASE("different seeds give different datasets on a stochastic MDP")
{
    const auto mdp = testing::oracle_mdp();
    const auto pi = testing::oracle_policy();
    const auto a = generate_dataset(mdp, pi, 5, 20, 1);
    const auto b = generate_dataset(mdp, pi, 5, 20, 2);
    const auto c = generate_dataset(mdp, pi, 5, 20, 1);
    bool differ = false;
    for (size_t i = 0; i < a.size(); ++i) {
        differ = differ || a.transitions[i].s != b.transitions[i].s || a.transitions[i].r != b.transitions[i].r;
        CHECK(a.transitions[i].s == c.transitions[i].s);
    }
    CHECK(differ);
}

TEST_CASE("empirical behavior policy counts actions")
{
    const auto d = make_dataset({{0, 0, 0.0, 0, false}, {0, 0, 0.0, 0, false}, {0, 1, 0.0, 0, false}});
    const auto pi = empirical_behavior_policy(d, 2, 2);
    CHECK(pi(0, 0) == doctest::Approx(2.0 / 3.0));
    CHECK(pi(0, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(pi(1, 0) == 0.5);
    CHECK(pi(1, 1) == 0.5);

    const auto single = empirical_behavior_policy(make_dataset({{0, 1, 0.0, 0, false}}), 1, 2);
    CHECK(single(0, 0) == 0.0);
    CHECK(single(0, 1) == 1.0);

    CHECK_THROWS_AS(empirical_behavior_policy(OfflineDataset{}, 2, 2), std::invalid_argument);
}

TEST_CASE("behavior policy rows are distributions for random datasets")
{
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int S = 1 + static_cast<int>(gen() % 6);
        const int A = 1 + static_cast<int>(gen() % 4);
        std::vector<Transition> ts;
        const int n = 1 + static_cast<int>(gen() % 40);
        for (int i = 0; i < n; ++i) {
            ts.push_back({static_cast<int>(gen() % S), static_cast<int>(gen() % A), 0.0, static_cast<int>(gen() % S), false});
        }
        const auto pi = empirical_behavior_policy(make_dataset(ts), S, A);
        CHECK(validate_policy(pi).empty());
        for (int s = 0; s < S; ++s) {
            CHECK(std::abs(pi.probs.row(s).sum() - 1.0) < 1e-12);
            CHECK(pi.probs.row(s).minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("empirical model normalizes transition counts")
{
    const auto same = estimate_empirical_model(make_dataset({{0, 0, 0.5, 1, false}, {0, 0, 0.5, 1, false}}), 2, 1);
    CHECK(same.p(0, 0, 1) == 1.0);
    CHECK(same.p(0, 0, 0) == 0.0);
    CHECK(same.counts(0, 0) == 2);
    CHECK_FALSE(same.visited(1, 0));
    CHECK(same.rewards(0, 0).size() == 2);

    const auto split = estimate_empirical_model(make_dataset({{0, 0, 0.0, 0, false}, {0, 0, 1.0, 1, false}}), 2, 1);
    CHECK(split.p(0, 0, 0) == 0.5);
    CHECK(split.p(0, 0, 1) == 0.5);
    CHECK(split.counts(0, 0) == 2);
    const auto atoms = split.reward_atoms(0, 0);
    REQUIRE(atoms.size() == 2);
    CHECK(atoms[0].prob == 0.5);

    CHECK_THROWS_AS(estimate_empirical_model(OfflineDataset{}, 1, 1), std::invalid_argument);
}

TEST_CASE("empirical transition error shrinks with more data")
{
    const auto mdp = testing::oracle_mdp();
    const auto pi = TabularPolicy::uniform(3, 2);
    double err[3] = {0.0, 0.0, 0.0};
    const int sizes[3] = {10, 100, 1000};
    for (uint64_t seed = 0; seed < 20; ++seed) {
        for (int k = 0; k < 3; ++k) {
            const auto d = generate_dataset(mdp, pi, sizes[k], 10, seed);
            const auto m = estimate_empirical_model(d, 3, 2);
            double worst = 0.0;
            for (int s = 0; s < 3; ++s) {
                for (int a = 0; a < 2; ++a) {
                    for (int t = 0; t < 3; ++t) {
                        const double phat = m.visited(s, a) ? m.p(s, a, t) : 0.0;
                        worst = std::max(worst, std::abs(phat - mdp.p(s, a, t)));
                    }
                }
            }
            err[k] += worst / 20.0;
        }
    }
    CHECK(err[1] < err[0]);
    CHECK(err[2] < err[1]);
}

TEST_CASE("validate_mdp reports locations")
{
    CHECK(validate_mdp(testing::oracle_mdp()).empty());

    auto bad_row = testing::oracle_mdp();
    bad_row.p(1, 0, 2) -= 0.1;
    const auto v = validate_mdp(bad_row);
    REQUIRE(v.size() == 1);
    CHECK(v[0].location.find("s=1") != std::string::npos);
    CHECK(v[0].location.find("a=0") != std::string::npos);

    auto bad_gamma = testing::oracle_mdp();
    bad_gamma.gamma = 1.0;
    const auto g = validate_mdp(bad_gamma);
    REQUIRE_FALSE(g.empty());
    CHECK(g[0].message == "gamma out of (0,1)");

    auto bad_reward = testing::oracle_mdp();
    bad_reward.reward(0, 0)[0].prob = 0.4;
    CHECK_FALSE(validate_mdp(bad_reward).empty());
}

TEST_CASE("return range follows the reward range")
{
    const auto mdp = testing::oracle_mdp();
    CHECK(mdp.v_min() == 0.0);
    CHECK(mdp.v_max() == doctest::Approx(2.0));
    auto chain = testing::one_state_mdp(-1.0, 0.75);
    CHECK(chain.v_min() == doctest::Approx(-4.0));
    CHECK(chain.v_max() == doctest::Approx(-4.0));
}

TEST_CASE("MDP and dataset serialization round-trip")
{
    const auto mdp = testing::oracle_mdp();
    const auto back = mdp_from_json(mdp_to_json(mdp));
    CHECK(back.n_states == 3);
    CHECK(back.transition == mdp.transition);
    CHECK(back.gamma == mdp.gamma);
    CHECK(back.r_max == mdp.r_max);

    const auto d = generate_dataset(mdp, testing::oracle_policy(), 3, 7, 9, "oracle");
    std::stringstream ss;
    write_dataset(d, ss);
    std::string first;
    std::getline(ss, first);
    CHECK(first.rfind("{\"meta\":", 0) == 0);
    std::string record;
    std::getline(ss, record);
    const auto j = nlohmann::json::parse(record);
    for (const char *key : {"s", "a", "r", "sn", "done"}) {
        CHECK(j.contains(key));
    }
    ss.clear();
    ss.seekg(0);
    const auto r = read_dataset(ss);
    REQUIRE(r.size() == d.size());
    CHECK(r.meta.seed == 9);
    CHECK(r.meta.policy == "oracle");
    for (size_t i = 0; i < d.size(); ++i) {
        CHECK(r.transitions[i].s == d.transitions[i].s);
        CHECK(r.transitions[i].r == d.transitions[i].r);
    }
}
