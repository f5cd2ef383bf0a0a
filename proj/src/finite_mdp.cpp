#include "codac/finite_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace codac {

namespace {

constexpr double kSumTolerance = 1e-12;

std::string sa_location(int s, int a)
{
    std::ostringstream os;
    os << "(s=" << s << ", a=" << a << ")";
    return os.str();
}

} // namespace

FiniteMDP::FiniteMDP(int n_states, int n_actions, double gamma)
    : n_states(n_states), n_actions(n_actions), gamma(gamma)
{
    if (n_states < 1 || n_actions < 1) {
        throw std::invalid_argument("FiniteMDP needs at least one state and one action");
    }
    transition.assign(static_cast<size_t>(n_states) * n_actions * n_states, 0.0);
    rewards.assign(static_cast<size_t>(n_states) * n_actions, RewardDist{});
}

double FiniteMDP::mean_reward(int s, int a) const
{
    double mean = 0.0;
    for (const auto &atom : reward(s, a)) {
        mean += atom.value * atom.prob;
    }
    return mean;
}

void FiniteMDP::fit_reward_range()
{
    r_min = std::numeric_limits<double>::infinity();
    r_max = -std::numeric_limits<double>::infinity();
    for (const auto &dist : rewards) {
        for (const auto &atom : dist) {
            r_min = std::min(r_min, atom.value);
            r_max = std::max(r_max, atom.value);
        }
    }
    if (!std::isfinite(r_min)) {
        r_min = r_max = 0.0;
    }
}

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions)
{
    return {Eigen::MatrixXd::Constant(n_states, n_actions, 1.0 / n_actions)};
}

TabularPolicy TabularPolicy::deterministic(std::span<const int> actions, int n_actions)
{
    TabularPolicy policy{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()), n_actions)};
    for (size_t s = 0; s < actions.size(); ++s) {
        if (actions[s] < 0 || actions[s] >= n_actions) {
            throw std::invalid_argument("deterministic policy action out of range");
        }
        policy.probs(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
    }
    return policy;
}

RewardDist EmpiricalModel::reward_atoms(int s, int a) const
{
    const auto &samples = rewards(s, a);
    std::map<double, int> tally;
    for (double r : samples) {
        ++tally[r];
    }
    RewardDist atoms;
    atoms.reserve(tally.size());
    const double n = static_cast<double>(samples.size());
    for (const auto &[value, count] : tally) {
        atoms.push_back({value, count / n});
    }
    return atoms;
}

std::vector<Violation> validate_mdp(const FiniteMDP &mdp)
{
    std::vector<Violation> out;
    if (!(mdp.gamma > 0.0 && mdp.gamma < 1.0)) {
        out.push_back({"gamma", "gamma out of (0,1)"});
    }
    if (mdp.n_states < 1 || mdp.n_actions < 1) {
        out.push_back({"shape", "empty state or action space"});
        return out;
    }
    const size_t n_pairs = static_cast<size_t>(mdp.n_states) * mdp.n_actions;
    if (mdp.transition.size() != n_pairs * mdp.n_states || mdp.rewards.size() != n_pairs) {
        out.push_back({"shape", "transition or reward tables do not match (n_states, n_actions)"});
        return out;
    }
    if (mdp.r_min > mdp.r_max) {
        out.push_back({"reward range", "r_min exceeds r_max"});
    }
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            double total = 0.0;
            bool negative = false;
            for (double p : mdp.successors(s, a)) {
                total += p;
                negative = negative || p < 0.0;
            }
            if (negative) {
                out.push_back({sa_location(s, a), "negative transition probability"});
            }
            if (std::abs(total - 1.0) > kSumTolerance) {
                std::ostringstream os;
                os << "transition row sums to " << total;
                out.push_back({sa_location(s, a), os.str()});
            }
            const auto &dist = mdp.reward(s, a);
            if (dist.empty()) {
                out.push_back({sa_location(s, a), "empty reward distribution"});
                continue;
            }
            double mass = 0.0;
            for (const auto &atom : dist) {
                mass += atom.prob;
                if (atom.prob < 0.0) {
                    out.push_back({sa_location(s, a), "negative reward probability"});
                }
                if (atom.value < mdp.r_min || atom.value > mdp.r_max) {
                    out.push_back({sa_location(s, a), "reward value outside [r_min, r_max]"});
                }
            }
            if (std::abs(mass - 1.0) > kSumTolerance) {
                std::ostringstream os;
                os << "reward distribution sums to " << mass;
                out.push_back({sa_location(s, a), os.str()});
            }
        }
    }
    if (!mdp.initial.empty()) {
        if (mdp.initial.size() != static_cast<size_t>(mdp.n_states)) {
            out.push_back({"initial", "initial distribution has wrong length"});
        } else {
            double total = 0.0;
            for (double p : mdp.initial) {
                total += p;
            }
            if (std::abs(total - 1.0) > 1e-9) {
                out.push_back({"initial", "initial distribution does not sum to 1"});
            }
        }
    }
    return out;
}

std::vector<Violation> validate_policy(const TabularPolicy &policy)
{
    std::vector<Violation> out;
    for (int s = 0; s < policy.n_states(); ++s) {
        double total = 0.0;
        for (int a = 0; a < policy.n_actions(); ++a) {
            if (policy(s, a) < 0.0) {
                out.push_back({sa_location(s, a), "negative action probability"});
            }
            total += policy(s, a);
        }
        if (std::abs(total - 1.0) > kSumTolerance) {
            out.push_back({"s=" + std::to_string(s), "policy row does not sum to 1"});
        }
    }
    return out;
}

int sample_index(std::span<const double> probs, Rng &rng)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    double cumulative = 0.0;
    int last_positive = -1;
    for (size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) {
            continue;
        }
        cumulative += probs[i];
        last_positive = static_cast<int>(i);
        if (u < cumulative) {
            return last_positive;
        }
    }
    if (last_positive < 0) {
        throw std::invalid_argument("cannot sample from an all-zero distribution");
    }
    return last_positive;
}

namespace {

double sample_reward(const RewardDist &dist, Rng &rng)
{
    std::vector<double> probs(dist.size());
    for (size_t i = 0; i < dist.size(); ++i) {
        probs[i] = dist[i].prob;
    }
    return dist[static_cast<size_t>(sample_index(probs, rng))].value;
}

std::vector<double> policy_row(const TabularPolicy &policy, int s)
{
    std::vector<double> row(static_cast<size_t>(policy.n_actions()));
    for (int a = 0; a < policy.n_actions(); ++a) {
        row[static_cast<size_t>(a)] = policy(s, a);
    }
    return row;
}

} // namespace

std::vector<Transition> rollout(
    const FiniteMDP &mdp, const TabularPolicy &policy, int s0, int horizon, Rng &rng)
{
    if (s0 < 0 || s0 >= mdp.n_states) {
        throw std::invalid_argument("rollout: invalid start state " + std::to_string(s0));
    }
    if (horizon < 1) {
        throw std::invalid_argument("rollout: horizon must be at least 1");
    }
    if (policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions) {
        throw std::invalid_argument("rollout: policy shape does not match MDP");
    }
    std::vector<Transition> trajectory;
    trajectory.reserve(static_cast<size_t>(horizon));
    int s = s0;
    for (int t = 0; t < horizon; ++t) {
        const auto row = policy_row(policy, s);
        const int a = sample_index(row, rng);
        const double r = sample_reward(mdp.reward(s, a), rng);
        const int sn = sample_index(mdp.successors(s, a), rng);
        trajectory.push_back({s, a, r, sn, false});
        s = sn;
    }
    return trajectory;
}

OfflineDataset generate_dataset(
    const FiniteMDP &mdp,
    const TabularPolicy &policy,
    int n_episodes,
    int horizon,
    uint64_t seed,
    const std::string &policy_descriptor)
{
    if (n_episodes < 1) {
        throw std::invalid_argument("generate_dataset: n_episodes must be at least 1");
    }
    Rng rng(seed);
    std::vector<double> start = mdp.initial;
    if (start.empty()) {
        start.assign(static_cast<size_t>(mdp.n_states), 1.0 / mdp.n_states);
    }
    OfflineDataset dataset;
    dataset.transitions.reserve(static_cast<size_t>(n_episodes) * horizon);
    for (int e = 0; e < n_episodes; ++e) {
        const int s0 = sample_index(start, rng);
        auto episode = rollout(mdp, policy, s0, horizon, rng);
        dataset.transitions.insert(dataset.transitions.end(), episode.begin(), episode.end());
    }
    dataset.meta.seed = seed;
    dataset.meta.policy = policy_descriptor;
    dataset.meta.episodes = n_episodes;
    return dataset;
}

TabularPolicy empirical_behavior_policy(const OfflineDataset &dataset, int n_states, int n_actions)
{
    if (dataset.empty()) {
        throw std::invalid_argument("empirical_behavior_policy: empty dataset");
    }
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_actions);
    for (const auto &t : dataset.transitions) {
        if (t.s < 0 || t.s >= n_states || t.a < 0 || t.a >= n_actions) {
            throw std::invalid_argument("empirical_behavior_policy: transition id out of range");
        }
        counts(t.s, t.a) += 1.0;
    }
    TabularPolicy policy{Eigen::MatrixXd::Constant(n_states, n_actions, 1.0 / n_actions)};
    for (int s = 0; s < n_states; ++s) {
        const double total = counts.row(s).sum();
        if (total > 0.0) {
            policy.probs.row(s) = counts.row(s) / total;
        }
    }
    return policy;
}

EmpiricalModel estimate_empirical_model(const OfflineDataset &dataset, int n_states, int n_actions)
{
    if (dataset.empty()) {
        throw std::invalid_argument("estimate_empirical_model: empty dataset");
    }
    EmpiricalModel model;
    model.n_states = n_states;
    model.n_actions = n_actions;
    model.p_hat.assign(static_cast<size_t>(n_states) * n_actions * n_states, 0.0);
    model.reward_samples.assign(static_cast<size_t>(n_states) * n_actions, {});
    model.counts = Eigen::MatrixXi::Zero(n_states, n_actions);
    for (const auto &t : dataset.transitions) {
        if (t.s < 0 || t.s >= n_states || t.a < 0 || t.a >= n_actions || t.sn < 0 || t.sn >= n_states) {
            throw std::invalid_argument("estimate_empirical_model: transition id out of range");
        }
        const size_t sa = static_cast<size_t>(t.s) * n_actions + t.a;
        model.p_hat[sa * n_states + t.sn] += 1.0;
        model.reward_samples[sa].push_back(t.r);
        model.counts(t.s, t.a) += 1;
    }
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            const int n = model.counts(s, a);
            if (n == 0) {
                continue;
            }
            const size_t sa = static_cast<size_t>(s) * n_actions + a;
            for (int sn = 0; sn < n_states; ++sn) {
                model.p_hat[sa * n_states + sn] /= n;
            }
        }
    }
    return model;
}

nlohmann::json mdp_to_json(const FiniteMDP &mdp)
{
    nlohmann::json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["gamma"] = mdp.gamma;
    j["r_min"] = mdp.r_min;
    j["r_max"] = mdp.r_max;
    j["transition"] = mdp.transition;
    auto rewards = nlohmann::json::array();
    for (const auto &dist : mdp.rewards) {
        auto atoms = nlohmann::json::array();
        for (const auto &atom : dist) {
            atoms.push_back({atom.value, atom.prob});
        }
        rewards.push_back(atoms);
    }
    j["rewards"] = rewards;
    if (!mdp.initial.empty()) {
        j["initial"] = mdp.initial;
    }
    return j;
}

FiniteMDP mdp_from_json(const nlohmann::json &j)
{
    FiniteMDP mdp(j.at("n_states").get<int>(), j.at("n_actions").get<int>(), j.at("gamma").get<double>());
    auto transition = j.at("transition").get<std::vector<double>>();
    if (transition.size() != mdp.transition.size()) {
        throw std::invalid_argument("mdp json: transition table has wrong size");
    }
    mdp.transition = std::move(transition);
    const auto &rewards = j.at("rewards");
    if (rewards.size() != mdp.rewards.size()) {
        throw std::invalid_argument("mdp json: reward table has wrong size");
    }
    for (size_t i = 0; i < rewards.size(); ++i) {
        for (const auto &atom : rewards[i]) {
            mdp.rewards[i].push_back({atom.at(0).get<double>(), atom.at(1).get<double>()});
        }
    }
    if (j.contains("r_min") && j.contains("r_max")) {
        mdp.r_min = j.at("r_min").get<double>();
        mdp.r_max = j.at("r_max").get<double>();
    } else {
        mdp.fit_reward_range();
    }
    if (j.contains("initial")) {
        mdp.initial = j.at("initial").get<std::vector<double>>();
    }
    return mdp;
}

void write_dataset(const OfflineDataset &dataset, std::ostream &out)
{
    nlohmann::json meta;
    meta["schema_version"] = 1;
    meta["seed"] = dataset.meta.seed;
    meta["policy"] = dataset.meta.policy;
    meta["env"] = dataset.meta.env;
    meta["episodes"] = dataset.meta.episodes;
    meta["env_descriptor"] = dataset.meta.env_descriptor;
    out << nlohmann::json{{"meta", meta}}.dump() << '\n';
    for (const auto &t : dataset.transitions) {
        nlohmann::json record;
        record["s"] = t.s;
        record["a"] = t.a;
        record["r"] = t.r;
        record["sn"] = t.sn;
        record["done"] = t.done;
        out << record.dump() << '\n';
    }
}

OfflineDataset read_dataset(std::istream &in)
{
    OfflineDataset dataset;
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("dataset: missing metadata line");
    }
    const auto header = nlohmann::json::parse(line);
    if (!header.contains("meta")) {
        throw std::invalid_argument("dataset: first line must be a {\"meta\":...} record");
    }
    const auto &meta = header.at("meta");
    dataset.meta.seed = meta.value("seed", uint64_t{0});
    dataset.meta.policy = meta.value("policy", std::string{});
    dataset.meta.env = meta.value("env", std::string{});
    dataset.meta.episodes = meta.value("episodes", 0);
    dataset.meta.env_descriptor = meta.value("env_descriptor", nlohmann::json::object());
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto record = nlohmann::json::parse(line);
        dataset.transitions.push_back({
            record.at("s").get<int>(),
            record.at("a").get<int>(),
            record.at("r").get<double>(),
            record.at("sn").get<int>(),
            record.at("done").get<bool>(),
        });
    }
    return dataset;
}

} // namespace codac
