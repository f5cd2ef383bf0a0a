#include "codac/envs.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace codac {

bool RiskyPointMass::in_risky_region(double x, double y) const
{
    return std::hypot(x - risky_x, y - risky_y) <= risky_radius;
}

double RiskyPointMass::goal_distance(double x, double y) const
{
    return std::hypot(x - goal_x, y - goal_y);
}

std::array<double, 2> RiskyPointMass::displacement(int action) const
{
    if (action < 0 || action >= n_actions) {
        throw std::invalid_argument("point mass: action id " + std::to_string(action) + " out of range [0, 9)");
    }
    return {((action % 3) - 1) * max_displacement, ((action / 3) - 1) * max_displacement};
}

nlohmann::json RiskyPointMass::descriptor() const
{
    return {
        {"name", "risky-pointmass"},
        {"version", 1},
        {"goal", {goal_x, goal_y}},
        {"risky_center", {risky_x, risky_y}},
        {"risky_radius", risky_radius},
        {"risk_prob", risk_prob},
        {"risk_penalty", risk_penalty},
        {"step_bonus", step_bonus},
        {"max_displacement", max_displacement},
        {"goal_tolerance", goal_tolerance},
        {"max_steps", max_steps},
        {"n_actions", n_actions},
    };
}

std::vector<double> PointMassState::observation(const RiskyPointMass &env) const
{
    return {x, y, env.goal_x, env.goal_y};
}

PointMassState pm_reset(const RiskyPointMass &env, Rng &rng)
{
    std::uniform_real_distribution<double> unif(0.1, 0.9);
    PointMassState state;
    do {
        state.x = unif(rng);
        state.y = unif(rng);
    } while (env.in_risky_region(state.x, state.y));
    return state;
}

PointMassStep pm_step(const RiskyPointMass &env, const PointMassState &state, int action, Rng &rng)
{
    const auto d = env.displacement(action);
    PointMassStep out;
    out.state.x = std::clamp(state.x + d[0], 0.0, 1.0);
    out.state.y = std::clamp(state.y + d[1], 0.0, 1.0);
    out.state.steps = state.steps + 1;
    const double dist = env.goal_distance(out.state.x, out.state.y);
    out.reward = -dist + env.step_bonus;
    out.violation = env.in_risky_region(out.state.x, out.state.y);
    if (out.violation && std::bernoulli_distribution(env.risk_prob)(rng)) {
        out.reward += env.risk_penalty;
    }
    out.terminal = dist < env.goal_tolerance;
    out.done = out.terminal || out.state.steps >= env.max_steps;
    return out;
}

bool RiskyGrid::is_risky(int row, int col) const
{
    const int lo = (width - risky_size) / 2;
    const int hi = lo + risky_size;
    return row >= lo && row < hi && col >= lo && col < hi;
}

nlohmann::json RiskyGrid::descriptor() const
{
    return {
        {"name", "risky-grid"},   {"version", 1},           {"width", width},
        {"risky_size", risky_size}, {"slip", slip},         {"gamma", gamma},
        {"risk_prob", risk_prob}, {"risk_penalty", risk_penalty}, {"step_bonus", step_bonus},
    };
}

FiniteMDP grid_compile(const RiskyGrid &spec)
{
    if (spec.width < 3) {
        throw std::invalid_argument("risky grid: width must be at least 3");
    }
    if (spec.risky_size < 0 || spec.risky_size > spec.width - 2) {
        throw std::invalid_argument("risky grid: risky block must leave a border");
    }
    if (!(spec.slip >= 0.0 && spec.slip <= 1.0) || !(spec.risk_prob >= 0.0 && spec.risk_prob <= 1.0)) {
        throw std::invalid_argument("risky grid: probabilities must lie in [0, 1]");
    }
    static constexpr int kMoves[RiskyGrid::n_actions][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}, {0, 0}};
    const int w = spec.width;
    FiniteMDP mdp(spec.n_states(), RiskyGrid::n_actions, spec.gamma);
    for (int row = 0; row < w; ++row) {
        for (int col = 0; col < w; ++col) {
            const int s = spec.state_id(row, col);
            for (int a = 0; a < RiskyGrid::n_actions; ++a) {
                if (spec.is_goal(row, col)) {
                    mdp.p(s, a, s) = 1.0;
                    mdp.reward(s, a) = {{0.0, 1.0}};
                    continue;
                }
                for (int m = 0; m < RiskyGrid::n_actions; ++m) {
                    const double prob = (m == a ? 1.0 - spec.slip : 0.0) + spec.slip / RiskyGrid::n_actions;
                    if (prob <= 0.0) {
                        continue;
                    }
                    const int nr = std::clamp(row + kMoves[m][0], 0, w - 1);
                    const int nc = std::clamp(col + kMoves[m][1], 0, w - 1);
                    mdp.p(s, a, spec.state_id(nr, nc)) += prob;
                }
                const double base = -std::hypot(row, col) / w + spec.step_bonus;
                if (spec.is_risky(row, col) && spec.risk_prob > 0.0) {
                    mdp.reward(s, a) = {{base + spec.risk_penalty, spec.risk_prob}, {base, 1.0 - spec.risk_prob}};
                } else {
                    mdp.reward(s, a) = {{base, 1.0}};
                }
            }
        }
    }
    mdp.fit_reward_range();
    return mdp;
}

TabularPolicy grid_shortest_path_policy(const RiskyGrid &spec)
{
    std::vector<int> actions(static_cast<size_t>(spec.n_states()));
    for (int row = 0; row < spec.width; ++row) {
        for (int col = 0; col < spec.width; ++col) {
            int a = 4;
            if (row > 0 && row >= col) {
                a = 0;
            } else if (col > 0) {
                a = 2;
            }
            actions[static_cast<size_t>(spec.state_id(row, col))] = a;
        }
    }
    return TabularPolicy::deterministic(actions, RiskyGrid::n_actions);
}

void DistBandit::validate() const
{
    if (arms.empty()) {
        throw std::invalid_argument("bandit: needs at least one arm");
    }
    for (size_t k = 0; k < arms.size(); ++k) {
        if (arms[k].empty()) {
            throw std::invalid_argument("bandit: arm " + std::to_string(k) + " has no atoms");
        }
        double total = 0.0;
        for (const auto &atom : arms[k]) {
            if (atom.prob < 0.0) {
                throw std::invalid_argument("bandit: negative atom probability");
            }
            total += atom.prob;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw std::invalid_argument("bandit: arm " + std::to_string(k) + " probabilities do not sum to 1");
        }
    }
}

double DistBandit::sample(int action, Rng &rng) const
{
    const auto &arm = arms.at(static_cast<size_t>(action));
    std::vector<double> probs;
    probs.reserve(arm.size());
    for (const auto &atom : arm) {
        probs.push_back(atom.prob);
    }
    return arm[static_cast<size_t>(sample_index(probs, rng))].value;
}

double DistBandit::quantile(int action, double tau) const
{
    auto arm = arms.at(static_cast<size_t>(action));
    std::sort(arm.begin(), arm.end(), [](const RewardAtom &x, const RewardAtom &y) { return x.value < y.value; });
    double cumulative = 0.0;
    for (const auto &atom : arm) {
        cumulative += atom.prob;
        if (cumulative >= tau - 1e-12) {
            return atom.value;
        }
    }
    return arm.back().value;
}

nlohmann::json DistBandit::descriptor() const
{
    nlohmann::json arms_json = nlohmann::json::array();
    for (const auto &arm : arms) {
        nlohmann::json atoms = nlohmann::json::array();
        for (const auto &atom : arm) {
            atoms.push_back({atom.value, atom.prob});
        }
        arms_json.push_back(atoms);
    }
    return {{"name", "bandit"}, {"version", 1}, {"arms", arms_json}};
}

std::vector<double> PointMassEnv::reset(Rng &rng)
{
    state_ = pm_reset(env_, rng);
    return state_.observation(env_);
}

EpisodicEnv::Step PointMassEnv::step(int action, Rng &rng)
{
    const auto out = pm_step(env_, state_, action, rng);
    state_ = out.state;
    return {state_.observation(env_), out.reward, out.done, out.terminal, out.violation};
}

BanditEnv::BanditEnv(DistBandit bandit) : bandit_(std::move(bandit))
{
    bandit_.validate();
}

std::vector<double> BanditEnv::reset(Rng &)
{
    return {1.0};
}

EpisodicEnv::Step BanditEnv::step(int action, Rng &rng)
{
    if (action < 0 || action >= bandit_.n_actions()) {
        throw std::invalid_argument("bandit: action id out of range");
    }
    return {{1.0}, bandit_.sample(action, rng), true, true, false};
}

TabularEnv::TabularEnv(FiniteMDP mdp, int horizon, std::vector<bool> risky_states, nlohmann::json descriptor)
    : mdp_(std::move(mdp)), horizon_(horizon), risky_(std::move(risky_states)), descriptor_(std::move(descriptor))
{
    if (horizon_ < 1) {
        throw std::invalid_argument("tabular env: horizon must be positive");
    }
    if (risky_.empty()) {
        risky_.assign(static_cast<size_t>(mdp_.n_states), false);
    }
    if (static_cast<int>(risky_.size()) != mdp_.n_states) {
        throw std::invalid_argument("tabular env: risky-state mask has the wrong length");
    }
}

std::vector<double> TabularEnv::reset(Rng &rng)
{
    std::vector<double> start = mdp_.initial;
    if (start.empty()) {
        start.assign(static_cast<size_t>(mdp_.n_states), 1.0 / mdp_.n_states);
    }
    state_ = sample_index(start, rng);
    steps_ = 0;
    return one_hot(state_, mdp_.n_states);
}

EpisodicEnv::Step TabularEnv::step(int action, Rng &rng)
{
    if (action < 0 || action >= mdp_.n_actions) {
        throw std::invalid_argument("tabular env: action id out of range");
    }
    const auto &reward = mdp_.reward(state_, action);
    std::vector<double> probs;
    for (const auto &atom : reward) {
        probs.push_back(atom.prob);
    }
    const double r = reward[static_cast<size_t>(sample_index(probs, rng))].value;
    const bool violation = risky_[static_cast<size_t>(state_)];
    state_ = sample_index(mdp_.successors(state_, action), rng);
    ++steps_;
    return {one_hot(state_, mdp_.n_states), r, steps_ >= horizon_, false, violation};
}

std::vector<double> one_hot(int index, int size)
{
    if (index < 0 || index >= size) {
        throw std::invalid_argument("one_hot: index out of range");
    }
    std::vector<double> v(static_cast<size_t>(size), 0.0);
    v[static_cast<size_t>(index)] = 1.0;
    return v;
}

VectorDataset to_vector_dataset(const OfflineDataset &dataset, int n_states, int n_actions)
{
    VectorDataset out;
    out.state_dim = n_states;
    out.n_actions = n_actions;
    out.meta = dataset.meta;
    out.transitions.reserve(dataset.size());
    for (const auto &t : dataset.transitions) {
        if (t.a < 0 || t.a >= n_actions) {
            throw std::invalid_argument("to_vector_dataset: action id out of range");
        }
        out.transitions.push_back({one_hot(t.s, n_states), t.a, t.r, one_hot(t.sn, n_states), t.done});
    }
    return out;
}

void write_vector_dataset(const VectorDataset &dataset, std::ostream &out)
{
    nlohmann::json meta;
    meta["schema_version"] = 1;
    meta["seed"] = dataset.meta.seed;
    meta["policy"] = dataset.meta.policy;
    meta["env"] = dataset.meta.env;
    meta["episodes"] = dataset.meta.episodes;
    meta["env_descriptor"] = dataset.meta.env_descriptor;
    meta["state_dim"] = dataset.state_dim;
    meta["n_actions"] = dataset.n_actions;
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

VectorDataset read_vector_dataset(std::istream &in)
{
    VectorDataset dataset;
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
    dataset.state_dim = meta.value("state_dim", 0);
    dataset.n_actions = meta.value("n_actions", 0);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto record = nlohmann::json::parse(line);
        VectorTransition t;
        t.a = record.at("a").get<int>();
        t.r = record.at("r").get<double>();
        t.done = record.at("done").get<bool>();
        // Tabular records carry integer states; expand them to one-hot vectors.
        if (record.at("s").is_number_integer()) {
            if (dataset.state_dim < 1) {
                throw std::invalid_argument("dataset: integer states need state_dim in the metadata");
            }
            t.s = one_hot(record.at("s").get<int>(), dataset.state_dim);
            t.sn = one_hot(record.at("sn").get<int>(), dataset.state_dim);
        } else {
            t.s = record.at("s").get<std::vector<double>>();
            t.sn = record.at("sn").get<std::vector<double>>();
        }
        if (dataset.state_dim == 0) {
            dataset.state_dim = static_cast<int>(t.s.size());
        }
        if (static_cast<int>(t.s.size()) != dataset.state_dim || static_cast<int>(t.sn.size()) != dataset.state_dim) {
            throw std::invalid_argument("dataset: state vector length differs from state_dim");
        }
        dataset.n_actions = std::max(dataset.n_actions, t.a + 1);
        dataset.transitions.push_back(std::move(t));
    }
    return dataset;
}

} // namespace codac
