#include "codac/cli.hpp"

#include "codac/envs.hpp"
#include "codac/theory_verify.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>

#ifndef CODAC_VERSION
#define CODAC_VERSION "0.1.0"
#endif

namespace codac {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string trim(const std::string &s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string &key, const std::string &v)
{
    size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used == 0 || used != v.size()) {
        throw UsageError(key + ": expected a number, got '" + v + "'");
    }
    return x;
}

long to_long(const std::string &key, const std::string &v)
{
    size_t used = 0;
    long x = 0;
    try {
        x = std::stol(v, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used == 0 || used != v.size()) {
        throw UsageError(key + ": expected an integer, got '" + v + "'");
    }
    return x;
}

uint64_t to_u64(const std::string &key, const std::string &v)
{
    size_t used = 0;
    uint64_t x = 0;
    try {
        x = std::stoull(v, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used == 0 || used != v.size() || v.front() == '-') {
        throw UsageError(key + ": expected a nonnegative integer, got '" + v + "'");
    }
    return x;
}

// Removes and returns config[key], if present.
std::optional<std::string> take(FlatConfig &config, const std::string &key)
{
    auto it = config.find(key);
    if (it == config.end()) {
        return std::nullopt;
    }
    std::string v = it->second;
    config.erase(it);
    return v;
}

std::string take_or(FlatConfig &config, const std::string &key, const std::string &fallback)
{
    return take(config, key).value_or(fallback);
}

std::string require(FlatConfig &config, const std::string &key)
{
    auto v = take(config, key);
    if (!v || v->empty()) {
        throw UsageError("missing required --" + key);
    }
    return *v;
}

void reject_leftovers(const FlatConfig &config, const std::string &command)
{
    if (!config.empty()) {
        throw UsageError(command + ": unknown config key '" + config.begin()->first + "'");
    }
}

std::ofstream open_out(const std::string &path, bool binary = false)
{
    const fs::path p(path);
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    return out;
}

std::ifstream open_in(const std::string &path, bool binary = false)
{
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) {
        throw std::runtime_error("cannot read " + path);
    }
    return in;
}

nlohmann::json read_json_file(const std::string &path)
{
    auto in = open_in(path);
    return nlohmann::json::parse(in);
}

nlohmann::json first_line_json(const std::string &path)
{
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error(path + ": empty file");
    }
    return nlohmann::json::parse(line);
}

std::string sibling(const std::string &path, const std::string &suffix)
{
    fs::path p(path);
    p.replace_extension();
    return p.string() + suffix;
}

void write_manifest(const RunManifest &manifest, const std::string &primary_output)
{
    auto out = open_out(manifest_path(primary_output));
    out << manifest_to_json(manifest).dump(2) << '\n';
}

// Default bandit: one arm whose CDF jumps fall between quantile midpoints.
DistBandit default_bandit()
{
    return DistBandit{{{{0.0, 0.125}, {0.25, 0.25}, {0.5, 0.25}, {1.0, 0.375}}}};
}

struct TabularSource {
    FiniteMDP mdp;
    nlohmann::json descriptor;
    std::vector<bool> risky;
};

FiniteMDP load_mdp(const std::string &path)
{
    FiniteMDP mdp = mdp_from_json(read_json_file(path));
    const auto problems = validate_mdp(mdp);
    if (!problems.empty()) {
        throw std::runtime_error(path + ": invalid MDP at " + problems.front().location + ": " + problems.front().message);
    }
    return mdp;
}

// Tabular environments by name. `random` draws an MDP from the seed.
std::optional<TabularSource> tabular_source(
    const std::string &env, const std::optional<std::string> &mdp_path, FlatConfig &config, uint64_t seed)
{
    if (mdp_path) {
        TabularSource src{load_mdp(*mdp_path), {{"name", "file"}, {"path", *mdp_path}}, {}};
        return src;
    }
    if (env == "risky-grid") {
        RiskyGrid grid;
        if (auto w = take(config, "width")) {
            grid.width = static_cast<int>(to_long("width", *w));
        }
        if (grid.width < 3 || grid.width < grid.risky_size) {
            throw UsageError("risky-grid: width must be at least 3");
        }
        TabularSource src{grid_compile(grid), grid.descriptor(), std::vector<bool>(grid.n_states(), false)};
        for (int r = 0; r < grid.width; ++r) {
            for (int c = 0; c < grid.width; ++c) {
                src.risky[grid.state_id(r, c)] = grid.is_risky(r, c);
            }
        }
        return src;
    }
    if (env == "random") {
        RandomMdpSpec spec;
        spec.n_states = static_cast<int>(to_long("states", take_or(config, "states", "5")));
        spec.n_actions = static_cast<int>(to_long("actions", take_or(config, "actions", "3")));
        spec.gamma = to_double("gamma", take_or(config, "gamma", "0.9"));
        if (spec.n_states < 1 || spec.n_actions < 1 || !(spec.gamma >= 0.0 && spec.gamma < 1.0)) {
            throw UsageError("random: need states >= 1, actions >= 1, gamma in [0, 1)");
        }
        std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), 17u};
        Rng rng(seq);
        TabularSource src{random_mdp(spec, rng), {{"name", "random"}, {"seed", seed}}, {}};
        return src;
    }
    return std::nullopt;
}

void check_env_name(const std::string &env)
{
    static const std::vector<std::string> known = {"risky-grid", "random", "risky-pointmass", "bandit"};
    if (std::find(known.begin(), known.end(), env) == known.end()) {
        throw UsageError("unknown env '" + env + "' (expected risky-grid, random, risky-pointmass, bandit)");
    }
}

TabularPolicy tabular_policy(const std::string &name, const TabularSource &src, const std::string &env, uint64_t seed)
{
    const int S = src.mdp.n_states;
    const int A = src.mdp.n_actions;
    if (name == "uniform") {
        return TabularPolicy::uniform(S, A);
    }
    if (name == "random") {
        std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), 23u};
        Rng rng(seq);
        return random_policy(S, A, rng, 0.2);
    }
    if ((name == "shortest-path" || name == "mixed") && env == "risky-grid") {
        RiskyGrid grid;
        grid.width = static_cast<int>(std::lround(std::sqrt(S)));
        TabularPolicy p = grid_shortest_path_policy(grid);
        if (name == "mixed") {
            p.probs = 0.5 * p.probs + 0.5 * TabularPolicy::uniform(S, A).probs;
        }
        return p;
    }
    throw UsageError("unknown policy '" + name + "' for env " + env);
}

int cmd_gen_data(FlatConfig config, const std::string &config_path, std::ostream &out)
{
    const auto t0 = std::chrono::steady_clock::now();
    const std::string env = require(config, "env");
    const std::string path = require(config, "out");
    const auto mdp_path = take(config, "mdp");
    if (!mdp_path) {
        check_env_name(env);
    }
    const uint64_t seed = to_u64("seed", take_or(config, "seed", "0"));
    const int episodes = static_cast<int>(to_long("episodes", take_or(config, "episodes", "100")));
    const int horizon = static_cast<int>(to_long("horizon", take_or(config, "horizon", "50")));
    if (episodes < 1 || horizon < 1) {
        throw UsageError("gen-data: episodes and horizon must be at least 1");
    }
    RunManifest manifest{"gen-data", config_path, seed, {}, {path}, artifact_version(), 0.0};
    if (mdp_path) {
        manifest.inputs.push_back(*mdp_path);
    }
    size_t written = 0;

    if (auto src = tabular_source(env, mdp_path, config, seed)) {
        const std::string policy_name = take_or(config, "policy", "uniform");
        reject_leftovers(config, "gen-data");
        const TabularPolicy policy = tabular_policy(policy_name, *src, env, seed);
        OfflineDataset dataset = generate_dataset(src->mdp, policy, episodes, horizon, seed, policy_name);
        dataset.meta.env = mdp_path ? "file" : env;
        dataset.meta.env_descriptor = src->descriptor;
        dataset.meta.env_descriptor["mdp"] = mdp_to_json(src->mdp);
        auto f = open_out(path);
        write_dataset(dataset, f);
        written = dataset.size();
    } else if (env == "risky-pointmass") {
        const std::string policy_name = take_or(config, "policy", "online");
        OnlineCollectConfig collect;
        collect.episodes = episodes;
        collect.epsilon = to_double("epsilon", take_or(config, "epsilon", "0.3"));
        TrainerConfig trainer;
        apply_trainer_keys(config, trainer);
        reject_leftovers(config, "gen-data");
        trainer.seed = seed;
        PointMassEnv pm;
        VectorDataset dataset;
        if (policy_name == "online") {
            dataset = collect_replay_buffer(pm, trainer, collect);
        } else if (policy_name == "uniform") {
            std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), 29u};
            Rng rng(seq);
            std::uniform_int_distribution<int> pick(0, pm.n_actions() - 1);
            dataset.state_dim = pm.state_dim();
            dataset.n_actions = pm.n_actions();
            for (int e = 0; e < episodes; ++e) {
                auto obs = pm.reset(rng);
                for (bool done = false; !done;) {
                    const int a = pick(rng);
                    auto step = pm.step(a, rng);
                    dataset.transitions.push_back({obs, a, step.reward, step.observation, step.terminal});
                    done = step.done;
                    obs = std::move(step.observation);
                }
            }
            dataset.meta.env_descriptor = pm.descriptor();
        } else {
            throw UsageError("unknown policy '" + policy_name + "' for env risky-pointmass");
        }
        dataset.meta.seed = seed;
        dataset.meta.env = env;
        dataset.meta.policy = policy_name;
        dataset.meta.episodes = episodes;
        auto f = open_out(path);
        write_vector_dataset(dataset, f);
        written = dataset.size();
    } else {
        const std::string policy_name = take_or(config, "policy", "uniform");
        reject_leftovers(config, "gen-data");
        if (policy_name != "uniform") {
            throw UsageError("unknown policy '" + policy_name + "' for env bandit");
        }
        const DistBandit bandit = default_bandit();
        std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), 31u};
        Rng rng(seq);
        std::uniform_int_distribution<int> pick(0, bandit.n_actions() - 1);
        VectorDataset dataset;
        dataset.state_dim = 1;
        dataset.n_actions = bandit.n_actions();
        for (int e = 0; e < episodes; ++e) {
            const int a = pick(rng);
            dataset.transitions.push_back({{1.0}, a, bandit.sample(a, rng), {1.0}, true});
        }
        dataset.meta = {seed, policy_name, env, episodes, bandit.descriptor()};
        auto f = open_out(path);
        write_vector_dataset(dataset, f);
        written = dataset.size();
    }

    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(manifest, path);
    out << "wrote " << written << " transitions to " << path << '\n';
    return exit_ok;
}

int cmd_solve(FlatConfig config, const std::string &config_path, std::ostream &out)
{
    const auto t0 = std::chrono::steady_clock::now();
    const std::string mode = take_or(config, "mode", "fde");
    if (mode != "fde" && mode != "cde" && mode != "exact") {
        throw UsageError("unknown mode '" + mode + "' (expected fde, cde, exact)");
    }
    const std::string path = require(config, "out");
    const auto dataset_path = take(config, "dataset");
    const auto mdp_path = take(config, "mdp");
    const std::string policy_name = take_or(config, "policy", "uniform");
    const auto gamma_flag = take(config, "gamma");
    const std::string trace_path = take_or(config, "trace", sibling(path, ".trace.csv"));
    CdeConfig cde;
    apply_cde_keys(config, cde);
    reject_leftovers(config, "solve");
    if (mode == "fde") {
        cde.alpha = 0.0;
    }

    RunManifest manifest{"solve", config_path, 0, {}, {path, trace_path}, artifact_version(), 0.0};
    std::optional<OfflineDataset> dataset;
    std::optional<FiniteMDP> mdp;
    if (dataset_path) {
        auto in = open_in(*dataset_path);
        dataset = read_dataset(in);
        manifest.inputs.push_back(*dataset_path);
        manifest.seed = dataset->meta.seed;
        if (dataset->meta.env_descriptor.contains("mdp")) {
            mdp = mdp_from_json(dataset->meta.env_descriptor.at("mdp"));
        }
    }
    if (mdp_path) {
        mdp = load_mdp(*mdp_path);
        manifest.inputs.push_back(*mdp_path);
    }
    if (mode == "exact" && !mdp) {
        throw UsageError("--mode exact needs --mdp or a dataset that embeds its MDP");
    }
    if (mode != "exact" && !dataset) {
        throw UsageError("--mode " + mode + " needs --dataset");
    }

    int S = 0, A = 0;
    double gamma = 0.0, v_min = 0.0, v_max = 0.0;
    if (mdp) {
        S = mdp->n_states;
        A = mdp->n_actions;
        gamma = mdp->gamma;
        v_min = mdp->v_min();
        v_max = mdp->v_max();
    } else {
        if (!gamma_flag) {
            throw UsageError("--gamma is required when the dataset does not embed its MDP");
        }
        gamma = to_double("gamma", *gamma_flag);
        double r_lo = std::numeric_limits<double>::infinity();
        double r_hi = -r_lo;
        for (const auto &t : dataset->transitions) {
            S = std::max({S, t.s + 1, t.sn + 1});
            A = std::max(A, t.a + 1);
            r_lo = std::min(r_lo, t.r);
            r_hi = std::max(r_hi, t.r);
        }
        if (dataset->empty()) {
            throw std::runtime_error("solve: empty dataset");
        }
        v_min = r_lo / (1.0 - gamma);
        v_max = r_hi / (1.0 - gamma);
    }
    if (gamma_flag && mdp) {
        gamma = to_double("gamma", *gamma_flag);
        mdp->gamma = gamma;
        v_min = mdp->v_min();
        v_max = mdp->v_max();
    }

    std::optional<EmpiricalModel> model;
    TabularPolicy behavior = TabularPolicy::uniform(S, A);
    if (dataset) {
        model = estimate_empirical_model(*dataset, S, A);
        behavior = empirical_behavior_policy(*dataset, S, A);
    }
    TabularPolicy policy = TabularPolicy::uniform(S, A);
    if (policy_name == "behavior") {
        if (!dataset) {
            throw UsageError("--policy behavior needs --dataset");
        }
        policy = behavior;
    } else if (policy_name != "uniform") {
        throw UsageError("unknown policy '" + policy_name + "' (expected uniform, behavior)");
    }

    ZOperator op;
    if (mode == "exact") {
        op = exact_operator(*mdp, policy);
    } else {
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) {
                if (!model->visited(s, a)) {
                    throw CoverageError(s, a);
                }
            }
        }
        if (mode == "fde") {
            op = empirical_operator(*model, gamma, policy);
        } else {
            const Eigen::MatrixXd c =
                penalty_shift(resolve_c0(cde, TabularPolicy::uniform(S, A), behavior), cde.alpha, cde.p);
            op = conservative_operator(*model, gamma, policy, c);
        }
    }
    const auto result =
        solve_fixed_point(op, initial_ztable(S, A, cde.n_quantiles, v_min, v_max), cde.tol, cde.max_iters);

    {
        auto f = open_out(path);
        nlohmann::json j = ztable_to_json(result.z);
        j["mode"] = mode;
        j["policy"] = policy_name;
        j["iterations"] = result.iterations;
        j["residual"] = result.residual;
        j["cde_config"] = cde_config_to_json(cde);
        f << j.dump() << '\n';
    }
    {
        auto f = open_out(trace_path);
        write_trace_csv(result.trace, f);
    }
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(manifest, path);
    out << mode << " fixed point after " << result.iterations << " iterations (residual " << result.residual
        << ") -> " << path << '\n';
    return exit_ok;
}

int cmd_verify(FlatConfig config, const std::string &config_path, std::ostream &out)
{
    const auto t0 = std::chrono::steady_clock::now();
    const TheoremId id = [&] {
        const std::string name = require(config, "theorem");
        try {
            return theorem_from_string(name);
        } catch (const std::invalid_argument &e) {
            throw UsageError(e.what());
        }
    }();
    const std::string path = require(config, "out");
    SuiteConfig suite;
    suite.trials = static_cast<int>(to_long("trials", take_or(config, "trials", "100")));
    suite.seed = to_u64("seed", take_or(config, "seed", "0"));
    if (auto a = take(config, "alpha")) {
        suite.alpha = to_double("alpha", *a);
    }
    if (auto v = take(config, "dataset_transitions")) {
        suite.dataset_transitions = static_cast<int>(to_long("dataset_transitions", *v));
    }
    if (auto v = take(config, "per_pair_transitions")) {
        suite.per_pair_transitions = static_cast<int>(to_long("per_pair_transitions", *v));
    }
    if (auto v = take(config, "max_states")) {
        suite.max_states = static_cast<int>(to_long("max_states", *v));
    }
    if (auto v = take(config, "max_actions")) {
        suite.max_actions = static_cast<int>(to_long("max_actions", *v));
    }
    if (auto v = take(config, "contraction_quantiles")) {
        suite.contraction_quantiles = static_cast<int>(to_long("contraction_quantiles", *v));
    }
    apply_cde_keys(config, suite.cde);
    reject_leftovers(config, "verify");
    if (suite.trials < 1) {
        throw UsageError("verify: trials must be at least 1");
    }

    TheoremReport report;
    nlohmann::json extra = nlohmann::json::object();
    switch (id) {
    case TheoremId::contraction: {
        const auto reports = run_contraction_suite(suite);
        report = reports.front();
        report.trials = report.passes = report.skipped = 0;
        report.margins.clear();
        report.trial_passed.clear();
        nlohmann::json per = nlohmann::json::array();
        for (const auto &r : reports) {
            report.absorb(r);
            per.push_back(report_to_json(r));
        }
        extra["operators"] = per;
        break;
    }
    case TheoremId::lower_bound:
        report = run_lower_bound_suite(suite).quantile;
        break;
    case TheoremId::distorted_lower_bound:
        report = run_lower_bound_suite(suite).distorted;
        break;
    case TheoremId::gap_expansion:
        report = run_gap_suite(suite).quantile;
        break;
    case TheoremId::distorted_gap_expansion:
        report = run_gap_suite(suite).distorted;
        break;
    case TheoremId::empirical_fixed_point_bound:
        report = run_empirical_bound_suite(suite);
        break;
    }

    nlohmann::json j = report_to_json(report);
    j.update(extra);
    {
        auto f = open_out(path);
        f << j.dump(2) << '\n';
    }
    RunManifest manifest{"verify", config_path, suite.seed, {}, {path}, artifact_version(), 0.0};
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(manifest, path);
    out << to_string(id) << ": " << report.passes << "/" << report.trials << " passed (required rate "
        << report.required_pass_rate() << ", worst margin " << report.worst_margin << ") "
        << (report.passed() ? "PASS" : "FAIL") << '\n';
    return report.passed() ? exit_ok : exit_verification_failed;
}

VectorDataset load_training_data(const std::string &path)
{
    const auto header = first_line_json(path);
    const auto &meta = header.at("meta");
    auto in = open_in(path);
    if (meta.contains("env_descriptor") && meta.at("env_descriptor").contains("mdp")) {
        const FiniteMDP mdp = mdp_from_json(meta.at("env_descriptor").at("mdp"));
        return to_vector_dataset(read_dataset(in), mdp.n_states, mdp.n_actions);
    }
    return read_vector_dataset(in);
}

std::unique_ptr<EpisodicEnv> make_env(
    const std::string &env, const std::optional<std::string> &mdp_path, int horizon, FlatConfig &config)
{
    if (!mdp_path) {
        check_env_name(env);
    }
    if (env == "risky-pointmass" && !mdp_path) {
        return std::make_unique<PointMassEnv>();
    }
    if (env == "bandit" && !mdp_path) {
        return std::make_unique<BanditEnv>(default_bandit());
    }
    if (env == "random" && !mdp_path) {
        throw UsageError("env random needs --mdp for evaluation");
    }
    auto src = tabular_source(env, mdp_path, config, 0);
    return std::make_unique<TabularEnv>(src->mdp, horizon, src->risky, src->descriptor);
}

int cmd_train(FlatConfig config, const std::string &config_path, std::ostream &out)
{
    const auto t0 = std::chrono::steady_clock::now();
    const std::string dataset_path = require(config, "dataset");
    const std::string path = require(config, "out");
    const std::string metrics_path = take_or(config, "metrics", sibling(path, ".metrics.csv"));
    const auto env_name = take(config, "env");
    const auto mdp_path = take(config, "mdp");
    const int horizon = static_cast<int>(to_long("horizon", take_or(config, "horizon", "50")));
    TrainerConfig trainer;
    apply_trainer_keys(config, trainer);
    std::unique_ptr<EpisodicEnv> env;
    if (env_name || mdp_path) {
        env = make_env(env_name.value_or("file"), mdp_path, horizon, config);
    }
    reject_leftovers(config, "train");

    const VectorDataset dataset = load_training_data(dataset_path);
    if (env && (env->state_dim() != dataset.state_dim || env->n_actions() != dataset.n_actions)) {
        throw std::runtime_error("train: dataset shape does not match the evaluation env");
    }
    const TrainResult result = train(dataset, trainer, env.get());
    {
        auto f = open_out(path, true);
        write_checkpoint(result.state.critic, trainer.seed, result.state.step, f);
    }
    {
        auto f = open_out(metrics_path);
        write_metrics_csv(result.metrics, f);
    }
    {
        auto f = open_out(sibling(path, ".config.json"));
        f << trainer_config_to_json(trainer).dump(2) << '\n';
    }
    RunManifest manifest{
        "train", config_path, trainer.seed, {dataset_path}, {path, metrics_path, sibling(path, ".config.json")},
        artifact_version(), 0.0};
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(manifest, path);
    out << "trained " << result.state.step << " steps (alpha " << result.state.alpha << ") -> " << path << '\n';
    return exit_ok;
}

int cmd_eval(FlatConfig config, const std::string &config_path, std::ostream &out)
{
    const auto t0 = std::chrono::steady_clock::now();
    const std::string ckpt_path = require(config, "checkpoint");
    const std::string path = require(config, "out");
    const auto traj_path = take(config, "trajectories");
    const std::string env_name = take_or(config, "env", "file");
    const auto mdp_path = take(config, "mdp");
    const int horizon = static_cast<int>(to_long("horizon", take_or(config, "horizon", "50")));
    const int episodes = static_cast<int>(to_long("episodes", take_or(config, "episodes", "100")));
    const uint64_t seed = to_u64("seed", take_or(config, "seed", "0"));
    const int n_quantiles = static_cast<int>(to_long("n_quantiles", take_or(config, "n_quantiles", "32")));
    const std::string risk_name = take_or(config, "risk", "uniform");
    const double xi = to_double("risk_xi", take_or(config, "risk_xi", "0.1"));
    auto env = make_env(env_name, mdp_path, horizon, config);
    reject_leftovers(config, "eval");
    if (episodes < 1 || n_quantiles < 1) {
        throw UsageError("eval: episodes and n_quantiles must be at least 1");
    }
    DistortionSpec risk = distortion_from_string(risk_name);
    if (risk.kind == DistortionSpec::Kind::cvar) {
        risk = DistortionSpec::cvar(xi);
    }

    auto in = open_in(ckpt_path, true);
    const Checkpoint ckpt = read_checkpoint(in);
    if (ckpt.net.dims().state_dim != env->state_dim() || ckpt.net.dims().n_actions != env->n_actions()) {
        throw std::runtime_error("eval: checkpoint shape does not match the env");
    }
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), 3u};
    Rng rng(seq);
    std::vector<Trajectory> trajectories;
    const EvalMetrics m =
        evaluate(ckpt.net, *env, episodes, risk, rng, n_quantiles, traj_path ? &trajectories : nullptr);
    {
        auto f = open_out(path);
        f << std::setprecision(17) << "mean,median,cvar10,violations\n"
          << m.mean << ',' << m.median << ',' << m.cvar10 << ',' << m.violations << '\n';
    }
    RunManifest manifest{"eval", config_path, seed, {ckpt_path}, {path}, artifact_version(), 0.0};
    if (traj_path) {
        auto f = open_out(*traj_path);
        f << std::setprecision(17);
        for (size_t e = 0; e < trajectories.size(); ++e) {
            const auto &t = trajectories[e];
            f << nlohmann::json{{"episode", e}, {"observations", t.observations}, {"actions", t.actions},
                                {"rewards", t.rewards}}
                     .dump()
              << '\n';
        }
        manifest.outputs.push_back(*traj_path);
    }
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(manifest, path);
    out << "mean " << m.mean << " median " << m.median << " cvar10 " << m.cvar10 << " violations " << m.violations
        << '\n';
    return exit_ok;
}

std::vector<std::string> split_csv(const std::string &line)
{
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cells.push_back(trim(cell));
    }
    return cells;
}

int cmd_report(FlatConfig config, const std::string &config_path, std::ostream &out)
{
    const auto t0 = std::chrono::steady_clock::now();
    const std::string out_dir = require(config, "out_dir");
    const auto ztable_path = take(config, "ztable");
    const auto metrics_path = take(config, "metrics");
    const auto traj_path = take(config, "trajectories");
    reject_leftovers(config, "report");
    if (!ztable_path && !metrics_path && !traj_path) {
        throw UsageError("report: give at least one of --ztable, --metrics, --trajectories");
    }
    RunManifest manifest{"report", config_path, 0, {}, {}, artifact_version(), 0.0};

    if (ztable_path) {
        const ZTable z = ztable_from_json(read_json_file(*ztable_path));
        const std::string p = (fs::path(out_dir) / "quantiles.csv").string();
        auto f = open_out(p);
        f << std::setprecision(17) << "s,a,i,tau,value\n";
        for (int s = 0; s < z.n_states; ++s) {
            for (int a = 0; a < z.n_actions; ++a) {
                const auto q = z.at(s, a);
                for (int i = 0; i < z.n; ++i) {
                    f << s << ',' << a << ',' << i << ',' << quantile_midpoint(i, z.n) << ',' << q[i] << '\n';
                }
            }
        }
        manifest.inputs.push_back(*ztable_path);
        manifest.outputs.push_back(p);
    }
    if (metrics_path) {
        auto in = open_in(*metrics_path);
        std::string line;
        if (!std::getline(in, line)) {
            throw std::runtime_error(*metrics_path + ": empty metrics file");
        }
        const auto header = split_csv(line);
        if (header.empty() || header.front() != "step") {
            throw std::runtime_error(*metrics_path + ": metrics CSV must start with a step column");
        }
        const std::string p = (fs::path(out_dir) / "metrics_long.csv").string();
        auto f = open_out(p);
        f << "step,metric,value\n";
        while (std::getline(in, line)) {
            if (trim(line).empty()) {
                continue;
            }
            const auto cells = split_csv(line);
            if (cells.size() != header.size()) {
                throw std::runtime_error(*metrics_path + ": ragged metrics row");
            }
            for (size_t k = 1; k < cells.size(); ++k) {
                f << cells[0] << ',' << header[k] << ',' << cells[k] << '\n';
            }
        }
        manifest.inputs.push_back(*metrics_path);
        manifest.outputs.push_back(p);
    }
    if (traj_path) {
        auto in = open_in(*traj_path);
        const std::string p = (fs::path(out_dir) / "trajectories.csv").string();
        auto f = open_out(p);
        // One-hot observations are tabular states; anything else is read as (x, y, ...).
        f << std::setprecision(17) << "episode,t,state,x,y,action,reward\n";
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) {
                continue;
            }
            const auto j = nlohmann::json::parse(line);
            const auto obs = j.at("observations").get<std::vector<std::vector<double>>>();
            const auto actions = j.at("actions").get<std::vector<int>>();
            const auto rewards = j.at("rewards").get<std::vector<double>>();
            for (size_t t = 0; t < obs.size(); ++t) {
                const auto &o = obs[t];
                const long ones = std::count(o.begin(), o.end(), 1.0);
                const long zeros = std::count(o.begin(), o.end(), 0.0);
                f << j.at("episode").get<long>() << ',' << t << ',';
                if (o.size() > 2 && ones == 1 && ones + zeros == static_cast<long>(o.size())) {
                    f << (std::find(o.begin(), o.end(), 1.0) - o.begin()) << ",,,";
                } else {
                    f << ',' << (o.empty() ? 0.0 : o[0]) << ',' << (o.size() > 1 ? o[1] : 0.0) << ',';
                }
                if (t < actions.size()) {
                    f << actions[t] << ',' << rewards[t];
                } else {
                    f << ',';
                }
                f << '\n';
            }
        }
        manifest.inputs.push_back(*traj_path);
        manifest.outputs.push_back(p);
    }
    const std::string anchor = (fs::path(out_dir) / "report").string();
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(manifest, anchor);
    out << "wrote " << manifest.outputs.size() << " tables to " << out_dir << '\n';
    return exit_ok;
}

const std::string &key_help(const std::string &key)
{
    static const std::map<std::string, std::string> help = {
        {"env", "risky-grid, random, risky-pointmass, or bandit"},
        {"episodes", "number of episodes"},
        {"horizon", "episode step limit for tabular environments"},
        {"policy", "behavior policy (gen-data) or evaluated policy: uniform, behavior"},
        {"seed", "random seed"},
        {"out", "primary output path"},
        {"mdp", "MDP JSON file"},
        {"states", "state count of a random MDP"},
        {"actions", "action count of a random MDP"},
        {"width", "risky-grid side length"},
        {"epsilon", "exploration rate of the online collection agent"},
        {"dataset", "dataset file (JSON lines)"},
        {"mode", "fde, cde, or exact"},
        {"gamma", "discount factor"},
        {"trace", "iteration trace CSV path"},
        {"alpha", "penalty coefficient"},
        {"p", "penalty exponent"},
        {"n_quantiles", "number of quantiles N"},
        {"delta_conf", "confidence level delta"},
        {"zeta_mono", "monotonicity constant zeta"},
        {"c0_mode", "policy_ratio or constant"},
        {"c0_constant", "c0 value in constant mode"},
        {"tol", "fixed-point tolerance"},
        {"max_iters", "fixed-point iteration cap"},
        {"theorem", "theorem id"},
        {"trials", "number of randomized trials"},
        {"dataset_transitions", "transitions per lower-bound dataset"},
        {"per_pair_transitions", "samples per (s, a) for the empirical bound"},
        {"max_states", "largest random state count (contraction)"},
        {"max_actions", "largest random action count (contraction)"},
        {"contraction_quantiles", "quantiles used by the contraction suite"},
        {"metrics", "metrics CSV path"},
        {"checkpoint", "critic checkpoint"},
        {"risk", "neutral or cvar"},
        {"risk_xi", "CVaR level"},
        {"trajectories", "trajectory JSON lines path"},
        {"ztable", "solve output"},
        {"out_dir", "output directory"},
        {"n_tau", "quantile draws per update"},
        {"kappa", "Huber threshold"},
        {"lr_actor", "recorded only; the policy comes from the critic"},
        {"lr_critic", "critic learning rate"},
        {"lr_alpha", "dual step size for alpha"},
        {"polyak", "target smoothing rate"},
        {"batch_size", "minibatch size"},
        {"omega", "penalty scale"},
        {"zeta_thresh", "gap threshold; -1 freezes alpha"},
        {"alpha_init", "initial alpha"},
        {"total_steps", "gradient steps"},
        {"temperature", "softmax temperature for next-action draws"},
        {"eval_interval", "steps between metrics rows"},
        {"eval_episodes", "episodes per evaluation"},
        {"optimizer", "adam or sgd"},
        {"hidden", "hidden width"},
        {"n_cos", "cosine features"},
    };
    static const std::string none;
    const auto it = help.find(key);
    return it == help.end() ? none : it->second;
}

// Registers `--flag-name` options that feed config keys `flag_name`.
struct KeyFlags {
    std::map<std::string, std::string> values;
    std::vector<std::pair<std::string, CLI::Option *>> options;
    std::string config_path;

    void add(CLI::App *app, const std::string &key, std::string help = {})
    {
        if (help.empty()) {
            help = key_help(key);
        }
        std::string flag = key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        options.emplace_back(key, app->add_option("--" + flag, values[key], help));
    }

    FlatConfig resolve() const
    {
        FlatConfig config = config_path.empty() ? FlatConfig{} : read_flat_config(config_path);
        for (const auto &[key, opt] : options) {
            if (opt->count() > 0) {
                config[key] = values.at(key);
            }
        }
        return config;
    }
};

const std::vector<std::string> &trainer_keys()
{
    static const std::vector<std::string> keys = {
        "gamma", "n_tau", "kappa", "lr_actor", "lr_critic", "lr_alpha", "polyak", "batch_size", "omega",
        "zeta_thresh", "alpha_init", "risk", "risk_xi", "total_steps", "temperature", "eval_interval",
        "eval_episodes", "optimizer", "hidden", "n_cos"};
    return keys;
}

const std::vector<std::string> &cde_keys()
{
    static const std::vector<std::string> keys = {
        "alpha", "p", "n_quantiles", "delta_conf", "zeta_mono", "c0_mode", "c0_constant", "tol", "max_iters"};
    return keys;
}

} // namespace

nlohmann::json manifest_to_json(const RunManifest &m)
{
    return {
        {"schema_version", 1},
        {"command", m.command},
        {"config_path", m.config_path},
        {"seed", m.seed},
        {"inputs", m.inputs},
        {"outputs", m.outputs},
        {"version", m.version},
        {"wall_seconds", m.wall_seconds},
    };
}

std::string manifest_path(const std::string &output) { return sibling(output, ".manifest.json"); }

std::string artifact_version() { return CODAC_VERSION; }

FlatConfig parse_flat_config(std::istream &in)
{
    FlatConfig config;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '-', '_');
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        }
        if (!config.emplace(key, value).second) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": repeated key '" + key + "'");
        }
    }
    return config;
}

FlatConfig read_flat_config(const std::string &path)
{
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot read config file " + path);
    }
    try {
        return parse_flat_config(in);
    } catch (const std::invalid_argument &e) {
        throw UsageError(path + ": " + e.what());
    }
}

DistortionSpec distortion_from_string(const std::string &name)
{
    if (name == "uniform" || name == "neutral") {
        return DistortionSpec::uniform();
    }
    if (name == "cvar") {
        return DistortionSpec::cvar(0.1);
    }
    throw UsageError("unknown risk '" + name + "' (expected uniform, cvar)");
}

void apply_trainer_keys(FlatConfig &config, TrainerConfig &c)
{
    auto num = [&](const char *key, double &field) {
        if (auto v = take(config, key)) {
            field = to_double(key, *v);
        }
    };
    auto integer = [&](const char *key, auto &field) {
        if (auto v = take(config, key)) {
            field = static_cast<std::remove_reference_t<decltype(field)>>(to_long(key, *v));
        }
    };
    num("gamma", c.gamma);
    integer("n_tau", c.n_tau);
    num("kappa", c.kappa);
    num("lr_actor", c.lr_actor);
    num("lr_critic", c.lr_critic);
    num("lr_alpha", c.lr_alpha);
    num("polyak", c.polyak);
    integer("batch_size", c.batch_size);
    num("omega", c.omega);
    num("zeta_thresh", c.zeta_thresh);
    num("alpha_init", c.alpha_init);
    integer("total_steps", c.total_steps);
    num("temperature", c.temperature);
    integer("eval_interval", c.eval_interval);
    integer("eval_episodes", c.eval_episodes);
    integer("hidden", c.hidden);
    integer("n_cos", c.n_cos);
    if (auto v = take(config, "seed")) {
        c.seed = to_u64("seed", *v);
    }
    const auto risk = take(config, "risk");
    const auto xi = take(config, "risk_xi");
    if (risk) {
        c.risk = distortion_from_string(*risk);
    }
    if (xi) {
        if (c.risk.kind != DistortionSpec::Kind::cvar) {
            throw UsageError("risk_xi only applies to risk = cvar");
        }
        const double x = to_double("risk_xi", *xi);
        try {
            c.risk = DistortionSpec::cvar(x);
        } catch (const std::invalid_argument &e) {
            throw UsageError(e.what());
        }
    }
    if (auto v = take(config, "optimizer")) {
        try {
            c.optimizer = optimizer_from_string(*v);
        } catch (const std::invalid_argument &e) {
            throw UsageError(e.what());
        }
    }
    try {
        c.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
}

void apply_cde_keys(FlatConfig &config, CdeConfig &c)
{
    auto num = [&](const char *key, double &field) {
        if (auto v = take(config, key)) {
            field = to_double(key, *v);
        }
    };
    num("alpha", c.alpha);
    num("p", c.p);
    num("delta_conf", c.delta_conf);
    num("zeta_mono", c.zeta_mono);
    num("c0_constant", c.c0_constant);
    num("tol", c.tol);
    if (auto v = take(config, "max_iters")) {
        c.max_iters = static_cast<int>(to_long("max_iters", *v));
    }
    if (auto v = take(config, "n_quantiles")) {
        c.n_quantiles = static_cast<int>(to_long("n_quantiles", *v));
    }
    if (auto v = take(config, "c0_mode")) {
        if (*v == "policy_ratio") {
            c.c0_mode = C0Mode::policy_ratio;
        } else if (*v == "constant") {
            c.c0_mode = C0Mode::constant;
        } else {
            throw UsageError("unknown c0_mode '" + *v + "' (expected policy_ratio, constant)");
        }
    }
    try {
        c.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
}

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err)
{
    CLI::App app{"Conservative distributional evaluation and offline training toolkit", "codac"};
    app.require_subcommand(1);
    app.set_version_flag("--version", artifact_version());

    struct Sub {
        CLI::App *app;
        KeyFlags flags;
        int (*run)(FlatConfig, const std::string &, std::ostream &);
    };
    std::vector<std::unique_ptr<Sub>> subs;
    auto make = [&](const char *name, const char *help, auto run) {
        auto sub = std::make_unique<Sub>();
        sub->app = app.add_subcommand(name, help);
        sub->app->add_option("--config", sub->flags.config_path, "flat key = value file; flags override it");
        sub->run = run;
        subs.push_back(std::move(sub));
        return subs.back().get();
    };

    auto *gen = make("gen-data", "generate an offline dataset", cmd_gen_data);
    for (const char *k : {"env", "episodes", "horizon", "policy", "seed", "out", "mdp", "states", "actions",
                          "width", "epsilon"}) {
        gen->flags.add(gen->app, k);
    }
    for (const auto &k : trainer_keys()) {
        gen->flags.add(gen->app, k, k == "gamma" ? "discount (random MDP and collection agent)" : "collection agent setting");
    }

    auto *solve = make("solve", "solve a tabular return-distribution fixed point", cmd_solve);
    for (const char *k : {"dataset", "mdp", "mode", "policy", "gamma", "out", "trace"}) {
        solve->flags.add(solve->app, k);
    }
    for (const auto &k : cde_keys()) {
        solve->flags.add(solve->app, k);
    }

    auto *verify = make("verify", "run a randomized theorem suite", cmd_verify);
    for (const char *k : {"theorem", "trials", "seed", "out", "dataset_transitions", "per_pair_transitions",
                          "max_states", "max_actions", "contraction_quantiles"}) {
        verify->flags.add(verify->app, k);
    }
    for (const auto &k : cde_keys()) {
        verify->flags.add(verify->app, k);
    }

    auto *trn = make("train", "train the quantile critic offline", cmd_train);
    for (const char *k : {"dataset", "out", "metrics", "env", "mdp", "horizon", "seed", "width"}) {
        trn->flags.add(trn->app, k);
    }
    for (const auto &k : trainer_keys()) {
        trn->flags.add(trn->app, k);
    }

    auto *ev = make("eval", "evaluate a checkpoint with greedy rollouts", cmd_eval);
    for (const char *k : {"checkpoint", "env", "mdp", "horizon", "episodes", "seed", "risk", "risk_xi", "out",
                          "trajectories", "n_quantiles", "width"}) {
        ev->flags.add(ev->app, k);
    }

    auto *rep = make("report", "emit tidy CSV tables", cmd_report);
    for (const char *k : {"ztable", "metrics", "trajectories", "out_dir"}) {
        rep->flags.add(rep->app, k);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) {
            out << (dynamic_cast<const CLI::CallForVersion *>(&e) ? artifact_version() + "\n" : app.help());
            return exit_ok;
        }
        err << "codac: " << e.what() << '\n';
        return exit_usage;
    }

    for (const auto &sub : subs) {
        if (!sub->app->parsed()) {
            continue;
        }
        try {
            return sub->run(sub->flags.resolve(), sub->flags.config_path, out);
        } catch (const UsageError &e) {
            err << "codac " << sub->app->get_name() << ": " << e.what() << '\n';
            return exit_usage;
        } catch (const CoverageError &e) {
            err << "codac " << sub->app->get_name() << ": " << e.what() << '\n';
            return exit_data;
        } catch (const ConvergenceError &e) {
            err << "codac " << sub->app->get_name() << ": " << e.what() << '\n';
            return exit_verification_failed;
        } catch (const std::exception &e) {
            err << "codac " << sub->app->get_name() << ": " << e.what() << '\n';
            return exit_data;
        }
    }
    return exit_usage;
}

} // namespace codac
