#include "codac/theory_verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace codac {

namespace {

constexpr int kCoverageRetries = 20;

// Pair-by-pair sampling from the true model; used where the suites want a
// controlled n(s, a) instead of trajectory data.
OfflineDataset pairwise_dataset(const FiniteMDP &mdp, int per_pair, Rng &rng)
{
    OfflineDataset dataset;
    dataset.transitions.reserve(static_cast<size_t>(mdp.n_states) * mdp.n_actions * per_pair);
    std::vector<double> atom_probs;
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            const auto &reward = mdp.reward(s, a);
            atom_probs.clear();
            for (const auto &atom : reward) {
                atom_probs.push_back(atom.prob);
            }
            for (int k = 0; k < per_pair; ++k) {
                const int sn = sample_index(mdp.successors(s, a), rng);
                const double r = reward[static_cast<size_t>(sample_index(atom_probs, rng))].value;
                dataset.transitions.push_back({s, a, r, sn, false});
            }
        }
    }
    dataset.meta.policy = "per-pair";
    dataset.meta.episodes = 0;
    return dataset;
}

// Trajectory dataset from `behavior`, redrawn until every (s, a) is visited.
std::optional<EvaluationProblem> covering_problem(
    const FiniteMDP &mdp, const TabularPolicy &behavior, const TabularPolicy &policy, const SuiteConfig &config,
    Rng &rng)
{
    const int horizon = std::max(1, config.episode_horizon);
    const int episodes = std::max(1, config.dataset_transitions / horizon);
    for (int attempt = 0; attempt < kCoverageRetries; ++attempt) {
        const auto dataset = generate_dataset(mdp, behavior, episodes, horizon, rng(), "behavior");
        try {
            return make_problem(mdp, dataset, policy);
        } catch (const CoverageError &) {
        }
    }
    return std::nullopt;
}

FixedPointResult solve(const ZOperator &op, const FiniteMDP &mdp, const CdeConfig &config)
{
    return solve_fixed_point(
        op, initial_ztable(mdp.n_states, mdp.n_actions, config.n_quantiles, mdp.v_min(), mdp.v_max()), config.tol,
        config.max_iters);
}

ZTable random_ztable(int n_states, int n_actions, int n, double v_min, double v_max, Rng &rng)
{
    ZTable z(n_states, n_actions, n, v_min, v_max);
    std::uniform_real_distribution<double> unif(v_min, v_max);
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            auto row = z.at(s, a);
            for (double &v : row) {
                v = unif(rng);
            }
            std::sort(row.begin(), row.end());
        }
    }
    return z;
}

double policy_average(const ZTable &z, const TabularPolicy &policy, int s, int i)
{
    double acc = 0.0;
    for (int a = 0; a < z.n_actions; ++a) {
        acc += policy(s, a) * z.at(s, a)[static_cast<size_t>(i)];
    }
    return acc;
}

double policy_average_distorted(const ZTable &z, const TabularPolicy &policy, int s, const DistortionSpec &g)
{
    double acc = 0.0;
    for (int a = 0; a < z.n_actions; ++a) {
        acc += policy(s, a) * distorted_expectation(z.at(s, a), g);
    }
    return acc;
}

std::vector<DistortionSpec> default_distortions()
{
    return {DistortionSpec::uniform(), DistortionSpec::cvar(0.1)};
}

TheoremReport make_report(TheoremId id, const CdeConfig &config, uint64_t seed)
{
    TheoremReport report;
    report.theorem_id = id;
    report.config = config;
    report.seed = seed;
    return report;
}

} // namespace

std::string to_string(TheoremId id)
{
    switch (id) {
    case TheoremId::contraction:
        return "contraction";
    case TheoremId::lower_bound:
        return "lower_bound";
    case TheoremId::distorted_lower_bound:
        return "distorted_lower_bound";
    case TheoremId::gap_expansion:
        return "gap_expansion";
    case TheoremId::distorted_gap_expansion:
        return "distorted_gap_expansion";
    case TheoremId::empirical_fixed_point_bound:
        return "empirical_fixed_point_bound";
    }
    return "unknown";
}

TheoremId theorem_from_string(const std::string &name)
{
    for (auto id : {TheoremId::contraction, TheoremId::lower_bound, TheoremId::distorted_lower_bound,
                    TheoremId::gap_expansion, TheoremId::distorted_gap_expansion,
                    TheoremId::empirical_fixed_point_bound}) {
        if (to_string(id) == name) {
            return id;
        }
    }
    throw std::invalid_argument("unknown theorem id: " + name);
}

bool is_probabilistic(TheoremId id)
{
    return id == TheoremId::lower_bound || id == TheoremId::distorted_lower_bound ||
           id == TheoremId::empirical_fixed_point_bound;
}

double TheoremReport::required_pass_rate() const
{
    return is_probabilistic(theorem_id) ? 1.0 - config.delta_conf - 0.03 : 1.0;
}

bool TheoremReport::passed() const
{
    return trials > 0 && pass_rate() >= required_pass_rate() - 1e-12;
}

void TheoremReport::add_trial(double margin, bool pass)
{
    if (!std::isfinite(margin)) {
        throw std::runtime_error("non-finite margin in " + to_string(theorem_id) + " check");
    }
    if (trials == 0) {
        worst_margin = margin;
    } else if (theorem_id == TheoremId::contraction) {
        worst_margin = std::max(worst_margin, margin);
    } else {
        worst_margin = std::min(worst_margin, margin);
    }
    ++trials;
    passes += pass ? 1 : 0;
    margins.push_back(margin);
    trial_passed.push_back(pass);
}

void TheoremReport::absorb(const TheoremReport &other)
{
    for (size_t k = 0; k < other.margins.size(); ++k) {
        add_trial(other.margins[k], other.trial_passed[k]);
    }
    skipped += other.skipped;
}

nlohmann::json report_to_json(const TheoremReport &report)
{
    nlohmann::json j;
    j["schema_version"] = 1;
    j["theorem_id"] = to_string(report.theorem_id);
    j["trials"] = report.trials;
    j["passes"] = report.passes;
    j["skipped"] = report.skipped;
    j["pass_rate"] = report.pass_rate();
    j["required_pass_rate"] = report.required_pass_rate();
    j["passed"] = report.passed();
    j["worst_margin"] = report.worst_margin;
    j["seed"] = report.seed;
    j["config"] = cde_config_to_json(report.config);
    j["margins"] = report.margins;
    return j;
}

double projection_slack(double v_min, double v_max, int n)
{
    return 2.0 * (v_max - v_min) / n;
}

std::vector<double> dirichlet(int k, double concentration, Rng &rng)
{
    if (k < 1 || !(concentration > 0.0)) {
        throw std::invalid_argument("dirichlet: need k >= 1 and positive concentration");
    }
    std::gamma_distribution<double> gamma(concentration, 1.0);
    std::vector<double> x(static_cast<size_t>(k));
    double total = 0.0;
    while (!(total > 0.0)) {
        total = 0.0;
        for (double &v : x) {
            v = gamma(rng);
            total += v;
        }
    }
    for (double &v : x) {
        v /= total;
    }
    return x;
}

FiniteMDP random_mdp(const RandomMdpSpec &spec, Rng &rng)
{
    if (spec.reward_atoms < 1 || spec.reward_grid < 2 || spec.reward_atoms > spec.reward_grid) {
        throw std::invalid_argument("random_mdp: reward atoms must fit on the grid");
    }
    FiniteMDP mdp(spec.n_states, spec.n_actions, spec.gamma);
    std::vector<int> grid(static_cast<size_t>(spec.reward_grid));
    for (int s = 0; s < spec.n_states; ++s) {
        for (int a = 0; a < spec.n_actions; ++a) {
            const auto row = dirichlet(spec.n_states, 1.0, rng);
            std::copy(row.begin(), row.end(), mdp.transition.begin() + static_cast<long>(mdp.index(s, a)) * spec.n_states);
            std::iota(grid.begin(), grid.end(), 0);
            std::shuffle(grid.begin(), grid.end(), rng);
            std::sort(grid.begin(), grid.begin() + spec.reward_atoms);
            const auto probs = dirichlet(spec.reward_atoms, 1.0, rng);
            RewardDist &reward = mdp.reward(s, a);
            reward.clear();
            for (int k = 0; k < spec.reward_atoms; ++k) {
                reward.push_back({grid[static_cast<size_t>(k)] / (spec.reward_grid - 1.0), probs[static_cast<size_t>(k)]});
            }
        }
    }
    mdp.r_min = 0.0;
    mdp.r_max = 1.0;
    return mdp;
}

TabularPolicy random_policy(int n_states, int n_actions, Rng &rng, double uniform_mix)
{
    TabularPolicy policy{Eigen::MatrixXd(n_states, n_actions)};
    for (int s = 0; s < n_states; ++s) {
        const auto row = dirichlet(n_actions, 1.0, rng);
        for (int a = 0; a < n_actions; ++a) {
            policy.probs(s, a) = (1.0 - uniform_mix) * row[static_cast<size_t>(a)] + uniform_mix / n_actions;
        }
    }
    return policy;
}

EvaluationProblem make_problem(const FiniteMDP &mdp, const OfflineDataset &dataset, const TabularPolicy &policy)
{
    const auto model = estimate_empirical_model(dataset, mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            if (!model.visited(s, a)) {
                throw CoverageError(s, a);
            }
        }
    }
    return {mdp, policy, BackupModel::empirical(model, mdp.gamma),
            empirical_behavior_policy(dataset, mdp.n_states, mdp.n_actions), model.counts};
}

EvaluationProblem make_exact_problem(const FiniteMDP &mdp, const TabularPolicy &policy, Eigen::MatrixXi counts)
{
    if (counts.rows() != mdp.n_states || counts.cols() != mdp.n_actions) {
        throw std::invalid_argument("make_exact_problem: counts shape does not match the MDP");
    }
    TabularPolicy behavior = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
        const double total = counts.row(s).cast<double>().sum();
        if (total > 0.0) {
            behavior.probs.row(s) = counts.row(s).cast<double>() / total;
        }
    }
    return {mdp, policy, BackupModel::exact(mdp), behavior, std::move(counts)};
}

Eigen::MatrixXd resolve_c0(const CdeConfig &config, const TabularPolicy &mu, const TabularPolicy &behavior)
{
    switch (config.c0_mode) {
    case C0Mode::policy_ratio:
        return c0_from_policies(mu, behavior, true);
    case C0Mode::constant:
        return Eigen::MatrixXd::Constant(behavior.n_states(), behavior.n_actions(), config.c0_constant);
    case C0Mode::custom:
        if (config.c0_table.rows() != behavior.n_states() || config.c0_table.cols() != behavior.n_actions()) {
            throw std::invalid_argument("custom c0 table shape does not match the problem");
        }
        return config.c0_table;
    }
    throw std::invalid_argument("unknown c0 mode");
}

double certified_alpha(const EvaluationProblem &problem, const CdeConfig &config, const TabularPolicy &mu)
{
    const auto delta = concentration_delta(
        problem.counts, config.zeta_mono, config.delta_conf, problem.mdp.n_states, problem.mdp.n_actions);
    return alpha_lower_bound(delta, resolve_c0(config, mu, problem.behavior), config.p);
}

TheoremReport check_contraction(
    const ZOperator &op,
    int n_states,
    int n_actions,
    int n_quantiles,
    double v_min,
    double v_max,
    double gamma,
    double p,
    int trials,
    Rng &rng,
    double slack)
{
    if (trials < 1) {
        throw std::invalid_argument("check_contraction: trials must be at least 1");
    }
    TheoremReport report;
    report.theorem_id = TheoremId::contraction;
    report.config.p = p;
    report.config.n_quantiles = n_quantiles;
    for (int t = 0; t < trials; ++t) {
        const ZTable z1 = random_ztable(n_states, n_actions, n_quantiles, v_min, v_max, rng);
        const ZTable z2 = random_ztable(n_states, n_actions, n_quantiles, v_min, v_max, rng);
        const double before = sup_wasserstein(z1, z2, p);
        if (before == 0.0) {
            ++report.skipped;
            continue;
        }
        const double ratio = sup_wasserstein(op.apply(z1), op.apply(z2), p) / before;
        report.add_trial(ratio - gamma, ratio <= gamma + slack);
    }
    return report;
}

TheoremReport check_contraction(
    const FiniteMDP &mdp, const TabularPolicy &policy, double p, int trials, Rng &rng, int n_quantiles, double slack)
{
    return check_contraction(
        exact_operator(mdp, policy), mdp.n_states, mdp.n_actions, n_quantiles, mdp.v_min(), mdp.v_max(), mdp.gamma,
        p, trials, rng, slack);
}

LowerBoundResult check_lower_bounds(
    const EvaluationProblem &problem,
    const CdeConfig &config,
    const TabularPolicy &mu,
    const std::vector<DistortionSpec> &g_list)
{
    config.validate();
    const FiniteMDP &mdp = problem.mdp;
    const Eigen::MatrixXd c = penalty_shift(resolve_c0(config, mu, problem.behavior), config.alpha, config.p);
    const ZTable z = solve(exact_operator(mdp, problem.policy), mdp, config).z;
    const ZTable z_tilde = solve(conservative_operator(problem.estimate, problem.policy, c), mdp, config).z;
    const double tol = projection_slack(mdp.v_min(), mdp.v_max(), config.n_quantiles);

    double quantile_margin = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < z.values.size(); ++k) {
        quantile_margin = std::min(quantile_margin, z.values[k] + tol - z_tilde.values[k]);
    }
    double distorted_margin = std::numeric_limits<double>::infinity();
    for (const auto &g : g_list) {
        for (int s = 0; s < mdp.n_states; ++s) {
            for (int a = 0; a < mdp.n_actions; ++a) {
                distorted_margin = std::min(
                    distorted_margin,
                    distorted_expectation(z.at(s, a), g) + tol - distorted_expectation(z_tilde.at(s, a), g));
            }
        }
    }
    LowerBoundResult result{
        make_report(TheoremId::lower_bound, config, 0), make_report(TheoremId::distorted_lower_bound, config, 0)};
    result.quantile.add_trial(quantile_margin, quantile_margin >= 0.0);
    if (!g_list.empty()) {
        result.distorted.add_trial(distorted_margin, distorted_margin >= 0.0);
    }
    return result;
}

namespace {

LowerBoundResult lower_bounds_from_dataset(
    const FiniteMDP &mdp,
    const OfflineDataset &dataset,
    const TabularPolicy &policy,
    const CdeConfig &config,
    const std::vector<DistortionSpec> &g_list)
{
    const auto problem = make_problem(mdp, dataset, policy);
    const auto mu = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
    const double needed = certified_alpha(problem, config, mu);
    if (config.alpha < needed * (1.0 - 1e-12)) {
        throw std::invalid_argument(
            "alpha " + std::to_string(config.alpha) + " is below the certified threshold " + std::to_string(needed));
    }
    return check_lower_bounds(problem, config, mu, g_list);
}

} // namespace

TheoremReport check_quantile_lower_bound(
    const FiniteMDP &mdp, const OfflineDataset &dataset, const TabularPolicy &policy, const CdeConfig &config)
{
    return lower_bounds_from_dataset(mdp, dataset, policy, config, {}).quantile;
}

TheoremReport check_distorted_lower_bound(
    const FiniteMDP &mdp,
    const OfflineDataset &dataset,
    const TabularPolicy &policy,
    const CdeConfig &config,
    const std::vector<DistortionSpec> &g_list)
{
    return lower_bounds_from_dataset(mdp, dataset, policy, config, g_list).distorted;
}

GapExpansionResult check_gap_expansion(
    const EvaluationProblem &problem,
    const TabularPolicy &mu,
    const CdeConfig &config,
    const std::vector<DistortionSpec> &g_list)
{
    config.validate();
    if (config.p != 2.0) {
        throw std::invalid_argument("gap expansion is stated for p = 2 only");
    }
    const FiniteMDP &mdp = problem.mdp;
    const TabularPolicy &beta = problem.behavior;
    for (int s = 0; s < mdp.n_states; ++s) {
        if ((mu.probs.row(s) - beta.probs.row(s)).cwiseAbs().maxCoeff() <= 1e-12) {
            throw std::invalid_argument(
                "gap expansion needs mu to differ from the behavior policy at every state (state " +
                std::to_string(s) + " matches)");
        }
    }
    const Eigen::MatrixXd c = penalty_shift(c0_from_policies(mu, beta, false), config.alpha, config.p);
    const ZTable z = solve(exact_operator(mdp, problem.policy), mdp, config).z;
    const ZTable z_tilde = solve(conservative_operator(problem.estimate, problem.policy, c), mdp, config).z;
    const double tol = projection_slack(mdp.v_min(), mdp.v_max(), config.n_quantiles);

    double quantile_margin = std::numeric_limits<double>::infinity();
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int i = 0; i < config.n_quantiles; ++i) {
            const double gap_tilde = policy_average(z_tilde, beta, s, i) - policy_average(z_tilde, mu, s, i);
            const double gap = policy_average(z, beta, s, i) - policy_average(z, mu, s, i);
            quantile_margin = std::min(quantile_margin, gap_tilde - gap + tol);
        }
    }
    double distorted_margin = std::numeric_limits<double>::infinity();
    for (const auto &g : g_list) {
        for (int s = 0; s < mdp.n_states; ++s) {
            const double gap_tilde =
                policy_average_distorted(z_tilde, beta, s, g) - policy_average_distorted(z_tilde, mu, s, g);
            const double gap = policy_average_distorted(z, beta, s, g) - policy_average_distorted(z, mu, s, g);
            distorted_margin = std::min(distorted_margin, gap_tilde - gap + tol);
        }
    }
    GapExpansionResult result{
        make_report(TheoremId::gap_expansion, config, 0), make_report(TheoremId::distorted_gap_expansion, config, 0)};
    result.quantile.add_trial(quantile_margin, quantile_margin >= 0.0);
    if (!g_list.empty()) {
        result.distorted.add_trial(distorted_margin, distorted_margin >= 0.0);
    }
    return result;
}

GapExpansionResult check_gap_expansion(
    const FiniteMDP &mdp,
    const OfflineDataset &dataset,
    const TabularPolicy &policy,
    const TabularPolicy &mu,
    const CdeConfig &config)
{
    return check_gap_expansion(make_problem(mdp, dataset, policy), mu, config, default_distortions());
}

TheoremReport check_empirical_fixed_point_bound(const EvaluationProblem &problem, const CdeConfig &config)
{
    config.validate();
    const FiniteMDP &mdp = problem.mdp;
    const ZTable z = solve(exact_operator(mdp, problem.policy), mdp, config).z;
    ZOperator empirical{"empirical", [&problem](const ZTable &x) {
                            return distributional_bellman(problem.estimate, problem.policy, x);
                        }};
    const ZTable z_hat = solve(empirical, mdp, config).z;
    const auto delta =
        concentration_delta(problem.counts, config.zeta_mono, config.delta_conf, mdp.n_states, mdp.n_actions);
    if (!delta.all_finite()) {
        throw std::invalid_argument("empirical fixed-point bound needs every (s, a) in the dataset");
    }
    const double bound = delta.max_finite() / (1.0 - mdp.gamma) +
                         projection_slack(mdp.v_min(), mdp.v_max(), config.n_quantiles);
    const double margin = bound - sup_norm(z_hat, z);
    auto report = make_report(TheoremId::empirical_fixed_point_bound, config, 0);
    report.add_trial(margin, margin >= 0.0);
    return report;
}

TheoremReport check_empirical_fixed_point_bound(
    const FiniteMDP &mdp, const OfflineDataset &dataset, const TabularPolicy &policy, const CdeConfig &config)
{
    return check_empirical_fixed_point_bound(make_problem(mdp, dataset, policy), config);
}

Rng trial_rng(uint64_t seed, int trial)
{
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(trial)};
    return Rng(seq);
}

std::vector<TheoremReport> run_contraction_suite(const SuiteConfig &config)
{
    std::vector<TheoremReport> reports;
    for (int k = 0; k < 3; ++k) {
        reports.push_back(make_report(TheoremId::contraction, config.cde, config.seed));
        reports.back().config.n_quantiles = config.contraction_quantiles;
    }
    for (int t = 0; t < config.trials; ++t) {
        Rng rng = trial_rng(config.seed, t);
        RandomMdpSpec spec = config.mdp;
        spec.n_states = std::uniform_int_distribution<int>(2, std::max(2, config.max_states))(rng);
        spec.n_actions = std::uniform_int_distribution<int>(1, std::max(1, config.max_actions))(rng);
        const FiniteMDP mdp = random_mdp(spec, rng);
        const TabularPolicy policy = random_policy(spec.n_states, spec.n_actions, rng);
        const auto dataset = pairwise_dataset(mdp, 20, rng);
        const auto model = estimate_empirical_model(dataset, mdp.n_states, mdp.n_actions);
        const auto behavior = empirical_behavior_policy(dataset, mdp.n_states, mdp.n_actions);
        const Eigen::MatrixXd c = penalty_shift(
            resolve_c0(config.cde, policy, behavior), config.alpha.value_or(1.0), config.cde.p);
        const ZOperator ops[3] = {
            exact_operator(mdp, policy),
            empirical_operator(model, mdp.gamma, policy),
            conservative_operator(model, mdp.gamma, policy, c),
        };
        for (int k = 0; k < 3; ++k) {
            reports[static_cast<size_t>(k)].absorb(check_contraction(
                ops[k], mdp.n_states, mdp.n_actions, config.contraction_quantiles, mdp.v_min(), mdp.v_max(),
                mdp.gamma, config.cde.p, 1, rng, config.contraction_slack));
        }
    }
    return reports;
}

LowerBoundResult run_lower_bound_suite(const SuiteConfig &config)
{
    LowerBoundResult result{make_report(TheoremId::lower_bound, config.cde, config.seed),
                            make_report(TheoremId::distorted_lower_bound, config.cde, config.seed)};
    for (int t = 0; t < config.trials; ++t) {
        Rng rng = trial_rng(config.seed, t);
        const FiniteMDP mdp = random_mdp(config.mdp, rng);
        const TabularPolicy policy = random_policy(mdp.n_states, mdp.n_actions, rng);
        const auto behavior = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        const auto problem = covering_problem(mdp, behavior, policy, config, rng);
        if (!problem) {
            ++result.quantile.skipped;
            ++result.distorted.skipped;
            continue;
        }
        const auto mu = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        CdeConfig cde = config.cde;
        cde.alpha = config.alpha.value_or(certified_alpha(*problem, cde, mu));
        const auto trial = check_lower_bounds(*problem, cde, mu, default_distortions());
        result.quantile.absorb(trial.quantile);
        result.distorted.absorb(trial.distorted);
    }
    return result;
}

GapExpansionResult run_gap_suite(const SuiteConfig &config)
{
    GapExpansionResult result{make_report(TheoremId::gap_expansion, config.cde, config.seed),
                              make_report(TheoremId::distorted_gap_expansion, config.cde, config.seed)};
    CdeConfig cde = config.cde;
    cde.p = 2.0;
    cde.alpha = config.alpha.value_or(100.0);
    result.quantile.config = cde;
    result.distorted.config = cde;
    for (int t = 0; t < config.trials; ++t) {
        Rng rng = trial_rng(config.seed, t);
        const FiniteMDP mdp = random_mdp(config.mdp, rng);
        const TabularPolicy behavior = random_policy(mdp.n_states, mdp.n_actions, rng, 0.3);
        // The evaluated policy is the behavior policy recovered from the data.
        auto problem = covering_problem(mdp, behavior, behavior, config, rng);
        if (!problem) {
            ++result.quantile.skipped;
            ++result.distorted.skipped;
            continue;
        }
        problem->policy = problem->behavior;
        const auto mu = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        const auto trial = check_gap_expansion(*problem, mu, cde, default_distortions());
        result.quantile.absorb(trial.quantile);
        result.distorted.absorb(trial.distorted);
    }
    return result;
}

TheoremReport run_empirical_bound_suite(const SuiteConfig &config)
{
    auto report = make_report(TheoremId::empirical_fixed_point_bound, config.cde, config.seed);
    for (int t = 0; t < config.trials; ++t) {
        Rng rng = trial_rng(config.seed, t);
        const FiniteMDP mdp = random_mdp(config.mdp, rng);
        const TabularPolicy policy = random_policy(mdp.n_states, mdp.n_actions, rng);
        auto dataset = pairwise_dataset(mdp, config.per_pair_transitions, rng);
        report.absorb(check_empirical_fixed_point_bound(make_problem(mdp, dataset, policy), config.cde));
    }
    return report;
}

TheoremReport run_suite(TheoremId id, const SuiteConfig &config)
{
    switch (id) {
    case TheoremId::contraction: {
        auto reports = run_contraction_suite(config);
        TheoremReport merged = make_report(TheoremId::contraction, reports[0].config, config.seed);
        for (const auto &r : reports) {
            merged.absorb(r);
        }
        return merged;
    }
    case TheoremId::lower_bound:
        return run_lower_bound_suite(config).quantile;
    case TheoremId::distorted_lower_bound:
        return run_lower_bound_suite(config).distorted;
    case TheoremId::gap_expansion:
        return run_gap_suite(config).quantile;
    case TheoremId::distorted_gap_expansion:
        return run_gap_suite(config).distorted;
    case TheoremId::empirical_fixed_point_bound:
        return run_empirical_bound_suite(config);
    }
    throw std::invalid_argument("unknown theorem id");
}

} // namespace codac
