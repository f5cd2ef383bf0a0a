#include "codac/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace codac {

namespace {

Rng derived_rng(uint64_t seed, uint32_t stream)
{
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), stream};
    return Rng(seq);
}

Eigen::VectorXd softmax_policy(const Eigen::VectorXd &scores, double temperature)
{
    const Eigen::Index n = scores.size();
    Eigen::VectorXd probs(n);
    const double top = scores.maxCoeff();
    if (temperature <= 0.0) {
        probs = (scores.array() == top).cast<double>().matrix();
    } else {
        probs = ((scores.array() - top) / temperature).exp().matrix();
    }
    return probs / probs.sum();
}

double distorted_row(Eigen::VectorXd row, const DistortionSpec &risk)
{
    std::sort(row.data(), row.data() + row.size());
    return distorted_expectation(std::span<const double>(row.data(), static_cast<size_t>(row.size())), risk);
}

} // namespace

void TrainerConfig::validate() const
{
    if (!(lr_actor > 0.0 && lr_critic > 0.0 && lr_alpha > 0.0 && polyak > 0.0 && kappa > 0.0)) {
        throw std::invalid_argument("trainer config: rates, polyak and kappa must be positive");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) {
        throw std::invalid_argument("trainer config: gamma must lie in [0, 1)");
    }
    if (batch_size < 1 || n_tau < 1) {
        throw std::invalid_argument("trainer config: batch_size and n_tau must be at least 1");
    }
    if (total_steps < 0 || eval_interval < 1 || eval_episodes < 1) {
        throw std::invalid_argument("trainer config: step counts must be nonnegative and intervals positive");
    }
    if (alpha_init < 0.0 || temperature < 0.0 || omega < 0.0) {
        throw std::invalid_argument("trainer config: alpha_init, omega and temperature must be nonnegative");
    }
}

nlohmann::json trainer_config_to_json(const TrainerConfig &c)
{
    return {
        {"gamma", c.gamma},
        {"n_tau", c.n_tau},
        {"kappa", c.kappa},
        {"lr_actor", c.lr_actor},
        {"lr_critic", c.lr_critic},
        {"lr_alpha", c.lr_alpha},
        {"polyak", c.polyak},
        {"batch_size", c.batch_size},
        {"omega", c.omega},
        {"zeta_thresh", c.zeta_thresh},
        {"alpha_init", c.alpha_init},
        {"risk", c.risk.kind == DistortionSpec::Kind::cvar ? "cvar" : "neutral"},
        {"risk_xi", c.risk.xi},
        {"total_steps", c.total_steps},
        {"seed", c.seed},
        {"temperature", c.temperature},
        {"eval_interval", c.eval_interval},
        {"eval_episodes", c.eval_episodes},
        {"optimizer", to_string(c.optimizer)},
        {"hidden", c.hidden},
        {"n_cos", c.n_cos},
    };
}

TrainerState init_trainer(int state_dim, int n_actions, const TrainerConfig &config)
{
    config.validate();
    CriticNet critic(CriticDims{state_dim, n_actions, config.hidden, config.n_cos}, config.seed);
    TrainerState state{critic, make_target(critic, config.polyak), config.alpha_init, 0, derived_rng(config.seed, 1), {}};
    state.optimizer.kind = config.optimizer;
    state.optimizer.lr = config.lr_critic;
    return state;
}

Eigen::VectorXd action_scores(
    const CriticNet &critic, std::span<const double> state, const DistortionSpec &risk, int n_quantiles)
{
    const auto taus = quantile_midpoints(n_quantiles);
    const Eigen::MatrixXd q = action_quantiles(critic, state, taus);
    Eigen::VectorXd scores(q.rows());
    for (Eigen::Index a = 0; a < q.rows(); ++a) {
        scores(a) = distorted_row(q.row(a).transpose(), risk);
    }
    return scores;
}

Eigen::VectorXd policy_from_critic(
    const CriticNet &critic, std::span<const double> state, const DistortionSpec &risk, double temperature,
    int n_quantiles)
{
    return softmax_policy(action_scores(critic, state, risk, n_quantiles), temperature);
}

std::vector<int> draw_actions(
    const CriticNet &critic, const Eigen::MatrixXd &states, const DistortionSpec &risk, double temperature,
    int n_quantiles, Rng &rng)
{
    const int n_actions = critic.dims().n_actions;
    const Eigen::Index b = states.cols();
    if (n_actions == 1) {
        return std::vector<int>(static_cast<size_t>(b), 0);
    }
    Eigen::MatrixXd all_states(states.rows(), b * n_actions);
    std::vector<int> all_actions(static_cast<size_t>(b * n_actions));
    for (Eigen::Index s = 0; s < b; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            all_states.col(s * n_actions + a) = states.col(s);
            all_actions[static_cast<size_t>(s * n_actions + a)] = a;
        }
    }
    const auto taus = quantile_midpoints(n_quantiles);
    const Eigen::MatrixXd q = forward_batch(critic, all_states, all_actions, taus);
    std::vector<int> out(static_cast<size_t>(b));
    Eigen::VectorXd scores(n_actions);
    for (Eigen::Index s = 0; s < b; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            scores(a) = distorted_row(q.row(s * n_actions + a).transpose(), risk);
        }
        const Eigen::VectorXd probs = softmax_policy(scores, temperature);
        out[static_cast<size_t>(s)] =
            sample_index(std::span<const double>(probs.data(), static_cast<size_t>(probs.size())), rng);
    }
    return out;
}

int greedy_action(
    const CriticNet &critic, std::span<const double> state, const DistortionSpec &risk, int n_quantiles, Rng &rng)
{
    const Eigen::VectorXd probs = policy_from_critic(critic, state, risk, 0.0, n_quantiles);
    return sample_index(std::span<const double>(probs.data(), static_cast<size_t>(probs.size())), rng);
}

CriticBatch sample_batch(const VectorDataset &dataset, int batch_size, Rng &rng)
{
    if (dataset.empty()) {
        throw std::invalid_argument("sample_batch: empty dataset");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("sample_batch: batch size must be positive");
    }
    std::uniform_int_distribution<size_t> pick(0, dataset.size() - 1);
    CriticBatch batch;
    batch.states.resize(dataset.state_dim, batch_size);
    batch.next_states.resize(dataset.state_dim, batch_size);
    batch.rewards.resize(batch_size);
    batch.actions.resize(static_cast<size_t>(batch_size));
    batch.dones.resize(static_cast<size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
        const auto &t = dataset.transitions[pick(rng)];
        for (int k = 0; k < dataset.state_dim; ++k) {
            batch.states(k, b) = t.s[static_cast<size_t>(k)];
            batch.next_states(k, b) = t.sn[static_cast<size_t>(k)];
        }
        batch.rewards(b) = t.r;
        batch.actions[static_cast<size_t>(b)] = t.a;
        batch.dones[static_cast<size_t>(b)] = t.done;
    }
    return batch;
}

StepStats update_step(TrainerState &state, CriticBatch batch, const TrainerConfig &config)
{
    batch.next_actions =
        draw_actions(state.critic, batch.next_states, config.risk, config.temperature, config.n_tau, state.rng);
    auto td = td_loss_and_grads(
        state.critic, state.target, batch, config.gamma, config.n_tau, config.n_tau, config.kappa, state.rng);
    StepStats stats;
    stats.td_loss = td.loss;
    double grad_alpha = -config.zeta_thresh;
    if (config.omega > 0.0) {
        const auto pen = codac_penalty_and_grads(
            state.critic, batch.states, batch.actions, state.alpha, config.omega, config.zeta_thresh, config.n_tau,
            state.rng);
        td.grad += pen.grad_theta;
        stats.penalty = pen.penalty;
        stats.gap = pen.gap;
        grad_alpha = pen.grad_alpha;
    } else {
        stats.penalty = state.alpha * grad_alpha;
    }
    state.optimizer.step(state.critic.params(), td.grad);
    if (!config.alpha_frozen()) {
        // Ascent on the penalty: alpha grows while the scaled gap exceeds the threshold.
        state.alpha = std::max(0.0, state.alpha + config.lr_alpha * grad_alpha);
    }
    polyak_update(state.target, state.critic);
    ++state.step;
    return stats;
}

EvalMetrics summarize_returns(std::vector<double> returns, long violations)
{
    if (returns.empty()) {
        throw std::invalid_argument("summarize_returns: no episodes");
    }
    EvalMetrics m;
    m.violations = violations;
    m.returns = returns;
    std::sort(returns.begin(), returns.end());
    const size_t n = returns.size();
    double total = 0.0;
    for (double r : returns) {
        total += r;
    }
    m.mean = total / static_cast<double>(n);
    m.median = n % 2 == 1 ? returns[n / 2] : 0.5 * (returns[n / 2 - 1] + returns[n / 2]);
    const size_t k = (n + 9) / 10;
    double tail = 0.0;
    for (size_t i = 0; i < k; ++i) {
        tail += returns[i];
    }
    m.cvar10 = tail / static_cast<double>(k);
    return m;
}

EvalMetrics evaluate(
    const CriticNet &critic,
    EpisodicEnv &env,
    int n_episodes,
    const DistortionSpec &risk,
    Rng &rng,
    int n_quantiles,
    std::vector<Trajectory> *trajectories)
{
    if (n_episodes < 1) {
        throw std::invalid_argument("evaluate: n_episodes must be at least 1");
    }
    std::vector<double> returns;
    long violations = 0;
    for (int e = 0; e < n_episodes; ++e) {
        Trajectory traj;
        auto obs = env.reset(rng);
        double total = 0.0;
        bool done = false;
        while (!done) {
            const int a = greedy_action(critic, obs, risk, n_quantiles, rng);
            auto step = env.step(a, rng);
            if (trajectories != nullptr) {
                traj.observations.push_back(obs);
                traj.actions.push_back(a);
                traj.rewards.push_back(step.reward);
            }
            total += step.reward;
            violations += step.violation ? 1 : 0;
            done = step.done;
            obs = std::move(step.observation);
        }
        if (trajectories != nullptr) {
            traj.observations.push_back(obs);
            trajectories->push_back(std::move(traj));
        }
        returns.push_back(total);
    }
    return summarize_returns(std::move(returns), violations);
}

TrainResult train(const VectorDataset &dataset, const TrainerConfig &config, EpisodicEnv *eval_env)
{
    if (dataset.empty()) {
        throw std::invalid_argument("train: empty dataset");
    }
    TrainResult result{init_trainer(dataset.state_dim, dataset.n_actions, config), {}};
    TrainerState &state = result.state;
    Rng batch_rng = derived_rng(config.seed, 2);
    Rng eval_rng = derived_rng(config.seed, 3);
    double td_sum = 0.0;
    double penalty_sum = 0.0;
    long in_window = 0;
    for (long step = 0; step < config.total_steps; ++step) {
        const auto stats = update_step(state, sample_batch(dataset, config.batch_size, batch_rng), config);
        td_sum += stats.td_loss;
        penalty_sum += stats.penalty;
        ++in_window;
        if (state.step % config.eval_interval == 0) {
            MetricsRow row;
            row.step = state.step;
            row.alpha = state.alpha;
            row.td_loss = td_sum / static_cast<double>(in_window);
            row.penalty = penalty_sum / static_cast<double>(in_window);
            if (eval_env != nullptr) {
                const auto m = evaluate(state.critic, *eval_env, config.eval_episodes, config.risk, eval_rng, config.n_tau);
                row.mean = m.mean;
                row.median = m.median;
                row.cvar10 = m.cvar10;
                row.violations = m.violations;
            } else {
                row.mean = row.median = row.cvar10 = std::numeric_limits<double>::quiet_NaN();
            }
            result.metrics.push_back(row);
            td_sum = penalty_sum = 0.0;
            in_window = 0;
        }
    }
    return result;
}

void write_metrics_csv(const std::vector<MetricsRow> &rows, std::ostream &out)
{
    out << "step,mean,median,cvar10,violations,alpha,td_loss,penalty\n";
    out.precision(10);
    for (const auto &r : rows) {
        out << r.step << ',' << r.mean << ',' << r.median << ',' << r.cvar10 << ',' << r.violations << ',' << r.alpha
            << ',' << r.td_loss << ',' << r.penalty << '\n';
    }
}

VectorDataset collect_replay_buffer(EpisodicEnv &env, const TrainerConfig &config, const OnlineCollectConfig &collect)
{
    if (collect.episodes < 1 || !(collect.epsilon >= 0.0 && collect.epsilon <= 1.0)) {
        throw std::invalid_argument("collect_replay_buffer: need episodes >= 1 and epsilon in [0, 1]");
    }
    TrainerConfig online = config;
    online.omega = 0.0;
    online.zeta_thresh = -1.0;
    online.risk = DistortionSpec::uniform();
    TrainerState state = init_trainer(env.state_dim(), env.n_actions(), online);
    Rng env_rng = derived_rng(config.seed, 4);
    Rng batch_rng = derived_rng(config.seed, 5);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> random_action(0, env.n_actions() - 1);

    VectorDataset buffer;
    buffer.state_dim = env.state_dim();
    buffer.n_actions = env.n_actions();
    buffer.meta.seed = config.seed;
    buffer.meta.env = env.descriptor().value("name", std::string{"unknown"});
    buffer.meta.env_descriptor = env.descriptor();
    buffer.meta.episodes = collect.episodes;
    buffer.meta.policy = "online-risk-neutral-eps" + std::to_string(collect.epsilon);
    for (int e = 0; e < collect.episodes; ++e) {
        auto obs = env.reset(env_rng);
        bool done = false;
        while (!done) {
            const int a = coin(env_rng) < collect.epsilon
                              ? random_action(env_rng)
                              : greedy_action(state.critic, obs, online.risk, online.n_tau, env_rng);
            auto step = env.step(a, env_rng);
            buffer.transitions.push_back({obs, a, step.reward, step.observation, step.terminal});
            done = step.done;
            obs = std::move(step.observation);
            if (static_cast<int>(buffer.size()) >= collect.warmup) {
                for (int u = 0; u < collect.updates_per_step; ++u) {
                    update_step(state, sample_batch(buffer, online.batch_size, batch_rng), online);
                }
            }
        }
    }
    return buffer;
}

GapProbe quantile_gap_probe(const CriticNet &critic, const VectorDataset &dataset, int n_probes, Rng &rng)
{
    if (dataset.empty() || n_probes < 1) {
        throw std::invalid_argument("quantile_gap_probe: need a nonempty dataset and at least one probe");
    }
    const int n_actions = critic.dims().n_actions;
    std::uniform_int_distribution<size_t> pick(0, dataset.size() - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    GapProbe probe;
    for (int k = 0; k < n_probes; ++k) {
        const auto &t = dataset.transitions[pick(rng)];
        const double tau[1] = {unif(rng)};
        const Eigen::VectorXd q = action_quantiles(critic, t.s, tau).col(0);
        double gap = 0.0;
        if (n_actions > 1) {
            const double others = (q.sum() - q(t.a)) / (n_actions - 1);
            gap = q(t.a) - others;
        }
        probe.gaps.push_back(gap);
        probe.positive += gap > 0.0 ? 1 : 0;
        ++probe.probes;
    }
    return probe;
}

} // namespace codac
