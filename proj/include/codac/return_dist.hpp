#pragma once

#include <nlohmann/json.hpp>

#include <span>
#include <vector>

namespace codac {

/// Midpoint of the i-th of n equal quantile bins, (2i+1)/(2n) for i in [0, n).
inline double quantile_midpoint(int i, int n) { return (2.0 * i + 1.0) / (2.0 * n); }

std::vector<double> quantile_midpoints(int n);

/// N-point quantile function on the midpoint grid. Values are nondecreasing.
class QuantileFn {
public:
    QuantileFn() = default;
    explicit QuantileFn(std::vector<double> values);

    int n() const { return static_cast<int>(values_.size()); }
    const std::vector<double> &values() const { return values_; }
    double operator[](int i) const { return values_[static_cast<size_t>(i)]; }
    double tau(int i) const { return quantile_midpoint(i, n()); }

private:
    std::vector<double> values_;
};

/// Quantile functions for every (s, a), stored flat as [s][a][i].
struct ZTable {
    int n_states = 0;
    int n_actions = 0;
    int n = 0;
    double v_min = 0.0;
    double v_max = 0.0;
    std::vector<double> values;

    ZTable() = default;
    ZTable(int n_states, int n_actions, int n, double v_min, double v_max, double fill = 0.0);

    std::span<const double> at(int s, int a) const { return {values.data() + offset(s, a), static_cast<size_t>(n)}; }
    std::span<double> at(int s, int a) { return {values.data() + offset(s, a), static_cast<size_t>(n)}; }
    QuantileFn quantile(int s, int a) const;
    bool same_shape(const ZTable &other) const;

    size_t offset(int s, int a) const { return (static_cast<size_t>(s) * n_actions + a) * n; }
};

struct DistortionSpec {
    enum class Kind { uniform, cvar };
    Kind kind = Kind::uniform;
    double xi = 1.0;

    static DistortionSpec uniform() { return {Kind::uniform, 1.0}; }
    static DistortionSpec cvar(double xi);
};

struct WeightedSample {
    double value;
    double weight;
};

QuantileFn from_weighted_samples(std::vector<WeightedSample> samples, int n);

/// Writes the weighted empirical quantiles at the n midpoints of `out`.
/// Sorts `samples` in place; weights need not be normalized.
void project_quantiles(std::span<WeightedSample> samples, std::span<double> out);

double wasserstein(std::span<const double> a, std::span<const double> b, double p);
double wasserstein(const QuantileFn &a, const QuantileFn &b, double p);
double sup_wasserstein(const ZTable &a, const ZTable &b, double p);

/// Largest absolute difference over every quantile entry (W-infinity on the grid).
double sup_norm(const ZTable &a, const ZTable &b);

/// Midpoint quadrature of the distorted expectation; `values` must be sorted.
double distorted_expectation(std::span<const double> values, const DistortionSpec &g);
double distorted_expectation(const QuantileFn &q, const DistortionSpec &g);

double huber_quantile_loss(double delta, double tau, double kappa);
/// d/d(delta) of huber_quantile_loss.
double huber_quantile_loss_grad(double delta, double tau, double kappa);

nlohmann::json ztable_to_json(const ZTable &z);
ZTable ztable_from_json(const nlohmann::json &j);

} // namespace codac
