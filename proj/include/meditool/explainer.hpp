// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shapley attributions relative to a single reference record.
//
// v(S) evaluates the value function on a hybrid record that takes features in S
// from the patient and the rest from the baseline. For a risk model the value
// function is the probability and derived features are recomputed from the
// hybrid base features, so attributions always land on clinician-facing inputs.

#include <meditool/risk_models.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace meditool::xai
{

using ValueFunction = std::function<double(std::span<const double>)>;

inline constexpr std::size_t kExactFeatureCap = 20;

enum class Method
{
    Exact,
    Sampled,
    LinearClosedForm,
};

std::string_view to_string(Method method) noexcept;

struct AttributionVector
{
    std::vector<std::string> features;
    std::vector<double> phi;
    double base_value = 0.0;
    double prediction = 0.0;
    Method method = Method::Exact;
    std::size_t n_permutations = 0;   // sampled only
    std::uint64_t seed = 0;           // sampled only
    std::vector<double> standard_error; // sampled only, per feature
};

/// Full coalition enumeration, 2^n evaluations. Throws Error{TooManyFeatures}
/// above kExactFeatureCap.
AttributionVector exact_shapley(const ValueFunction& value, std::span<const double> patient,
                                std::span<const double> baseline, std::vector<std::string> names = {});

/// Monte Carlo over random permutations (seeded mt19937_64). The residual
/// against exact efficiency is spread in proportion to |phi|.
AttributionVector sampled_shapley(const ValueFunction& value, std::span<const double> patient,
                                  std::span<const double> baseline, std::size_t n_permutations, std::uint64_t seed,
                                  std::vector<std::string> names = {});

/// Same estimator over an explicit permutation list, e.g. all n! orders.
AttributionVector permutation_shapley(const ValueFunction& value, std::span<const double> patient,
                                      std::span<const double> baseline,
                                      std::span<const std::vector<std::size_t>> permutations,
                                      std::vector<std::string> names = {});

/// phi_i = w_i (x_i - b_i) for f(x) = intercept + sum w_i x_i on already
/// standardized values.
AttributionVector linear_shapley(std::span<const double> weights, double intercept, std::span<const double> patient,
                                 std::span<const double> baseline, std::vector<std::string> names = {});

// Risk-model entry points. Both records are validated first (Error{ValidationFailure}).
AttributionVector exact_shapley(const risk::RiskModel& model, const risk::PatientRecord& patient,
                                const risk::PatientRecord& baseline);
AttributionVector sampled_shapley(const risk::RiskModel& model, const risk::PatientRecord& patient,
                                  const risk::PatientRecord& baseline, std::size_t n_permutations, std::uint64_t seed);

ValueFunction probability_function(const risk::RiskModel& model);

struct Contributor
{
    std::string feature;
    double phi = 0.0;
    std::string direction; // "increases", "decreases", or "none" for phi == 0
};

/// Sorted by |phi| descending, ties in feature order. k larger than n returns all.
std::vector<Contributor> top_contributors(const AttributionVector& attr, std::size_t k);

} // namespace meditool::xai
