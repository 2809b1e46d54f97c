// SPDX-License-Identifier: Apache-2.0
#pragma once

// Coefficient-file driven risk models.
//
// Continuous features enter standardized, (x - mean) / scale. Booleans enter as
// 0/1 and categoricals as level indicators with the reference level at zero.
// Derived features (product, square, natural log over base features) are
// centred on their value at the reference patient, so a patient at the
// reference values has a linear predictor of exactly zero (Cox-style) or the
// intercept (logistic).
//
//   Cox-style:  p = 1 - S0^exp(eta)
//   logistic:   p = 1 / (1 + exp(-eta))

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace meditool::risk
{

inline constexpr double kLinearPredictorClamp = 30.0;
inline constexpr double kTestVectorTolerance = 1e-10;

enum class ModelKind
{
    CoxBaselineSurvival,
    Logistic,
};

enum class FeatureType
{
    Continuous,
    Boolean,
    Categorical,
};

enum class DerivedOp
{
    Product,
    Square,
    Log,
};

std::string_view to_string(ModelKind kind) noexcept;
std::string_view to_string(FeatureType type) noexcept;

using FeatureValue = std::variant<double, bool, std::string>;
using PatientRecord = std::map<std::string, FeatureValue, std::less<>>;

struct Feature
{
    std::string name;
    FeatureType type = FeatureType::Continuous;
    std::string units;
    std::string description;
    bool integer = false;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double scale = 1.0;
    std::vector<std::string> levels; // categorical only; levels[reference_level] is the reference
    std::size_t reference_level = 0;
    std::optional<FeatureValue> default_value; // only booleans and categoricals may default
};

struct DerivedFeature
{
    std::string name;
    DerivedOp op = DerivedOp::Product;
    std::vector<std::size_t> inputs; // indices into features()
    double scale = 1.0;
    double centre = 0.0; // value at the reference patient
};

struct RiskEstimate
{
    double probability = 0.0;
    double percent = 0.0;
    std::string model_id;
    int horizon_years = 10;
    double linear_predictor = 0.0;
    bool clamped = false;

    /// Builds an estimate from a linear predictor, clamping it to +/-30.
    static RiskEstimate from_linear_predictor(ModelKind kind, double eta, double baseline_survival,
                                              std::string model_id, int horizon_years);

    friend bool operator==(const RiskEstimate&, const RiskEstimate&) = default;
};

struct Counterfactual
{
    RiskEstimate baseline;
    RiskEstimate modified;
    double delta_percent = 0.0;
};

struct TestVector
{
    nlohmann::json patient;
    double expected_probability = 0.0;
};

class RiskModel
{
  public:
    /// Parses and validates a model document. Throws Error{MalformedModelFile}
    /// with one detail per problem, or Error{CoefficientCountMismatch}.
    static RiskModel from_json(const nlohmann::json& doc);

    [[nodiscard]] const std::string& model_id() const noexcept { return _modelId; }
    [[nodiscard]] const std::string& title() const noexcept { return _title; }
    [[nodiscard]] const std::string& tool_name() const noexcept { return _toolName; }
    [[nodiscard]] const std::string& description() const noexcept { return _description; }
    [[nodiscard]] const std::string& provenance_note() const noexcept { return _provenanceNote; }
    [[nodiscard]] ModelKind kind() const noexcept { return _kind; }
    [[nodiscard]] int horizon_years() const noexcept { return _horizonYears; }
    [[nodiscard]] double intercept() const noexcept { return _intercept; }
    [[nodiscard]] double baseline_survival() const noexcept { return _baselineSurvival; }
    [[nodiscard]] const std::vector<Feature>& features() const noexcept { return _features; }
    [[nodiscard]] const std::vector<DerivedFeature>& derived_features() const noexcept { return _derived; }
    [[nodiscard]] const std::vector<std::string>& term_names() const noexcept { return _termNames; }
    [[nodiscard]] const std::vector<double>& coefficients() const noexcept { return _coefficients; }
    [[nodiscard]] const std::vector<TestVector>& test_vectors() const noexcept { return _testVectors; }
    [[nodiscard]] const std::optional<nlohmann::json>& example_patient() const noexcept { return _examplePatient; }

    [[nodiscard]] std::optional<std::size_t> feature_index(std::string_view name) const;

    /// Patient at the reference means (continuous), false (boolean) and the
    /// reference level (categorical).
    [[nodiscard]] PatientRecord reference_patient() const;

    /// One raw value per base feature: continuous value, 0/1, or level index.
    /// Applies declared defaults. Precondition: validate() returned no issues.
    [[nodiscard]] std::vector<double> encode(const PatientRecord& patient) const;

    /// Linear predictor over an encoded record, before clamping.
    [[nodiscard]] double linear_predictor(std::span<const double> encoded) const;

    /// Probability over an encoded record (clamped linear predictor).
    [[nodiscard]] double probability(std::span<const double> encoded) const;

    [[nodiscard]] std::vector<std::string> validate(const PatientRecord& patient) const;

    /// Converts tool/JSON arguments to a record, using feature types to pick the
    /// value representation. Unknown keys are kept so validate() can report them.
    [[nodiscard]] PatientRecord patient_from_json(const nlohmann::json& j) const;
    [[nodiscard]] nlohmann::json patient_to_json(const PatientRecord& patient) const;

    /// Record with declared defaults filled in.
    [[nodiscard]] PatientRecord complete(const PatientRecord& patient) const;

  private:
    std::string _modelId;
    std::string _title;
    std::string _toolName;
    std::string _description;
    std::string _provenanceNote;
    ModelKind _kind = ModelKind::Logistic;
    int _horizonYears = 10;
    double _intercept = 0.0;
    double _baselineSurvival = 0.0;
    std::vector<Feature> _features;
    std::vector<DerivedFeature> _derived;
    std::vector<std::string> _termNames;
    std::vector<double> _coefficients;
    std::vector<TestVector> _testVectors;
    std::optional<nlohmann::json> _examplePatient;
};

RiskModel load_model(const std::filesystem::path& model_file);
RiskModel load_model_from_string(std::string_view document);

/// Missing required features, out-of-range values and unknown levels, all of them.
std::vector<std::string> validate_patient(const RiskModel& model, const PatientRecord& patient);

/// Throws Error{ValidationFailure} with the issues as details.
RiskEstimate predict(const RiskModel& model, const PatientRecord& patient);

/// Throws Error{ValidationFailure}; details are prefixed "baseline: " or "override: ".
Counterfactual counterfactual(const RiskModel& model, const PatientRecord& patient, const PatientRecord& overrides);

} // namespace meditool::risk
