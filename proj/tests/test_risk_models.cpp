// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"
#include "support.hpp"

#include <meditool/error.hpp>
#include <meditool/risk_models.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace meditool;
using namespace meditool::risk;
using nlohmann::json;

namespace
{

ErrorCode code_of(const std::function<void()>& f)
{
    try
    {
        f();
    }
    catch (const Error& e)
    {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::InvalidArgument;
}

PatientRecord record(const RiskModel& m, const json& j)
{
    return m.patient_from_json(j);
}

} // namespace

TEST_CASE("bundled models load", "[risk_models]")
{
    auto const cvd = load_model(support::bundled("models/cvd10.model"));
    CHECK(cvd.kind() == ModelKind::CoxBaselineSurvival);
    CHECK(cvd.tool_name() == "cvd_risk");
    CHECK(cvd.test_vectors().size() == 12);

    auto const dm = load_model(support::bundled("models/diabetes10.model"));
    CHECK(dm.kind() == ModelKind::Logistic);
    CHECK(dm.features().size() == 20);
    CHECK(dm.features()[0].name == "hba1c");
    CHECK(dm.features()[3].name == "age");
}

TEST_CASE("malformed model files are rejected", "[risk_models]")
{
    CHECK(code_of([] { (void)load_model(support::fixture("bad_s0.model")); }) == ErrorCode::MalformedModelFile);
    CHECK(code_of([] { (void)load_model(support::fixture("missing_coefficient.model")); })
          == ErrorCode::CoefficientCountMismatch);
    CHECK(code_of([] { (void)load_model(support::fixture("does_not_exist.model")); }) == ErrorCode::MalformedModelFile);
    CHECK(code_of([] { (void)load_model_from_string("{not json"); }) == ErrorCode::MalformedModelFile);

    try
    {
        (void)load_model(support::fixture("bad_s0.model"));
    }
    catch (const Error& e)
    {
        REQUIRE(e.details().size() == 1);
        CHECK(e.details()[0] == "model.intercept_or_S0: baseline survival must lie in (0,1), got 1.2");
    }
}

TEST_CASE("every problem in a model document is reported", "[risk_models]")
{
    auto doc = support::small_cox_model();
    doc["kind"] = "weibull";
    doc["features"][0]["scale"] = 0;
    doc["features"][1]["reference"] = "other";
    try
    {
        (void)RiskModel::from_json(doc);
        FAIL("accepted");
    }
    catch (const Error& e)
    {
        CHECK(e.code() == ErrorCode::MalformedModelFile);
        CHECK(e.details().size() == 3);
    }
}

TEST_CASE("a wrong packaged test vector is rejected", "[risk_models]")
{
    auto doc = support::small_cox_model();
    doc["test_vectors"] = json::array({ { { "patient", { { "age", 50 }, { "sex", "female" } } },
                                          { "expected_probability", 0.1 + 1e-8 } } });
    CHECK(code_of([&] { (void)RiskModel::from_json(doc); }) == ErrorCode::MalformedModelFile);
    doc["test_vectors"][0]["expected_probability"] = 0.1;
    CHECK_NOTHROW(RiskModel::from_json(doc));
}

TEST_CASE("reference patient gives 1 - S0 and sigma(b)", "[risk_models]")
{
    auto const cox = RiskModel::from_json(support::small_cox_model(0.9));
    auto const p = predict(cox, cox.reference_patient());
    CHECK(p.linear_predictor == 0.0);
    CHECK(p.probability == 1.0 - 0.9);

    auto logistic_doc = support::small_cox_model();
    logistic_doc["kind"] = "logistic";
    logistic_doc["intercept_or_S0"] = 0.0;
    auto const logistic = RiskModel::from_json(logistic_doc);
    CHECK(predict(logistic, logistic.reference_patient()).probability == 0.5);

    for (auto const* file: { "models/cvd10.model", "models/diabetes10.model" })
    {
        auto const m = load_model(support::bundled(file));
        auto const at_means = predict(m, m.reference_patient());
        if (m.kind() == ModelKind::CoxBaselineSurvival)
            CHECK(at_means.probability == 1.0 - m.baseline_survival());
        else
            CHECK(at_means.probability == 1.0 / (1.0 + std::exp(-m.intercept())));
    }
}

TEST_CASE("packaged test vectors reproduce", "[risk_models]")
{
    for (auto const* file: { "models/cvd10.model", "models/diabetes10.model" })
    {
        auto const m = load_model(support::bundled(file));
        for (const auto& tv: m.test_vectors())
            CHECK(std::abs(predict(m, record(m, tv.patient)).probability - tv.expected_probability) <= 1e-10);
    }
    auto const fixture = load_model(support::fixture("logistic8.model"));
    CHECK(fixture.test_vectors().size() == 6);
}

TEST_CASE("risk engine agrees with the straight-line oracle", "[risk_models]")
{
    auto rng = std::mt19937_64(99);
    for (auto const* file: { "models/cvd10.model", "models/diabetes10.model" })
    {
        auto const doc = support::read_json(support::bundled(file));
        auto const m = RiskModel::from_json(doc);
        for (int i = 0; i < 150; ++i)
        {
            auto const patient = oracle::random_patient(doc, rng);
            INFO(file << " " << patient.dump());
            REQUIRE(m.validate(record(m, patient)).empty());
            CHECK(std::abs(predict(m, record(m, patient)).probability - oracle::risk_probability(doc, patient)) <= 1e-10);
        }
    }
}

TEST_CASE("linear predictor is clamped", "[risk_models]")
{
    auto const hi = RiskEstimate::from_linear_predictor(ModelKind::Logistic, 45.0, 0.0, "m", 10);
    CHECK(hi.clamped);
    CHECK(hi.linear_predictor == 30.0);
    auto const lo = RiskEstimate::from_linear_predictor(ModelKind::CoxBaselineSurvival, -50.0, 0.9, "m", 10);
    CHECK(lo.clamped);
    CHECK(lo.probability == Catch::Approx(1.0 - std::pow(0.9, std::exp(-30.0))).epsilon(1e-12));
    auto const mid = RiskEstimate::from_linear_predictor(ModelKind::Logistic, 0.0, 0.0, "m", 10);
    CHECK_FALSE(mid.clamped);
    CHECK(mid.percent == 50.0);
}

TEST_CASE("patient validation", "[risk_models]")
{
    auto const m = load_model(support::bundled("models/cvd10.model"));
    auto ok = *m.example_patient();
    CHECK(m.validate(record(m, ok)).empty());

    auto bad = ok;
    bad["age"] = 150;
    CHECK(m.validate(record(m, bad)) == std::vector<std::string> { "age=150 out of range [25,84] years" });

    bad = ok;
    bad["sex"] = "other";
    auto const issues = m.validate(record(m, bad));
    REQUIRE(issues.size() == 1);
    CHECK(issues[0].find("other") != std::string::npos);
    CHECK(issues[0].find("accepted levels: female, male") != std::string::npos);

    bad = ok;
    bad.erase("systolic_bp");
    bad["age"] = 60.5;
    bad["wingspan"] = 3;
    CHECK(m.validate(record(m, bad)).size() == 3);

    try
    {
        (void)predict(m, record(m, bad));
        FAIL("accepted");
    }
    catch (const Error& e)
    {
        CHECK(e.code() == ErrorCode::ValidationFailure);
        CHECK(e.details().size() == 3);
    }
}

TEST_CASE("counterfactual re-scoring", "[risk_models]")
{
    auto const m = load_model(support::bundled("models/cvd10.model"));
    auto const patient = record(m, *m.example_patient());

    auto const same = counterfactual(m, patient, {});
    CHECK(same.delta_percent == 0.0);
    CHECK(same.modified == same.baseline);

    auto const younger = counterfactual(m, patient, record(m, json { { "age", 50 } }));
    CHECK(younger.delta_percent < 0.0);
    auto modified = patient;
    modified["age"] = 50.0;
    CHECK(younger.modified.probability == predict(m, modified).probability);
    CHECK(younger.delta_percent == younger.modified.percent - younger.baseline.percent);

    try
    {
        (void)counterfactual(m, patient, record(m, json { { "age", 12 } }));
        FAIL("accepted");
    }
    catch (const Error& e)
    {
        CHECK(e.code() == ErrorCode::ValidationFailure);
        REQUIRE(e.details().size() == 1);
        CHECK(e.details()[0].rfind("override: age=12", 0) == 0);
    }
}

TEST_CASE("lowering age lowers CVD risk", "[risk_models]")
{
    auto const doc = support::read_json(support::bundled("models/cvd10.model"));
    auto const m = RiskModel::from_json(doc);
    REQUIRE(m.coefficients()[0] > 0.0);
    auto rng = std::mt19937_64(5);
    for (int i = 0; i < 100; ++i)
    {
        auto patient = oracle::random_patient(doc, rng);
        if (patient["age"].get<int>() == 25)
            patient["age"] = 26;
        auto const younger = std::uniform_int_distribution<int>(25, patient["age"].get<int>() - 1)(rng);
        auto const cf = counterfactual(m, record(m, patient), record(m, json { { "age", younger } }));
        INFO(patient.dump() << " -> " << younger);
        CHECK(cf.modified.probability < cf.baseline.probability);
    }
}

TEST_CASE("encoding and defaults", "[risk_models]")
{
    auto const m = load_model(support::bundled("models/cvd10.model"));
    auto const patient = record(m, *m.example_patient());
    auto const full = m.complete(patient);
    CHECK(std::get<std::string>(full.at("diabetes")) == "none");
    CHECK(std::get<bool>(full.at("migraine")) == false);
    CHECK(m.encode(patient) == m.encode(full));
    CHECK(m.term_names().size() == m.coefficients().size());
    CHECK(m.term_names().back() == "log_bmi");
    CHECK(m.patient_from_json(m.patient_to_json(full)) == full);
}
