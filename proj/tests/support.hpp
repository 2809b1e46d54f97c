// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <meditool/runtime.hpp>
#include <meditool/session_service.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace support
{

inline std::filesystem::path fixture(const std::string& name)
{
    return std::filesystem::path(MEDITOOL_TEST_DATA) / name;
}

inline std::filesystem::path bundled(const std::string& relative)
{
    return meditool::data_dir() / relative;
}

inline nlohmann::json read_json(const std::filesystem::path& p)
{
    auto in = std::ifstream(p);
    return nlohmann::json::parse(in);
}

inline std::string read_text(const std::filesystem::path& p)
{
    auto in = std::ifstream(p, std::ios::binary);
    auto s = std::stringstream {};
    s << in.rdbuf();
    return s.str();
}

class TempDir
{
  public:
    TempDir()
    {
        auto rng = std::random_device {};
        _path = std::filesystem::temp_directory_path() / ("meditool-test-" + std::to_string(rng()) + std::to_string(rng()));
        std::filesystem::create_directories(_path);
    }
    ~TempDir()
    {
        auto ec = std::error_code {};
        std::filesystem::remove_all(_path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return _path; }

  private:
    std::filesystem::path _path;
};

inline std::chrono::system_clock::time_point fixed_time()
{
    return std::chrono::system_clock::time_point(std::chrono::seconds(1704067200));
}

/// Bundled models and corpus with a scripted backend and a fixed clock.
inline std::unique_ptr<meditool::Runtime> scripted_runtime(std::vector<std::string> script,
                                                           meditool::AppConfig config = meditool::AppConfig::defaults())
{
    auto backend = std::make_shared<meditool::llm::ScriptedBackend>(std::move(script));
    return std::make_unique<meditool::Runtime>(std::move(config), std::move(backend), [] { return fixed_time(); });
}

inline const char* kCvdCall = "Thought: I need the CVD risk.\nAction: cvd_risk\nAction Input: {\"age\": 68, \"sex\": "
                               "\"male\", \"smoking\": \"ex_smoker\", \"systolic_bp\": 148, \"chol_hdl_ratio\": 4.8, "
                               "\"bmi\": 29.5, \"treated_hypertension\": true}";

/// Minimal Cox-style model document for parser and formula checks.
inline nlohmann::json small_cox_model(double s0 = 0.9)
{
    return {
        { "model_id", "tiny" },
        { "kind", "cox_baseline_survival" },
        { "intercept_or_S0", s0 },
        { "features",
          { { { "name", "age" }, { "type", "continuous" }, { "units", "years" }, { "integer", true }, { "min", 25 },
              { "max", 84 }, { "mean", 50 }, { "scale", 10 } },
            { { "name", "sex" }, { "type", "categorical" }, { "levels", { "female", "male" } }, { "reference", "female" } },
            { { "name", "smoker" }, { "type", "boolean" }, { "default", false } } } },
        { "coefficients",
          { { { "term", "age" }, { "beta", 0.7 } },
            { { "term", "sex=male" }, { "beta", 0.4 } },
            { { "term", "smoker" }, { "beta", 0.6 } } } },
    };
}

} // namespace support
