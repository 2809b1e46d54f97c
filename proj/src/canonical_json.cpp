// SPDX-License-Identifier: Apache-2.0
#include <meditool/canonical_json.hpp>

#include <fmt/format.h>

#include <openssl/evp.h>

#include <array>
#include <ctime>
#include <stdexcept>

namespace meditool
{

namespace
{

void write_canonical(const nlohmann::json& value, std::string& out)
{
    switch (value.type())
    {
        case nlohmann::json::value_t::object: {
            out += '{';
            bool first = true;
            // nlohmann::json objects are std::map-backed, so iteration is key-sorted.
            for (const auto& [key, item]: value.items())
            {
                if (!first)
                    out += ", ";
                first = false;
                out += nlohmann::json(key).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
                out += ": ";
                write_canonical(item, out);
            }
            out += '}';
            break;
        }
        case nlohmann::json::value_t::array: {
            out += '[';
            bool first = true;
            for (const auto& item: value)
            {
                if (!first)
                    out += ", ";
                first = false;
                write_canonical(item, out);
            }
            out += ']';
            break;
        }
        default: out += value.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace); break;
    }
}

} // namespace

std::string canonical_json(const nlohmann::json& value)
{
    auto out = std::string {};
    write_canonical(value, out);
    return out;
}

std::string sha256_hex(std::string_view data)
{
    auto digest = std::array<unsigned char, EVP_MAX_MD_SIZE> {};
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");

    auto hex = std::string {};
    hex.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i)
        hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

std::string format_timestamp(std::chrono::system_clock::time_point tp)
{
    auto const millis = std::chrono::time_point_cast<std::chrono::milliseconds>(tp);
    auto const seconds = std::chrono::floor<std::chrono::seconds>(millis);
    auto const fraction = (millis - seconds).count();
    auto const raw = std::chrono::system_clock::to_time_t(seconds);
    std::tm utc {};
    gmtime_r(&raw, &utc);
    return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z",
                       utc.tm_year + 1900, utc.tm_mon + 1, utc.tm_mday,
                       utc.tm_hour, utc.tm_min, utc.tm_sec, fraction);
}

} // namespace meditool
