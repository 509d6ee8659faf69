// SPDX-License-Identifier: Apache-2.0

#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "patchtrace/embedding.hpp"

namespace patchtrace {

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string base_url, std::string model,
                                             std::optional<std::string> bearer_token, RetryPolicy retry,
                                             std::size_t batch_size, std::chrono::seconds timeout)
    : model_(std::move(model)),
      bearer_token_(std::move(bearer_token)),
      retry_(retry),
      batch_size_(batch_size == 0 ? 1 : batch_size),
      timeout_(timeout) {
    if (retry_.max_attempts < 1) retry_.max_attempts = 1;
    const auto scheme_end = base_url.find("://");
    const auto host_begin = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_begin = base_url.find('/', host_begin);
    if (path_begin == std::string::npos) {
        scheme_host_port_ = base_url;
        path_ = "/embed";
    } else {
        scheme_host_port_ = base_url.substr(0, path_begin);
        std::string prefix = base_url.substr(path_begin);
        while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
        path_ = prefix + "/embed";
    }
    if (scheme_end == std::string::npos) scheme_host_port_ = "http://" + scheme_host_port_;
}

HttpEmbeddingProvider::~HttpEmbeddingProvider() = default;

std::vector<std::vector<float>> HttpEmbeddingProvider::embed(std::span<const std::string> texts) {
    nlohmann::json request{{"model", model_}, {"inputs", nlohmann::json::array()}};
    for (const auto& t : texts) request["inputs"].push_back(t);
    const std::string body = request.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);

    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers;
    if (bearer_token_) headers.emplace("Authorization", "Bearer " + *bearer_token_);

    auto backoff = retry_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
        auto res = client.Post(path_, headers, body, "application/json");
        if (res && res->status == 200) {
            nlohmann::json reply;
            try {
                reply = nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw EmbeddingError(fmt::format("embedding server sent invalid JSON: {}", e.what()), false, attempt);
            }
            if (!reply.is_object() || !reply.contains("vectors") || !reply["vectors"].is_array())
                throw EmbeddingError("embedding server reply lacks a 'vectors' array", false, attempt);
            std::vector<std::vector<float>> out;
            out.reserve(reply["vectors"].size());
            try {
                for (const auto& v : reply["vectors"]) out.push_back(v.get<std::vector<float>>());
            } catch (const nlohmann::json::exception& e) {
                throw EmbeddingError(fmt::format("malformed vector in reply: {}", e.what()), false, attempt);
            }
            return out;
        }
        last_error = res ? fmt::format("HTTP {}", res->status) : httplib::to_string(res.error());
        if (attempt < retry_.max_attempts) {
            std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(
                static_cast<std::int64_t>(static_cast<double>(backoff.count()) * retry_.multiplier));
        }
    }
    throw EmbeddingError(fmt::format("embedding request to {}{} failed after {} attempts: {}", scheme_host_port_,
                                     path_, retry_.max_attempts, last_error),
                         true, retry_.max_attempts);
}

}  // namespace patchtrace
