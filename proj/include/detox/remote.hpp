#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "detox/distribution.hpp"
#include "detox/ngram.hpp"
#include "detox/paraphraser.hpp"

namespace detox {

inline constexpr double kRemoteTolerance = 1e-4;

struct RemoteEndpoint {
    std::string host = "127.0.0.1";
    int port = 8090;
    std::string path = "/logprobs";
    int timeout_seconds = 10;
    std::function<void(const std::string&)> warn = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
};

struct RemoteRequest {
    TokenIds prefix;
    std::optional<TokenIds> source;
    std::optional<std::string> cls;
};

struct RemoteResult {
    TokenDistribution dist;
    bool renormalized = false;
    std::string warning;
};

inline nlohmann::json to_json(const RemoteRequest& req) {
    nlohmann::json j{{"prefix", req.prefix}};
    if (req.source) j["source"] = *req.source;
    if (req.cls) j["class"] = *req.cls;
    return j;
}

/// Validates a `{"logprobs": [...]}` payload. Mass off by more than 1e-4 is renormalized and flagged.
inline RemoteResult parse_remote_response(const std::string& body, std::size_t vocab_size) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw RemoteError(std::string("remote: invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("logprobs")) throw RemoteError("remote: missing field 'logprobs'");
    const auto& arr = j.at("logprobs");
    if (!arr.is_array()) throw RemoteError("remote: 'logprobs' must be an array");
    if (arr.size() != vocab_size)
        throw RemoteError("remote: expected " + std::to_string(vocab_size) + " logprobs, got " + std::to_string(arr.size()));
    std::vector<double> lp;
    lp.reserve(arr.size());
    for (const auto& x : arr) {
        if (!x.is_number()) throw RemoteError("remote: non-numeric logprob");
        const double v = x.get<double>();
        if (std::isnan(v) || v > 0) throw RemoteError("remote: logprob must be a finite value <= 0");
        lp.push_back(std::max(v, kLogFloor));
    }
    RemoteResult out;
    const double mass = TokenDistribution(lp).total_mass();
    if (!(mass > 0)) throw RemoteError("remote: distribution has no mass");
    if (std::abs(mass - 1.0) > kRemoteTolerance) {
        const double z = std::log(mass);
        for (auto& v : lp) v = std::max(v - z, kLogFloor);
        out.renormalized = true;
        out.warning = "remote distribution summed to " + std::to_string(mass) + "; renormalized";
    }
    out.dist = TokenDistribution(std::move(lp));
    return out;
}

inline RemoteResult remote_logprobs(const RemoteEndpoint& endpoint, const RemoteRequest& request, std::size_t vocab_size) {
    httplib::Client client(endpoint.host, endpoint.port);
    client.set_connection_timeout(endpoint.timeout_seconds, 0);
    client.set_read_timeout(endpoint.timeout_seconds, 0);
    auto res = client.Post(endpoint.path, to_json(request).dump(), "application/json");
    if (!res) throw RemoteError("remote: request to " + endpoint.host + ":" + std::to_string(endpoint.port) + " failed (" +
                                httplib::to_string(res.error()) + ")");
    if (res->status != 200) throw RemoteError("remote: HTTP status " + std::to_string(res->status));
    auto out = parse_remote_response(res->body, vocab_size);
    if (out.renormalized && endpoint.warn) endpoint.warn(out.warning);
    return out;
}

/// Paraphraser served over HTTP.
class RemoteParaphraser final : public Paraphraser {
public:
    RemoteParaphraser(VocabPtr vocab, RemoteEndpoint endpoint) : vocab_(std::move(vocab)), endpoint_(std::move(endpoint)) {}

    const Vocabulary& vocabulary() const override { return *vocab_; }

    TokenDistribution next_logprobs(const TokenIds& source, const TokenIds& prefix) const override {
        return remote_logprobs(endpoint_, {prefix, source, std::nullopt}, vocab_->size()).dist;
    }

private:
    VocabPtr vocab_;
    RemoteEndpoint endpoint_;
};

/// Class-conditional LM served over HTTP; the class is sent by name.
class RemoteClassConditional final : public ClassConditionalModel {
public:
    RemoteClassConditional(VocabPtr vocab, std::vector<std::string> classes, RemoteEndpoint endpoint, std::vector<double> prior = {})
        : vocab_(std::move(vocab)),
          classes_(std::move(classes)),
          prior_(prior.empty() ? uniform_prior(classes_.size()) : std::move(prior)),
          endpoint_(std::move(endpoint)) {
        check_prior(prior_, classes_.size());
    }

    std::size_t num_classes() const override { return classes_.size(); }
    const std::vector<double>& prior() const override { return prior_; }
    const Vocabulary& vocabulary() const override { return *vocab_; }

    TokenDistribution next_logprobs(int cls, const TokenIds& prefix) const override {
        if (cls < 0 || static_cast<std::size_t>(cls) >= classes_.size()) throw InvalidArgument("unknown class " + std::to_string(cls));
        return remote_logprobs(endpoint_, {prefix, std::nullopt, classes_[static_cast<std::size_t>(cls)]}, vocab_->size()).dist;
    }

private:
    VocabPtr vocab_;
    std::vector<std::string> classes_;
    std::vector<double> prior_;
    RemoteEndpoint endpoint_;
};

} // namespace detox
