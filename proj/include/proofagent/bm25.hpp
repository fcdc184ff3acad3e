// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace proofagent {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct Bm25Doc {
    std::string id;
    std::string text;
};

/// Lowercased maximal runs of [A-Za-z0-9_]. Underscores survive inside an
/// identifier (exp2R_ge0 stays one token) but not at either end.
inline std::vector<std::string> bm25_tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        auto first = cur.find_first_not_of('_');
        if (first != std::string::npos) {
            auto last = cur.find_last_not_of('_');
            out.push_back(cur.substr(first, last - first + 1));
        }
        cur.clear();
    };
    for (char c : s) {
        if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_') {
            cur.push_back(c);
        } else if (c >= 'A' && c <= 'Z') {
            cur.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if (!cur.empty()) {
            flush();
        }
    }
    if (!cur.empty()) flush();
    return out;
}

/// Okapi BM25 over a fixed document set. Query terms count with their
/// multiplicity. IDF is ln((N - n + 0.5) / (n + 0.5)) floored at 0.
class Bm25Index {
public:
    explicit Bm25Index(std::vector<Bm25Doc> docs, Bm25Params params = {})
        : docs_(std::move(docs)), params_(params) {
        tf_.resize(docs_.size());
        len_.resize(docs_.size());
        double total = 0.0;
        for (std::size_t i = 0; i < docs_.size(); ++i) {
            auto toks = bm25_tokenize(docs_[i].text);
            len_[i] = static_cast<double>(toks.size());
            total += len_[i];
            for (auto& t : toks) ++tf_[i][t];
            for (const auto& [t, _] : tf_[i]) ++df_[t];
        }
        avgdl_ = docs_.empty() ? 0.0 : total / static_cast<double>(docs_.size());
    }

    double idf(const std::string& term) const {
        auto it = df_.find(term);
        double n = it == df_.end() ? 0.0 : static_cast<double>(it->second);
        double N = static_cast<double>(docs_.size());
        return std::max(0.0, std::log((N - n + 0.5) / (n + 0.5)));
    }

    double score(std::size_t doc, const std::vector<std::string>& query) const {
        double s = 0.0;
        double norm = avgdl_ > 0.0 ? len_[doc] / avgdl_ : 0.0;
        for (const auto& q : query) {
            auto it = tf_[doc].find(q);
            if (it == tf_[doc].end()) continue;
            double f = it->second;
            s += idf(q) * (f * (params_.k1 + 1.0)) / (f + params_.k1 * (1.0 - params_.b + params_.b * norm));
        }
        return s;
    }

    /// Top-k (id, score) pairs; equal scores order by id.
    std::vector<std::pair<std::string, double>> rank(std::string_view query, std::size_t k) const {
        auto q = bm25_tokenize(query);
        std::vector<std::pair<std::string, double>> scored;
        scored.reserve(docs_.size());
        for (std::size_t i = 0; i < docs_.size(); ++i) scored.emplace_back(docs_[i].id, score(i, q));
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (scored.size() > k) scored.resize(k);
        return scored;
    }

    std::size_t size() const noexcept { return docs_.size(); }

private:
    std::vector<Bm25Doc> docs_;
    Bm25Params params_;
    std::vector<std::unordered_map<std::string, int>> tf_;
    std::vector<double> len_;
    std::unordered_map<std::string, int> df_;
    double avgdl_ = 0.0;
};

/// Ranked ids of the k best documents for `query`.
inline std::vector<std::string> bm25_rank(std::string_view query, const std::vector<Bm25Doc>& docs, std::size_t k,
                                          Bm25Params params = {}) {
    std::vector<std::string> ids;
    for (auto& [id, _] : Bm25Index(docs, params).rank(query, k)) ids.push_back(id);
    return ids;
}

} // namespace proofagent
