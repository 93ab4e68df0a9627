#pragma once

#include "casebandit/linalg.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace casebandit {

/// One retained experience. Payloads are opaque byte strings; the synthetic
/// environments store numeric vectors serialized as text.
struct Case {
    uint64_t id = 0;
    std::string query_payload;
    std::string solution_payload;
    int reward = 1;
    Vec embedding; // unit norm
    uint64_t retained_at = 0;
};

/// Append-only episodic memory. Only successful cases are ever added and
/// nothing is ever removed, so ids are strictly increasing with position.
class CaseBank {
public:
    explicit CaseBank(std::size_t embedding_dim) : embedding_dim_(embedding_dim) {}

    std::size_t size() const { return cases_.size(); }
    bool empty() const { return cases_.empty(); }
    std::size_t embedding_dim() const { return embedding_dim_; }
    const Case& at(std::size_t i) const { return cases_[i]; }
    const std::vector<Case>& cases() const { return cases_; }

    /// Appends on reward 1, no-op on reward 0. Returns true if retained.
    bool retain(std::string query_payload, std::string solution_payload, int reward,
                const Vec& embedding, uint64_t step);

    /// Top-K cases by inner product with a unit-norm query embedding,
    /// descending, ties broken by ascending id. Empty bank gives an empty
    /// list (the caller falls back to zero-shot).
    std::vector<std::size_t> recall(const Vec& query_emb, std::size_t k) const;

    void save(const std::string& path) const;
    static CaseBank load(const std::string& path);

private:
    std::size_t embedding_dim_;
    std::vector<Case> cases_;
    uint64_t next_id_ = 0;
};

/// Bandit context for a (query, case) pair: concatenate the two unit
/// embeddings, renormalize, then duplicate halves so the result is a unit
/// vector with equal halves (dimension 4x the embedding dimension).
Vec context_features(const Vec& query_emb, const Vec& case_emb);

} // namespace casebandit
