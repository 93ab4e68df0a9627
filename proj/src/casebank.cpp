#include "casebandit/casebank.hpp"

#include "casebandit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace casebandit {

namespace {

std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape(const std::string& s, std::size_t line_no) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out += s[i];
            continue;
        }
        if (i + 1 >= s.size()) throw parse_error("dangling escape", line_no);
        switch (s[++i]) {
            case '\\': out += '\\'; break;
            case 't': out += '\t'; break;
            case 'n': out += '\n'; break;
            case 'r': out += '\r'; break;
            default: throw parse_error("unknown escape sequence", line_no);
        }
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == sep) {
            fields.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return fields;
}

} // namespace

bool CaseBank::retain(std::string query_payload, std::string solution_payload, int reward,
                      const Vec& embedding, uint64_t step) {
    if (reward != 0 && reward != 1) throw std::invalid_argument("retain: reward must be 0 or 1");
    if (embedding.size() != embedding_dim_) {
        throw std::invalid_argument("retain: embedding dimension mismatch");
    }
    double n = norm2(embedding);
    if (std::abs(n - 1.0) > 1e-6) {
        throw std::invalid_argument("retain: embedding not unit norm (|e| = " + std::to_string(n) + ")");
    }
    if (reward == 0) return false;
    Case c;
    c.id = next_id_++;
    c.query_payload = std::move(query_payload);
    c.solution_payload = std::move(solution_payload);
    c.reward = 1;
    c.embedding = embedding;
    c.retained_at = step;
    cases_.push_back(std::move(c));
    return true;
}

std::vector<std::size_t> CaseBank::recall(const Vec& query_emb, std::size_t k) const {
    if (k == 0) throw std::invalid_argument("recall: K must be positive");
    if (query_emb.size() != embedding_dim_) {
        throw std::invalid_argument("recall: query embedding dimension mismatch");
    }
    std::vector<std::size_t> idx(cases_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<double> sims(cases_.size());
    for (std::size_t i = 0; i < cases_.size(); ++i) sims[i] = dot(query_emb, cases_[i].embedding);

    auto better = [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return cases_[a].id < cases_[b].id;
    };
    std::size_t take = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), better);
    idx.resize(take);
    return idx;
}

void CaseBank::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw parse_error("cannot open for writing: " + path);
    out << "casebank\tv1\tdim=" << embedding_dim_ << "\n";
    for (const Case& c : cases_) {
        out << c.id << '\t' << c.retained_at << '\t' << c.reward << '\t';
        for (std::size_t i = 0; i < c.embedding.size(); ++i) {
            if (i) out << ',';
            out << fmt_double(c.embedding[i]);
        }
        out << '\t' << escape(c.query_payload) << '\t' << escape(c.solution_payload) << '\n';
    }
    if (!out) throw parse_error("failed writing " + path);
}

CaseBank CaseBank::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw parse_error("empty case bank file", 1);
    auto header = split(line, '\t');
    if (header.size() != 3 || header[0] != "casebank" || header[1] != "v1" ||
        header[2].rfind("dim=", 0) != 0) {
        throw parse_error("bad case bank header", 1);
    }
    std::size_t dim = 0;
    try {
        dim = static_cast<std::size_t>(std::stoull(header[2].substr(4)));
    } catch (const std::exception&) {
        throw parse_error("bad embedding dimension in header", 1);
    }

    CaseBank bank(dim);
    std::size_t line_no = 1;
    uint64_t prev_id = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) throw parse_error("empty record", line_no);
        auto fields = split(line, '\t');
        if (fields.size() != 6) throw parse_error("expected 6 tab-separated fields", line_no);
        Case c;
        try {
            c.id = std::stoull(fields[0]);
            c.retained_at = std::stoull(fields[1]);
            c.reward = std::stoi(fields[2]);
        } catch (const std::exception&) {
            throw parse_error("bad numeric field", line_no);
        }
        if (c.reward != 1) throw parse_error("retained case with reward != 1", line_no);
        if (!first && c.id <= prev_id) throw parse_error("ids not strictly increasing", line_no);
        for (const std::string& tok : split(fields[3], ',')) {
            try {
                std::size_t used = 0;
                double v = std::stod(tok, &used);
                if (used != tok.size()) throw std::invalid_argument(tok);
                c.embedding.push_back(v);
            } catch (const std::exception&) {
                throw parse_error("bad embedding value '" + tok + "'", line_no);
            }
        }
        if (c.embedding.size() != dim) throw parse_error("embedding dimension mismatch", line_no);
        c.query_payload = unescape(fields[4], line_no);
        c.solution_payload = unescape(fields[5], line_no);
        prev_id = c.id;
        first = false;
        bank.cases_.push_back(std::move(c));
    }
    bank.next_id_ = bank.cases_.empty() ? 0 : prev_id + 1;
    return bank;
}

Vec context_features(const Vec& query_emb, const Vec& case_emb) {
    if (query_emb.size() != case_emb.size()) {
        throw std::invalid_argument("context_features: dimension mismatch");
    }
    const std::size_t d = query_emb.size();
    Vec concat(2 * d);
    for (std::size_t i = 0; i < d; ++i) {
        concat[i] = query_emb[i];
        concat[d + i] = case_emb[i];
    }
    double n = norm2(concat);
    if (n == 0.0) throw std::invalid_argument("context_features: zero concatenation");
    const double inv = 1.0 / (n * std::sqrt(2.0));
    Vec out(4 * d);
    for (std::size_t i = 0; i < 2 * d; ++i) {
        double v = concat[i] * inv;
        out[i] = v;
        out[2 * d + i] = v; // equal halves by construction
    }
    return out;
}

} // namespace casebandit
