#pragma once

#include <stdexcept>
#include <string>

namespace casebandit {

// Loss of a numerical guarantee (e.g. the design-matrix inverse stopped
// being positive definite).
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

// Iterative solver hit its iteration cap; carries the residual it reached.
class convergence_error : public std::runtime_error {
public:
    convergence_error(const std::string& what, double achieved)
        : std::runtime_error(what), achieved_norm(achieved) {}
    double achieved_norm;
};

// Malformed persisted data; line is 1-based, 0 when not line-oriented.
class parse_error : public std::runtime_error {
public:
    parse_error(const std::string& what, std::size_t line_no = 0)
        : std::runtime_error(line_no ? what + " (line " + std::to_string(line_no) + ")" : what),
          line(line_no) {}
    std::size_t line;
};

// An internal invariant failed mid-run (maps to CLI exit code 2).
class consistency_error : public std::logic_error {
public:
    explicit consistency_error(const std::string& what) : std::logic_error(what) {}
};

// Bad configuration; key_path names the offending entry.
class config_error : public std::runtime_error {
public:
    config_error(const std::string& what, std::string path = "")
        : std::runtime_error(path.empty() ? what : path + ": " + what),
          key_path(std::move(path)) {}
    std::string key_path;
};

} // namespace casebandit
