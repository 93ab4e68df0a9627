#pragma once

#include "casebandit/errors.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace casebandit {

// Little-endian binary writer/reader for bit-exact checkpoints.

class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw parse_error("cannot open for writing: " + path);
    }
    void u32(uint32_t v) { raw(&v, sizeof v); }
    void u64(uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void f64s(const std::vector<double>& v) {
        u64(v.size());
        if (!v.empty()) raw(v.data(), v.size() * sizeof(double));
    }
    void str(const std::string& s) {
        u64(s.size());
        if (!s.empty()) raw(s.data(), s.size());
    }
    bool good() const { return static_cast<bool>(out_); }

private:
    void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }
    std::ofstream out_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw parse_error("cannot open for reading: " + path);
    }
    uint32_t u32() { uint32_t v; raw(&v, sizeof v); return v; }
    uint64_t u64() { uint64_t v; raw(&v, sizeof v); return v; }
    double f64() { double v; raw(&v, sizeof v); return v; }
    std::vector<double> f64s() {
        std::vector<double> v(checked_count(u64(), sizeof(double)));
        if (!v.empty()) raw(v.data(), v.size() * sizeof(double));
        return v;
    }
    std::string str() {
        std::string s(checked_count(u64(), 1), '\0');
        if (!s.empty()) raw(s.data(), s.size());
        return s;
    }

private:
    std::size_t checked_count(uint64_t n, std::size_t elem) {
        if (n > (1ull << 32) / elem) throw parse_error("corrupt length field in " + path_);
        return static_cast<std::size_t>(n);
    }
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), n);
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw parse_error("unexpected end of file in " + path_);
        }
    }
    std::ifstream in_;
    std::string path_;
};

} // namespace casebandit
