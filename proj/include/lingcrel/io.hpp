#pragma once

#include "lingcrel/detail/linalg.hpp"
#include "lingcrel/error.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace lingcrel {

/// Filesystem problems, surfaced with the offending path.
class IoError : public Error {
public:
    using Error::Error;
};

namespace io {

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256: digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

inline nlohmann::json matrix_to_json(const MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline MatrixXd matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw InvalidArgument("matrix JSON must be an array of rows");
    const Index rows = static_cast<Index>(j.size());
    const Index cols = rows ? static_cast<Index>(j[0].size()) : 0;
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        if (static_cast<Index>(j[i].size()) != cols) throw InvalidArgument("matrix JSON rows have unequal length");
        for (Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

inline nlohmann::json vector_to_json(const VectorXd& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline VectorXd vector_from_json(const nlohmann::json& j) {
    VectorXd v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) v(i) = j[i].is_null() ? std::nan("") : j[i].get<double>();
    return v;
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError(path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string() + ": write failed");
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

/// CSV with a header row x1..xn and one sample per line.
inline std::string matrix_to_csv(const MatrixXd& m, std::string_view prefix = "x") {
    std::string out;
    for (Index j = 0; j < m.cols(); ++j) out += (j ? "," : "") + std::string(prefix) + std::to_string(j + 1);
    out += '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_double(m(i, j));
        }
        out += '\n';
    }
    return out;
}

inline MatrixXd matrix_from_csv(std::string_view text) {
    std::vector<double> values;
    Index cols = -1, rows = 0;
    bool header = true;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        Index count = 0;
        std::size_t p = 0;
        while (p <= line.size()) {
            std::size_t q = line.find(',', p);
            if (q == std::string_view::npos) q = line.size();
            if (!header) {
                const std::string_view cell = line.substr(p, q - p);
                double v = 0;
                const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
                if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                    throw InvalidArgument("CSV: bad number '" + std::string(cell) + "' on data row " + std::to_string(rows + 1));
                values.push_back(v);
            }
            ++count;
            p = q + 1;
        }
        if (cols < 0) cols = count;
        else if (count != cols) throw InvalidArgument("CSV: ragged row " + std::to_string(rows + 1));
        if (header) header = false;
        else ++rows;
    }
    if (cols < 0) throw InvalidArgument("CSV: empty input");
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = values[static_cast<std::size_t>(i * cols + j)];
    return m;
}

}  // namespace io
}  // namespace lingcrel
