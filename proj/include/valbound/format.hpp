#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace valbound {

/// %.17g rendering; parses back to the identical double.
std::string format_real(double x);

/// Serializes like nlohmann::json::dump but renders floating-point numbers
/// with format_real.
std::string dump_json(const nlohmann::json& j, int indent = 2);

/// Minimal CSV sink with a fixed header.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);
    void add_row(const std::vector<double>& values);
    void add_row(const std::vector<std::string>& cells);
    std::size_t rows() const { return rows_; }
    const std::string& text() const { return text_; }
    void write(const std::filesystem::path& path) const;

private:
    std::size_t columns_;
    std::size_t rows_ = 0;
    std::string text_;
};

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace valbound
