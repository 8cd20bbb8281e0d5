#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace strata {

// Error taxonomy maps one-to-one onto CLI exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NetworkError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a, used for content hashes on artifacts and cache keys.
std::uint64_t fnv1a64(std::string_view data);
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::string hex64(std::uint64_t v);

// Epoch seconds <-> RFC-3339 UTC ("2017-01-24T14:30:00Z").
std::int64_t parse_rfc3339(std::string_view s);
std::string format_rfc3339(std::int64_t epoch_seconds);

std::string read_file(const std::string& path);
// Write-then-rename so concurrent readers never see a partial file.
void write_file_atomic(const std::string& path, std::string_view content);

void append_le_f32(std::string& out, const std::vector<float>& v);
std::vector<float> read_le_f32(std::string_view in, std::size_t count);
void append_le_f64(std::string& out, const std::vector<double>& v);
std::vector<double> read_le_f64(std::string_view in, std::size_t count);

std::string join_csv_ints(const std::vector<double>& values);

}  // namespace strata
