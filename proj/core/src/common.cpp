#include "strata/common.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <sstream>

namespace strata {

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view data) { return fnv1a64(data.data(), data.size()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

namespace {

// Days since 1970-01-01 from a civil date (Howard Hinnant's algorithm).
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

int parse_int(std::string_view s, std::size_t pos, std::size_t len) {
  int v = 0;
  auto res = std::from_chars(s.data() + pos, s.data() + pos + len, v);
  if (res.ec != std::errc() || res.ptr != s.data() + pos + len)
    throw DataError("malformed timestamp: '" + std::string(s) + "'");
  return v;
}

}  // namespace

std::int64_t parse_rfc3339(std::string_view s) {
  // Accepts YYYY-MM-DDTHH:MM:SS with optional 'Z' suffix; ' ' allowed for 'T'.
  if (s.size() >= 1 && (s.back() == 'Z' || s.back() == 'z')) s.remove_suffix(1);
  if (s.size() != 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') ||
      s[13] != ':' || s[16] != ':')
    throw DataError("malformed timestamp: '" + std::string(s) + "'");
  int y = parse_int(s, 0, 4), mo = parse_int(s, 5, 2), d = parse_int(s, 8, 2);
  int h = parse_int(s, 11, 2), mi = parse_int(s, 14, 2), sec = parse_int(s, 17, 2);
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60)
    throw DataError("malformed timestamp: '" + std::string(s) + "'");
  return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + sec;
}

std::string format_rfc3339(std::int64_t t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  int y, mo, d;
  civil_from_days(days, y, mo, d);
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", y, mo, d,
                static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                static_cast<int>(rem % 60));
  return std::string(buf);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp." + hex64(fnv1a64(path) ^ static_cast<std::uint64_t>(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("short write: " + tmp.string());
  }
  fs::rename(tmp, target);
}

void append_le_f32(std::string& out, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  // Host is little-endian on every supported platform.
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * 4);
}

std::vector<float> read_le_f32(std::string_view in, std::size_t count) {
  if (in.size() < count * 4) throw DataError("binary block truncated");
  std::vector<float> v(count);
  std::memcpy(v.data(), in.data(), count * 4);
  return v;
}

void append_le_f64(std::string& out, const std::vector<double>& v) {
  static_assert(sizeof(double) == 8);
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * 8);
}

std::vector<double> read_le_f64(std::string_view in, std::size_t count) {
  if (in.size() < count * 8) throw DataError("binary block truncated");
  std::vector<double> v(count);
  std::memcpy(v.data(), in.data(), count * 8);
  return v;
}

std::string join_csv_ints(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(static_cast<long long>(std::llround(values[i])));
  }
  return out;
}

}  // namespace strata
