#include "hyql/common.hpp"

#include <charconv>
#include <cmath>

#include "hyql/random.hpp"

namespace hyql {

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& what)
    : Error(source + (line > 0 ? ":" + std::to_string(line) : std::string{}) + ": " + what), line_(line) {}

std::string format_real(double value) {
  if (!std::isfinite(value)) {
    if (std::isnan(value)) return "nan";
    return value > 0 ? "inf" : "-inf";
  }
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  if (ec != std::errc{}) throw NumericError("cannot format real");
  return std::string(buf, end);
}

double parse_real(std::string_view text) {
  text = trim(text);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw std::invalid_argument("not a real number: '" + std::string(text) + "'");
  return value;
}

std::uint64_t parse_uint(std::string_view text) {
  text = trim(text);
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw std::invalid_argument("not an unsigned integer: '" + std::string(text) + "'");
  return value;
}

std::int64_t parse_int(std::string_view text) {
  text = trim(text);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw std::invalid_argument("not an integer: '" + std::string(text) + "'");
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view text) {
  const auto blank = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!text.empty() && blank(text.front())) text.remove_prefix(1);
  while (!text.empty() && blank(text.back())) text.remove_suffix(1);
  return text;
}

// ---------------------------------------------------------------------------

std::size_t UniformSource::below(std::size_t n) {
  if (n == 0) throw ParameterError("below(0)");
  auto index = static_cast<std::size_t>(next() * static_cast<double>(n));
  return index < n ? index : n - 1;
}

double Rng::next() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

namespace {
std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix(base);
  for (std::uint64_t tag : tags) h = splitmix(h ^ splitmix(tag + 0x632BE59BD9B4E019ull));
  return h;
}

}  // namespace hyql
