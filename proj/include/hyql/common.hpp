#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hyql {

// Strong identifiers. Each is an integer with its own type so that a user id
// cannot be passed where an item is expected.
enum class UserId : std::uint32_t {};
enum class GroupId : std::uint32_t {};
enum class ActionId : std::uint32_t {};

constexpr std::uint32_t raw(UserId id) { return static_cast<std::uint32_t>(id); }
constexpr std::uint32_t raw(GroupId id) { return static_cast<std::uint32_t>(id); }
constexpr std::uint32_t raw(ActionId id) { return static_cast<std::uint32_t>(id); }

/// Group value used when transactions are pooled across the whole population.
inline constexpr GroupId kAnyGroup{0xFFFFFFFFu};

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};
class ParameterError : public Error {
 public:
  using Error::Error;
};
class RangeError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class SchemaError : public Error {
 public:
  using Error::Error;
};
class CatalogError : public Error {
 public:
  using Error::Error;
};
class CoverageError : public Error {
 public:
  using Error::Error;
};
class OrderingError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number of the offending
/// record (0 when the problem is not tied to a line).
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// The environment declined to execute an action. Agents treat this as an
/// aborted step rather than a failure.
class EnvironmentRefusal : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Text helpers shared by the file formats.

/// Shortest decimal text with 17 significant digits; round-trips exactly.
std::string format_real(double value);
double parse_real(std::string_view text);
std::uint64_t parse_uint(std::string_view text);
std::int64_t parse_int(std::string_view text);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

/// Reads every line of `in`, skipping blanks and '#' comments, and hands each
/// one to `fn` together with its 1-based line number.
template <class Stream, class Fn>
void for_each_record(Stream& in, Fn&& fn) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    fn(line, number);
  }
}

}  // namespace hyql

template <>
struct std::hash<hyql::UserId> {
  std::size_t operator()(hyql::UserId id) const noexcept { return std::hash<std::uint32_t>{}(hyql::raw(id)); }
};
template <>
struct std::hash<hyql::ActionId> {
  std::size_t operator()(hyql::ActionId id) const noexcept { return std::hash<std::uint32_t>{}(hyql::raw(id)); }
};
template <>
struct std::hash<hyql::GroupId> {
  std::size_t operator()(hyql::GroupId id) const noexcept { return std::hash<std::uint32_t>{}(hyql::raw(id)); }
};
