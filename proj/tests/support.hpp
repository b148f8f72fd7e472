#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <vector>

#include "hyql/context.hpp"
#include "hyql/random.hpp"

namespace hyql::test {

// Monday 2024-01-01 00:00.
inline constexpr std::int64_t kMonday = 1704067200;
inline constexpr std::int64_t kHour = 3600;
inline constexpr std::int64_t kDay = 86400;

inline std::int64_t at(int weekday, int hour, int minute = 0) {
  return kMonday + weekday * kDay + hour * kHour + minute * 60;
}

/// Replays a fixed list of uniforms, then repeats the last one.
class Scripted final : public UniformSource {
 public:
  explicit Scripted(std::vector<double> values) : values_(values.begin(), values.end()) {}
  double next() override {
    double v = values_.front();
    if (values_.size() > 1) values_.pop_front();
    return v;
  }

 private:
  std::deque<double> values_;
};

inline std::shared_ptr<const context::ContextModel> canonical_model() {
  static const auto model = std::make_shared<const context::ContextModel>(context::Gazetteer::canonical());
  return model;
}

inline context::RawEvent event_at(std::int64_t ts, std::optional<context::GeoPoint> geo,
                                  context::CognitiveClass cog = context::CognitiveClass::Navigate) {
  context::RawEvent e;
  e.user = UserId{0};
  e.timestamp = ts;
  e.geo = geo;
  e.cognitive = context::CognitiveAction{cog, std::nullopt};
  return e;
}

inline const context::GeoPoint kOfficePoint{48.87, 2.295};
inline const context::GeoPoint kHomePoint{48.73, 2.415};

}  // namespace hyql::test
