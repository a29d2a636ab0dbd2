#include "attnprobe/alignment.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "attnprobe/error.hpp"

namespace attnprobe {
namespace {

std::int64_t to_micros(double seconds) { return std::llround(seconds * 1e6); }

}  // namespace

void FrameSpec::validate() const {
  if (frame_shift.count() <= 0) fail(ErrorCode::BadConfig, "frame shift must be positive");
  if (window < frame_shift) fail(ErrorCode::BadConfig, "window shorter than frame shift");
}

std::size_t FrameSpec::frame_count(double total_seconds) const {
  if (!(total_seconds >= 0.0)) {
    fail(ErrorCode::NegativeDuration, "duration " + std::to_string(total_seconds) + " s");
  }
  const std::int64_t usable = to_micros(total_seconds) - window.count();
  if (usable < 0) return 0;
  return static_cast<std::size_t>(usable / frame_shift.count()) + 1;
}

std::chrono::microseconds FrameSpec::frame_center(std::size_t index) const {
  // window/2 may be a half microsecond; doubling everything keeps it exact.
  return std::chrono::microseconds((2 * static_cast<std::int64_t>(index) * frame_shift.count() +
                                    window.count()) / 2);
}

void TimeAlignment::validate() const {
  double previous_end = 0.0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const auto& iv = intervals[i];
    if (!(iv.start >= 0.0) || !(iv.start < iv.end)) {
      fail(ErrorCode::InvalidAlignment, "interval " + std::to_string(i) + " has start " +
                                            std::to_string(iv.start) + ", end " +
                                            std::to_string(iv.end));
    }
    if (iv.start < previous_end) {
      fail(ErrorCode::InvalidAlignment, "interval " + std::to_string(i) +
                                            " overlaps or precedes its predecessor");
    }
    previous_end = iv.end;
  }
}

TimeAlignment read_alignment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (path.empty() || !in) fail(ErrorCode::IoFailure, "cannot open alignment " + path.string());
  TimeAlignment alignment;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    PhoneInterval iv;
    std::string extra;
    if (!(fields >> iv.start >> iv.end >> iv.phone) || (fields >> extra)) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) +
                                      ": expected 'start end phone'");
    }
    alignment.intervals.push_back(std::move(iv));
  }
  alignment.validate();
  return alignment;
}

FrameLabels frames_from_times(const TimeAlignment& alignment, double total_duration,
                              const FrameSpec& spec, const PhonemeInventory& inventory,
                              std::string utterance_id) {
  if (inventory.empty()) fail(ErrorCode::EmptyInventory, "cannot label frames without an inventory");
  spec.validate();
  alignment.validate();
  const std::size_t frames = spec.frame_count(total_duration);

  // Interval bounds in doubled microseconds so half-microsecond centers compare exactly.
  struct Span {
    std::int64_t start2, end2;
    std::uint32_t label;
  };
  std::vector<Span> spans;
  spans.reserve(alignment.intervals.size());
  for (const auto& iv : alignment.intervals) {
    const auto id = inventory.find(iv.phone);
    spans.push_back({2 * to_micros(iv.start), 2 * to_micros(iv.end),
                     id ? *id : inventory.unknown()});
  }

  FrameLabels out{std::move(utterance_id), std::vector<std::uint32_t>(frames, inventory.silence())};
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < frames; ++i) {
    const std::int64_t center2 =
        2 * static_cast<std::int64_t>(i) * spec.frame_shift.count() + spec.window.count();
    while (cursor < spans.size() && spans[cursor].end2 <= center2) ++cursor;
    if (cursor < spans.size() && spans[cursor].start2 <= center2) out.labels[i] = spans[cursor].label;
  }
  return out;
}

}  // namespace attnprobe
