#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "attnprobe/tensor_io.hpp"

namespace attnprobe {

/// Frame timing of the acoustic frontend: a window of `window` starts every
/// `frame_shift`.
struct FrameSpec {
  std::chrono::microseconds frame_shift{10'000};
  std::chrono::microseconds window{25'000};

  /// Throws BadConfig unless 0 < frame_shift <= window.
  void validate() const;

  /// floor((duration - window) / shift) + 1, or 0 when the utterance is
  /// shorter than one window.
  std::size_t frame_count(double total_seconds) const;

  /// Center of frame i: i * shift + window / 2.
  std::chrono::microseconds frame_center(std::size_t index) const;
};

struct PhoneInterval {
  double start = 0.0;  // seconds
  double end = 0.0;
  std::string phone;
};

struct TimeAlignment {
  std::vector<PhoneInterval> intervals;

  /// Throws InvalidAlignment unless 0 <= start < end and intervals are sorted
  /// and non-overlapping.
  void validate() const;
};

/// Reads "start end phone" lines (seconds, whitespace separated, `#` comments).
TimeAlignment read_alignment(const std::filesystem::path& path);

/// Labels frame i with the interval containing its center (intervals are
/// half-open [start, end)). Uncovered frames get "sil"; phones missing from
/// the inventory get "unk".
FrameLabels frames_from_times(const TimeAlignment& alignment, double total_duration,
                              const FrameSpec& spec, const PhonemeInventory& inventory,
                              std::string utterance_id = {});

}  // namespace attnprobe
