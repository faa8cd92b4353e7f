#include "dvc/temporal.hpp"

#include <algorithm>
#include <cmath>

namespace dvc {

double tiou(const Segment& a, const Segment& b) {
  if (!a.valid() || !b.valid()) throw ValidationError("tiou: degenerate segment");
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  // For overlapping segments union = |a| + |b| - inter; for disjoint ones
  // the hull overstates it but inter is 0 anyway.
  const double denom = inter > 0.0 ? a.length() + b.length() - inter : uni;
  return inter / denom;
}

std::pair<int, int> clip_rows(const Segment& s, double duration, double stride, int num_clips) {
  if (num_clips < 1) throw ValidationError("clip_rows: video has no clips");
  if (s.end < 0.0 || s.start > duration || (s.end <= 0.0 && s.start < 0.0) || s.start >= duration)
    throw ValidationError("segment lies outside the video");
  const double a = std::max(0.0, s.start);
  const double b = std::min(duration, s.end);
  int first = static_cast<int>(std::floor(a / stride));
  // Last clip whose start is strictly before b.
  int last = static_cast<int>(std::ceil(b / stride)) - 1;
  first = std::clamp(first, 0, num_clips - 1);
  last = std::clamp(last, 0, num_clips - 1);
  if (last < first) {
    const int nearest = std::clamp(static_cast<int>(std::floor(0.5 * (a + b) / stride)), 0, num_clips - 1);
    return {nearest, nearest};
  }
  return {first, last};
}

}  // namespace dvc
