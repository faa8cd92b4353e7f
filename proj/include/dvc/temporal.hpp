#pragma once

#include <utility>

#include "dvc/corpus.hpp"

namespace dvc {

/// Temporal intersection over union. Throws on degenerate segments.
double tiou(const Segment& a, const Segment& b);

/// Inclusive clip-row range [first, last] whose clip intervals
/// [k*stride, (k+1)*stride) intersect the segment after clipping it to
/// [0, duration]. A span that rounds to nothing maps to its nearest clip.
/// Throws if the segment lies entirely outside the video.
std::pair<int, int> clip_rows(const Segment& s, double duration, double stride, int num_clips);

}  // namespace dvc
