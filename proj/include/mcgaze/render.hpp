#pragma once

#include <optional>

#include "mcgaze/datamodel.hpp"

namespace mcgaze {

/// Draws gaze arrows from the head-box center: prediction in cyan, ground
/// truth in red. The frame is upscaled (nearest) to at least `min_size`
/// pixels so the arrows stay legible on tiny inputs.
Image draw_gaze_arrows(const Image& frame, const Box& head, const std::optional<GazeVector>& pred,
                       const std::optional<GazeVector>& gt, int min_size = 256);

}  // namespace mcgaze
