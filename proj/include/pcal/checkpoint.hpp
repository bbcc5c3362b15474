#pragma once

#include <string>
#include <string_view>

#include "pcal/nnet.hpp"

namespace pcal::nnet {

/// Checkpoint layout: the 8 bytes "PCALNET1", a little-endian uint32 byte
/// length, a UTF-8 JSON header (widths, num_classes, rng_seed, tensor names
/// and shapes), then every tensor as little-endian float32 in header order.
std::string save_checkpoint(const ModelParams& params);

/// Throws FormatError on a bad magic, truncated data, or a header that does
/// not agree with the payload.
ModelParams load_checkpoint(std::string_view bytes);

void save_checkpoint_file(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint_file(const std::string& path);

}  // namespace pcal::nnet
