#pragma once

#include <vector>

#include "aat/encoder.hpp"

namespace aat {
namespace reference {

// Serial reference paths kept for testing and benchmarking.  They share no
// control flow with the gated kernels: encode_image_vanilla has the
// manipulation step compiled out entirely, and encode_batch_serial is a
// plain loop with no OpenMP pragma.  The parallel kernels must match these
// bitwise.

std::vector<float> encode_image_vanilla(const Tensor2& tokens, const EncoderWeights& w);

Tensor2 encode_batch_serial(const std::vector<Tensor2>& items, const EncoderWeights& w,
                            const AblationConfig& cfg);

}  // namespace reference
}  // namespace aat
