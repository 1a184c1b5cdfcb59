// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "hicropl/numcore/errors.hpp"

namespace hicropl {

// Shapes of the dual towers. Defaults are the desk-scale model; the
// CLIP ViT-B/16 scale (L=12, d_t=512, d_v=768, image 224, patch 16) is also a
// valid configuration, just slow.
struct EncoderConfig {
  std::size_t layers = 8;
  std::size_t heads = 2;
  std::size_t text_width = 32;
  std::size_t vision_width = 48;
  std::size_t joint_width = 32;
  std::size_t vocab_size = 40;
  std::size_t max_text_len = 8;
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t prompt_len = 4;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }

  void validate() const {
    if (layers < 2) throw ConfigError("encoder.L must be at least 2");
    if (heads == 0) throw ConfigError("encoder.heads must be positive");
    if (text_width == 0 || vision_width == 0 || joint_width == 0) throw ConfigError("encoder widths must be positive");
    if (text_width % heads != 0) throw ConfigError("encoder.d_t must be divisible by encoder.heads");
    if (vision_width % heads != 0) throw ConfigError("encoder.d_v must be divisible by encoder.heads");
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0)
      throw ConfigError("encoder.image_size must be a positive multiple of encoder.patch_size");
    if (prompt_len == 0) throw ConfigError("encoder.m must be at least 1");
    if (vocab_size < 2) throw ConfigError("encoder.vocab_size must cover pad and eos");
    if (max_text_len == 0) throw ConfigError("encoder.max_text_len must be positive");
    if (channels == 0) throw ConfigError("encoder.channels must be positive");
  }
};

}  // namespace hicropl
