// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hicropl/encoders/config.hpp"
#include "hicropl/numcore/nn.hpp"

namespace hicropl {

enum class Modality { kText, kVision };

inline constexpr std::string_view modality_name(Modality m) { return m == Modality::kText ? "text" : "vision"; }
inline constexpr Modality other(Modality m) { return m == Modality::kText ? Modality::kVision : Modality::kText; }

// Which way knowledge travels in each half of the stack. The default is
// kBidirTIThenIT: text guides vision up to layer k, vision guides text after.
enum class FlowMechanism { kUnidirTI, kUnidirIT, kBidirITThenTI, kBidirTIThenIT };
enum class MapperScale { kSingle, kMulti };
enum class Compression { kLkp, kAverage, kMlp };

inline constexpr std::string_view mechanism_name(FlowMechanism f) {
  switch (f) {
    case FlowMechanism::kUnidirTI: return "unidir_TI";
    case FlowMechanism::kUnidirIT: return "unidir_IT";
    case FlowMechanism::kBidirITThenTI: return "bidir_IT_then_TI";
    case FlowMechanism::kBidirTIThenIT: return "bidir_TI_then_IT";
  }
  return "?";
}

inline constexpr std::string_view scale_name(MapperScale s) { return s == MapperScale::kSingle ? "single" : "multi"; }

inline constexpr std::string_view compression_name(Compression c) {
  switch (c) {
    case Compression::kLkp: return "lkp";
    case Compression::kAverage: return "average";
    case Compression::kMlp: return "mlp";
  }
  return "?";
}

inline FlowMechanism parse_mechanism(std::string_view s) {
  for (auto f : {FlowMechanism::kUnidirTI, FlowMechanism::kUnidirIT, FlowMechanism::kBidirITThenTI,
                 FlowMechanism::kBidirTIThenIT})
    if (mechanism_name(f) == s) return f;
  throw ConfigError("unknown flow mechanism '" + std::string(s) + "'");
}

inline MapperScale parse_scale(std::string_view s) {
  if (s == "single") return MapperScale::kSingle;
  if (s == "multi") return MapperScale::kMulti;
  throw ConfigError("unknown mapper scale '" + std::string(s) + "'");
}

inline Compression parse_compression(std::string_view s) {
  for (auto c : {Compression::kLkp, Compression::kAverage, Compression::kMlp})
    if (compression_name(c) == s) return c;
  throw ConfigError("unknown compression '" + std::string(s) + "'");
}

struct FlowConfig {
  FlowMechanism mechanism = FlowMechanism::kBidirTIThenIT;
  MapperScale mapper_scale = MapperScale::kMulti;
  Compression compression = Compression::kLkp;
  // Off means independent prompt tuning: no proxies, no mapper.
  bool knowledge_flow = true;
  std::size_t mapper_heads = 1;
};

// A contiguous run of prompted layers whose target-modality prompts are
// rewritten from source-modality proxies.
struct Segment {
  std::size_t begin = 0;  // first layer, 0-based
  std::size_t end = 0;    // one past the last layer
  Modality source = Modality::kText;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end == begin; }
};

enum class SegmentId { kFirst, kSecond };

// Layers [0, k) form the first segment and [k, depth) the second. The source
// modality of each segment follows the mechanism.
inline Segment segment_of(FlowMechanism mechanism, std::size_t depth, std::size_t k, SegmentId id) {
  const bool text_first = mechanism == FlowMechanism::kBidirTIThenIT || mechanism == FlowMechanism::kUnidirTI;
  // Unidirectional flows keep one source modality over the whole stack.
  Modality first = text_first ? Modality::kText : Modality::kVision;
  Modality second = other(first);
  if (mechanism == FlowMechanism::kUnidirTI) first = second = Modality::kText;
  if (mechanism == FlowMechanism::kUnidirIT) first = second = Modality::kVision;
  return id == SegmentId::kFirst ? Segment{0, k, first} : Segment{k, depth, second};
}

// Boundary k that a unidirectional mechanism implies, or the user's k for
// bidirectional ones.
inline std::size_t effective_boundary(FlowMechanism mechanism, std::size_t depth, std::size_t k) {
  if (mechanism == FlowMechanism::kUnidirTI) return depth;
  if (mechanism == FlowMechanism::kUnidirIT) return 0;
  return k;
}

inline void validate_boundary(FlowMechanism mechanism, std::size_t depth, std::size_t k) {
  switch (mechanism) {
    case FlowMechanism::kUnidirTI:
      if (k != depth) throw ConfigError("unidir_TI needs boundary_k == prompt depth (" + std::to_string(depth) + ")");
      return;
    case FlowMechanism::kUnidirIT:
      if (k != 0) throw ConfigError("unidir_IT needs boundary_k == 0");
      return;
    default:
      if (k < 1 || k + 1 > depth)
        throw ConfigError("bidirectional flow needs 1 <= boundary_k <= " + std::to_string(depth) + " - 1, got " +
                          std::to_string(k));
  }
}

// Learnable deep prompts for both towers plus one proxy token per layer.
// The proxy of layer l lives in the width of the modality it compresses.
struct PromptStack {
  std::size_t depth = 0;
  std::size_t prompt_len = 0;
  std::size_t text_width = 0;
  std::size_t vision_width = 0;
  std::size_t boundary_k = 0;
  FlowMechanism mechanism = FlowMechanism::kBidirTIThenIT;
  std::vector<Tensor> text_prompts;    // depth x [m x d_t]
  std::vector<Tensor> visual_prompts;  // depth x [m x d_v]
  std::vector<Tensor> proxy_inits;     // depth x [1 x d_src(l)]

  Segment segment(SegmentId id) const { return segment_of(mechanism, depth, boundary_k, id); }

  Modality proxy_source(std::size_t layer) const {
    return layer < boundary_k ? segment(SegmentId::kFirst).source : segment(SegmentId::kSecond).source;
  }

  std::size_t width(Modality m) const { return m == Modality::kText ? text_width : vision_width; }

  const std::vector<Tensor>& prompts(Modality m) const { return m == Modality::kText ? text_prompts : visual_prompts; }

  ParamList params() const {
    ParamList out;
    for (std::size_t l = 0; l < depth; ++l) out.emplace_back("prompt.text." + std::to_string(l), text_prompts[l]);
    for (std::size_t l = 0; l < depth; ++l) out.emplace_back("prompt.visual." + std::to_string(l), visual_prompts[l]);
    for (std::size_t l = 0; l < depth; ++l) out.emplace_back("proxy_init." + std::to_string(l), proxy_inits[l]);
    return out;
  }
};

// All prompt and proxy parameters ~ N(0, 0.02), seeded. `depth` defaults to
// every encoder layer.
inline PromptStack init_prompt_stack(const EncoderConfig& config, std::size_t boundary_k, std::uint64_t seed,
                                     FlowMechanism mechanism = FlowMechanism::kBidirTIThenIT,
                                     std::optional<std::size_t> depth = std::nullopt) {
  const std::size_t d = depth.value_or(config.layers);
  if (d == 0 || d > config.layers)
    throw ConfigError("prompt depth must lie in [1, " + std::to_string(config.layers) + "], got " + std::to_string(d));
  validate_boundary(mechanism, d, boundary_k);

  PromptStack stack;
  stack.depth = d;
  stack.prompt_len = config.prompt_len;
  stack.text_width = config.text_width;
  stack.vision_width = config.vision_width;
  stack.boundary_k = boundary_k;
  stack.mechanism = mechanism;

  Rng rng(seed);
  for (std::size_t l = 0; l < d; ++l) stack.text_prompts.push_back(normal_tensor({config.prompt_len, config.text_width}, rng));
  for (std::size_t l = 0; l < d; ++l)
    stack.visual_prompts.push_back(normal_tensor({config.prompt_len, config.vision_width}, rng));
  for (std::size_t l = 0; l < d; ++l) stack.proxy_inits.push_back(normal_tensor({1, stack.width(stack.proxy_source(l))}, rng));
  return stack;
}

}  // namespace hicropl
