// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hicropl/encoders/config.hpp"
#include "hicropl/encoders/tokenizer.hpp"
#include "hicropl/numcore/nn.hpp"

namespace hicropl {

// H x W x C pixels, row-major with channels innermost.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
};

// Per-layer prompt tokens for one tower, layer 1 first. Fewer entries than
// encoder layers means shallower prompting: later layers keep whatever the
// previous layer produced at the prompt positions.
using PromptLayers = std::vector<Tensor>;

// (n+1) x d_v: class token row first, then one row per patch.
struct PatchEmbedding {
  Tensor tokens;
};

namespace detail {

inline void check_prompts(const PromptLayers* prompts, std::size_t layers, std::size_t m, std::size_t width,
                          const char* tower) {
  if (!prompts) return;
  if (prompts->empty() || prompts->size() > layers)
    throw DimensionError(std::string(tower) + " prompts given for " + std::to_string(prompts->size()) +
                         " layers, encoder has " + std::to_string(layers));
  for (std::size_t l = 0; l < prompts->size(); ++l) {
    const Tensor& p = (*prompts)[l];
    if (!p.defined() || p.rank() != 2 || p.rows() != m || p.cols() != width)
      throw DimensionError(std::string(tower) + " prompt at layer " + std::to_string(l + 1) + " has shape " +
                           (p.defined() ? shape_str(p.shape()) : std::string("<undefined>")) + ", expected " +
                           shape_str({m, width}));
  }
}

// Runs the shared transformer stack over `blocks` sequences of equal length,
// overwriting the first m rows of every sequence with the layer's prompts.
inline Tensor run_layers(Tensor x, const std::vector<TransformerBlock>& layers, const PromptLayers* prompts,
                         std::size_t blocks) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (prompts && l < prompts->size()) x = replace_block_prefix(x, (*prompts)[l], blocks);
    x = layers[l](x, blocks);
  }
  return x;
}

// Row index list that opens `prefix` zero rows at the start of each block.
inline std::vector<long> with_prompt_slots(std::size_t blocks, std::size_t block_len, std::size_t prefix) {
  std::vector<long> index;
  index.reserve(blocks * (block_len + prefix));
  for (std::size_t b = 0; b < blocks; ++b) {
    index.insert(index.end(), prefix, kZeroRow);
    for (std::size_t i = 0; i < block_len; ++i) index.push_back(static_cast<long>(b * block_len + i));
  }
  return index;
}

}  // namespace detail

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const EncoderConfig& config, Rng& rng) : config_(config) {
    token_embedding_ = normal_tensor({config.vocab_size, config.text_width}, rng);
    positional_ = normal_tensor({config.max_text_len, config.text_width}, rng);
    for (std::size_t l = 0; l < config.layers; ++l) layers_.emplace_back(config.text_width, config.heads, rng);
    ln_final_ = LayerNorm(config.text_width);
    projection_ = Linear(config.text_width, config.joint_width, rng, false);
  }

  const EncoderConfig& config() const { return config_; }

  // Token plus positional embeddings: [B*max_text_len x d_t].
  Tensor embed(const std::vector<TokenSequence>& sequences) const {
    std::vector<long> ids;
    for (const auto& seq : sequences) {
      if (seq.ids.size() != config_.max_text_len)
        throw DimensionError("token sequence of length " + std::to_string(seq.ids.size()) + ", expected " +
                             std::to_string(config_.max_text_len));
      if (seq.eos_position >= seq.ids.size()) throw DimensionError("eos position outside the sequence");
      for (auto id : seq.ids) {
        if (id >= config_.vocab_size)
          throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(config_.vocab_size));
        ids.push_back(static_cast<long>(id));
      }
    }
    return add_blocks(gather_rows(token_embedding_, ids), positional_);
  }

  // Joint-space embeddings [B x joint] taken at each sequence's eos token.
  Tensor encode(const std::vector<TokenSequence>& sequences, const PromptLayers* prompts = nullptr) const {
    if (sequences.empty()) throw DimensionError("encode: no text sequences");
    detail::check_prompts(prompts, config_.layers, config_.prompt_len, config_.text_width, "text");
    const std::size_t blocks = sequences.size();
    const std::size_t prefix = prompts ? config_.prompt_len : 0;
    const std::size_t seq_len = prefix + config_.max_text_len;

    Tensor x = embed(sequences);
    if (prefix) x = gather_rows(x, detail::with_prompt_slots(blocks, config_.max_text_len, prefix));
    x = detail::run_layers(std::move(x), layers_, prompts, blocks);

    std::vector<long> eos_rows;
    for (std::size_t b = 0; b < blocks; ++b)
      eos_rows.push_back(static_cast<long>(b * seq_len + prefix + sequences[b].eos_position));
    return projection_(ln_final_(gather_rows(x, eos_rows)));
  }

  // Same weights, different prompt length.
  TextEncoder with_prompt_len(std::size_t m) const {
    TextEncoder out = *this;
    out.config_.prompt_len = m;
    return out;
  }

  Tensor encode_one(const TokenSequence& sequence, const PromptLayers* prompts = nullptr) const {
    return encode({sequence}, prompts).reshape({config_.joint_width});
  }

  ParamList params(const std::string& prefix = "text") const {
    ParamList out{{prefix + ".token_embedding", token_embedding_}, {prefix + ".positional", positional_}};
    for (std::size_t l = 0; l < layers_.size(); ++l) append_params(out, layers_[l].params(prefix + ".layer" + std::to_string(l)));
    append_params(out, ln_final_.params(prefix + ".ln_final"));
    append_params(out, projection_.params(prefix + ".projection"));
    return out;
  }

  const Tensor& token_embedding() const { return token_embedding_; }
  const Tensor& positional() const { return positional_; }
  const std::vector<TransformerBlock>& layers() const { return layers_; }
  const LayerNorm& ln_final() const { return ln_final_; }
  const Linear& projection() const { return projection_; }

 private:
  EncoderConfig config_;
  Tensor token_embedding_;
  Tensor positional_;
  std::vector<TransformerBlock> layers_;
  LayerNorm ln_final_;
  Linear projection_;
};

class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(const EncoderConfig& config, Rng& rng) : config_(config) {
    patch_projection_ = Linear(config.patch_dim(), config.vision_width, rng, false);
    class_token_ = normal_tensor({1, config.vision_width}, rng);
    positional_ = normal_tensor({config.num_patches() + 1, config.vision_width}, rng);
    for (std::size_t l = 0; l < config.layers; ++l) layers_.emplace_back(config.vision_width, config.heads, rng);
    ln_post_ = LayerNorm(config.vision_width);
    projection_ = Linear(config.vision_width, config.joint_width, rng, false);
  }

  const EncoderConfig& config() const { return config_; }

  // Flattened patches [n x C*p*p], patches in raster order, each patch
  // flattened row-major with channels innermost.
  std::vector<double> extract_patches(const Image& image) const {
    if (image.height != config_.image_size || image.width != config_.image_size || image.channels != config_.channels)
      throw DimensionError("image " + shape_str({image.height, image.width, image.channels}) + ", expected " +
                           shape_str({config_.image_size, config_.image_size, config_.channels}));
    if (image.pixels.size() != image.height * image.width * image.channels)
      throw DimensionError("image pixel buffer does not match its extents");
    const std::size_t p = config_.patch_size, side = config_.patches_per_side(), c = config_.channels;
    std::vector<double> out;
    out.reserve(config_.num_patches() * config_.patch_dim());
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t px = 0; px < side; ++px)
        for (std::size_t y = 0; y < p; ++y) {
          const double* row = image.pixels.data() + ((py * p + y) * image.width + px * p) * c;
          out.insert(out.end(), row, row + p * c);
        }
    return out;
  }

  // Class token and patch projections plus positional embeddings,
  // [B*(n+1) x d_v].
  Tensor embed(const std::vector<const Image*>& images) const {
    if (images.empty()) throw DimensionError("embed: no images");
    const std::size_t n = config_.num_patches();
    std::vector<double> patches;
    patches.reserve(images.size() * n * config_.patch_dim());
    for (const Image* img : images) {
      auto p = extract_patches(*img);
      patches.insert(patches.end(), p.begin(), p.end());
    }
    Tensor projected = patch_projection_(Tensor::from({images.size() * n, config_.patch_dim()}, std::move(patches)));
    Tensor table = concat_rows({class_token_, projected});
    std::vector<long> index;
    for (std::size_t b = 0; b < images.size(); ++b) {
      index.push_back(0);
      for (std::size_t i = 0; i < n; ++i) index.push_back(static_cast<long>(1 + b * n + i));
    }
    return add_blocks(gather_rows(table, index), positional_);
  }

  PatchEmbedding embed_patches(const Image& image) const { return {embed({&image})}; }

  // Joint-space embeddings [B x joint] from the class-token state, for B
  // stacked (n+1)-row token blocks.
  Tensor encode_tokens(const Tensor& tokens, const PromptLayers* prompts = nullptr) const {
    const std::size_t n1 = config_.num_patches() + 1;
    if (tokens.rank() != 2 || tokens.cols() != config_.vision_width || tokens.rows() % n1 != 0)
      throw DimensionError("patch tokens " + shape_str(tokens.shape()) + " are not blocks of " +
                           shape_str({n1, config_.vision_width}));
    detail::check_prompts(prompts, config_.layers, config_.prompt_len, config_.vision_width, "visual");
    const std::size_t blocks = tokens.rows() / n1;
    const std::size_t prefix = prompts ? config_.prompt_len : 0;
    const std::size_t seq_len = prefix + n1;

    Tensor x = prefix ? gather_rows(tokens, detail::with_prompt_slots(blocks, n1, prefix)) : tokens;
    x = detail::run_layers(std::move(x), layers_, prompts, blocks);

    std::vector<long> cls_rows;
    for (std::size_t b = 0; b < blocks; ++b) cls_rows.push_back(static_cast<long>(b * seq_len + prefix));
    return projection_(ln_post_(gather_rows(x, cls_rows)));
  }

  Tensor encode(const std::vector<const Image*>& images, const PromptLayers* prompts = nullptr) const {
    return encode_tokens(embed(images), prompts);
  }

  Tensor encode_image(const PatchEmbedding& patches, const PromptLayers* prompts = nullptr) const {
    return encode_tokens(patches.tokens, prompts).reshape({config_.joint_width});
  }

  VisionEncoder with_prompt_len(std::size_t m) const {
    VisionEncoder out = *this;
    out.config_.prompt_len = m;
    return out;
  }

  // Hidden sequence length seen by every layer.
  std::size_t sequence_length(bool prompted) const { return (prompted ? config_.prompt_len : 0) + config_.num_patches() + 1; }

  ParamList params(const std::string& prefix = "vision") const {
    ParamList out = patch_projection_.params(prefix + ".patch_projection");
    out.emplace_back(prefix + ".class_token", class_token_);
    out.emplace_back(prefix + ".positional", positional_);
    for (std::size_t l = 0; l < layers_.size(); ++l) append_params(out, layers_[l].params(prefix + ".layer" + std::to_string(l)));
    append_params(out, ln_post_.params(prefix + ".ln_post"));
    append_params(out, projection_.params(prefix + ".projection"));
    return out;
  }

  const Linear& patch_projection() const { return patch_projection_; }
  const Tensor& class_token() const { return class_token_; }
  const Tensor& positional() const { return positional_; }
  const std::vector<TransformerBlock>& layers() const { return layers_; }
  const LayerNorm& ln_post() const { return ln_post_; }
  const Linear& projection() const { return projection_; }

 private:
  EncoderConfig config_;
  Linear patch_projection_;
  Tensor class_token_;
  Tensor positional_;
  std::vector<TransformerBlock> layers_;
  LayerNorm ln_post_;
  Linear projection_;
};

// The CLIP-style pair. A frozen encoder has no parameter that requires grad.
class DualEncoder {
 public:
  DualEncoder() = default;
  DualEncoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    Rng rng(seed);
    text_ = TextEncoder(config, rng);
    vision_ = VisionEncoder(config, rng);
  }

  const EncoderConfig& config() const { return config_; }
  const TextEncoder& text() const { return text_; }
  const VisionEncoder& vision() const { return vision_; }

  ParamList params() const {
    auto out = text_.params("text");
    append_params(out, vision_.params("vision"));
    return out;
  }

  void freeze() {
    set_requires_grad(params(), false);
    frozen_ = true;
  }
  bool frozen() const { return frozen_; }

  // Shallow copy sharing every weight tensor, for prompts of another length.
  DualEncoder with_prompt_len(std::size_t m) const {
    if (m == 0) throw ConfigError("prompt length must be positive");
    DualEncoder out = *this;
    out.config_.prompt_len = m;
    out.text_ = text_.with_prompt_len(m);
    out.vision_ = vision_.with_prompt_len(m);
    return out;
  }

 private:
  EncoderConfig config_;
  TextEncoder text_;
  VisionEncoder vision_;
  bool frozen_ = false;
};

}  // namespace hicropl
