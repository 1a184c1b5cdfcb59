// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hicropl/encoders/towers.hpp"
#include "hicropl/promptflow/knowledge.hpp"
#include "hicropl/promptflow/prompt_stack.hpp"

namespace hicropl {

// Refined proxy tokens of one segment, one per source layer, in layer order.
struct ProxySet {
  std::vector<Tensor> proxies;  // each [1 x d_src]

  std::size_t size() const { return proxies.size(); }
  Tensor stacked() const { return concat_rows(proxies); }
};

// Prompts actually injected into the encoders for one forward pass.
struct EffectivePrompts {
  PromptLayers text;
  PromptLayers visual;
};

// Learnable parameters of one segment's knowledge flow.
struct SegmentModules {
  Segment segment;
  std::optional<KnowledgeProxy> lkp;
  std::optional<MlpCompressor> mlp;
  KnowledgeMapper mapper;

  ParamList params(const std::string& prefix) const {
    ParamList out;
    if (lkp) append_params(out, lkp->params(prefix + ".lkp"));
    if (mlp) append_params(out, mlp->params(prefix + ".mlp"));
    append_params(out, mapper.params(prefix + ".mapper"));
    return out;
  }
};

// Every trainable piece of prompt learning: the prompt stack and, when
// knowledge flow is on, the per-segment compressors and mappers. The mapper
// is shared by all layers of its segment.
class PromptLearner {
 public:
  PromptLearner() = default;

  PromptLearner(const EncoderConfig& config, const FlowConfig& flow, std::size_t boundary_k, std::uint64_t seed,
                std::optional<std::size_t> depth = std::nullopt)
      : flow_(flow) {
    const std::size_t d = depth.value_or(config.layers);
    const std::size_t k = effective_boundary(flow.mechanism, d, boundary_k);
    stack_ = init_prompt_stack(config, k, seed, flow.mechanism, d);
    if (!flow.knowledge_flow) return;
    // Separate stream so the stack itself depends only on (config, k, seed).
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (auto id : {SegmentId::kFirst, SegmentId::kSecond}) {
      const Segment seg = stack_.segment(id);
      if (seg.empty()) continue;
      const std::size_t src = stack_.width(seg.source), tgt = stack_.width(other(seg.source));
      SegmentModules mods{seg, std::nullopt, std::nullopt, KnowledgeMapper(tgt, src, flow.mapper_heads, rng)};
      if (flow.compression == Compression::kLkp) mods.lkp.emplace(src, rng);
      if (flow.compression == Compression::kMlp) mods.mlp.emplace(config.prompt_len, src, rng);
      segments_[static_cast<std::size_t>(id)] = std::move(mods);
    }
  }

  const PromptStack& stack() const { return stack_; }
  PromptStack& stack() { return stack_; }
  const FlowConfig& flow() const { return flow_; }

  const std::optional<SegmentModules>& segment(SegmentId id) const { return segments_[static_cast<std::size_t>(id)]; }
  std::optional<SegmentModules>& segment(SegmentId id) { return segments_[static_cast<std::size_t>(id)]; }

  // Compresses one layer's source prompts into its proxy token.
  Tensor compress_layer(const SegmentModules& mods, std::size_t layer) const {
    const Tensor& prompts = stack_.prompts(mods.segment.source)[layer];
    switch (flow_.compression) {
      case Compression::kLkp: return mods.lkp->compress(prompts, stack_.proxy_inits[layer]);
      case Compression::kAverage: return mean_rows(prompts);
      case Compression::kMlp: return mods.mlp->compress(prompts);
    }
    throw ConfigError("unknown compression");
  }

  ProxySet build_proxies(SegmentId id) const {
    const auto& mods = segment(id);
    if (!mods) throw ConfigError("segment has no layers under boundary_k = " + std::to_string(stack_.boundary_k));
    ProxySet set;
    for (std::size_t l = mods->segment.begin; l < mods->segment.end; ++l) set.proxies.push_back(compress_layer(*mods, l));
    return set;
  }

  // Runs the segment's mapper: its target-modality prompts attend to the
  // proxies (all of them, or only their own layer's for single-scale).
  std::vector<Tensor> map_prompts(SegmentId id, const ProxySet& proxies) const {
    const auto& mods = segment(id);
    if (!mods) throw ConfigError("segment has no layers");
    const Segment& seg = mods->segment;
    const auto& targets = stack_.prompts(other(seg.source));
    std::vector<Tensor> layer_targets(targets.begin() + static_cast<long>(seg.begin),
                                      targets.begin() + static_cast<long>(seg.end));
    return apply_mapper(mods->mapper, layer_targets, proxies, flow_.mapper_scale);
  }

  static std::vector<Tensor> apply_mapper(const KnowledgeMapper& mapper, const std::vector<Tensor>& layer_targets,
                                          const ProxySet& proxies, MapperScale scale) {
    if (proxies.size() == 0) throw ConfigError("mapper needs at least one proxy");
    const std::size_t s = layer_targets.size();
    if (scale == MapperScale::kSingle && proxies.size() != s)
      throw DimensionError("single-scale mapping pairs layers with proxies one to one");
    const std::size_t m = layer_targets.front().rows();
    Tensor refined = mapper(concat_rows(layer_targets), proxies.stacked(), scale == MapperScale::kSingle ? s : 1);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < s; ++i) out.push_back(slice_rows(refined, i * m, m));
    return out;
  }

  EffectivePrompts materialize() const {
    EffectivePrompts eff{PromptLayers(stack_.text_prompts), PromptLayers(stack_.visual_prompts)};
    if (!flow_.knowledge_flow) return eff;
    for (auto id : {SegmentId::kFirst, SegmentId::kSecond}) {
      const auto& mods = segment(id);
      if (!mods) continue;
      auto refined = map_prompts(id, build_proxies(id));
      PromptLayers& target = mods->segment.source == Modality::kText ? eff.visual : eff.text;
      for (std::size_t i = 0; i < refined.size(); ++i) target[mods->segment.begin + i] = refined[i];
    }
    return eff;
  }

  ParamList params() const {
    ParamList out = stack_.params();
    if (segments_[0]) append_params(out, segments_[0]->params("seg0"));
    if (segments_[1]) append_params(out, segments_[1]->params("seg1"));
    return out;
  }

  void zero_mapper_residuals() {
    for (auto& seg : segments_)
      if (seg) seg->mapper.zero_residual_branches();
  }

 private:
  PromptStack stack_;
  FlowConfig flow_;
  std::array<std::optional<SegmentModules>, 2> segments_;
};

}  // namespace hicropl
