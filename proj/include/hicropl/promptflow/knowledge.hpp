// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "hicropl/numcore/nn.hpp"

namespace hicropl {

// Layer-specific knowledge proxy: a single proxy token attends over the m
// prompts of its layer through one light single-head cross-attention.
// There is no residual and no feed-forward stage.
struct KnowledgeProxy {
  Linear q, k, v, o;

  KnowledgeProxy() = default;
  KnowledgeProxy(std::size_t width, Rng& rng) : q(width, width, rng), k(width, width, rng), v(width, width, rng), o(width, width, rng) {}

  std::size_t width() const { return q.in_features(); }

  // layer_prompts [m x d], proxy_init [1 x d] -> refined proxy [1 x d].
  Tensor compress(const Tensor& layer_prompts, const Tensor& proxy_init) const {
    if (layer_prompts.rank() != 2 || layer_prompts.cols() != width())
      throw DimensionError("LKP: layer prompts " + shape_str(layer_prompts.shape()) + " do not have width " +
                           std::to_string(width()));
    if (proxy_init.numel() != width())
      throw DimensionError("LKP: proxy " + shape_str(proxy_init.shape()) + " does not have width " +
                           std::to_string(width()));
    const Tensor query = proxy_init.rank() == 2 ? proxy_init : proxy_init.reshape({1, width()});
    return o(attention(q(query), k(layer_prompts), v(layer_prompts), 1, 1));
  }

  ParamList params(const std::string& prefix) const {
    auto out = q.params(prefix + ".q");
    append_params(out, k.params(prefix + ".k"));
    append_params(out, v.params(prefix + ".v"));
    append_params(out, o.params(prefix + ".o"));
    return out;
  }
};

// Compression baseline: two-layer GELU network over the concatenated prompts.
struct MlpCompressor {
  FeedForward net;
  std::size_t prompt_len = 0;
  std::size_t width = 0;

  MlpCompressor() = default;
  MlpCompressor(std::size_t m, std::size_t d, Rng& rng)
      : net(m * d, std::max<std::size_t>(1, m * d / 2), d, rng), prompt_len(m), width(d) {}

  Tensor compress(const Tensor& layer_prompts) const {
    if (layer_prompts.numel() != prompt_len * width)
      throw DimensionError("mlp compression: prompts " + shape_str(layer_prompts.shape()) + ", expected " +
                           shape_str({prompt_len, width}));
    return net(layer_prompts.reshape({1, prompt_len * width}));
  }

  ParamList params(const std::string& prefix) const { return net.params(prefix); }
};

// Hierarchical knowledge mapper. Target-modality prompt tokens (queries)
// attend to source-modality proxies through pre-LN multi-head cross-attention
// with a residual, followed by a residual GELU feed-forward:
//   Q' = Q + Attn(LN(Q), LN(K), LN(V))
//   P  = Q' + FFN(LN(Q'))
// Attn projects queries with W_q [d_tgt x d_tgt] and keys/values with
// W_k, W_v [d_src x d_tgt], then applies an output projection.
struct KnowledgeMapper {
  LayerNorm ln_query;
  LayerNorm ln_source;
  Linear q, k, v, o;
  LayerNorm ln_ffn;
  FeedForward ffn;
  std::size_t heads = 1;

  KnowledgeMapper() = default;
  KnowledgeMapper(std::size_t target_width, std::size_t source_width, std::size_t heads_, Rng& rng)
      : ln_query(target_width),
        ln_source(source_width),
        q(target_width, target_width, rng),
        k(source_width, target_width, rng),
        v(source_width, target_width, rng),
        o(target_width, target_width, rng),
        ln_ffn(target_width),
        ffn(target_width, 4 * target_width, rng),
        heads(heads_) {
    if (heads == 0 || target_width % heads != 0)
      throw ConfigError("mapper heads must divide the target width " + std::to_string(target_width));
  }

  std::size_t target_width() const { return q.in_features(); }
  std::size_t source_width() const { return k.in_features(); }

  // queries [B*Sq x d_tgt], proxies [B*Sk x d_src]; `blocks` groups as in
  // attention(). One block lets every query see every proxy.
  Tensor operator()(const Tensor& queries, const Tensor& proxies, std::size_t blocks = 1) const {
    if (queries.rank() != 2 || queries.cols() != target_width())
      throw DimensionError("mapper: target prompts " + shape_str(queries.shape()) + " do not have width " +
                           std::to_string(target_width()));
    if (proxies.rank() != 2 || proxies.cols() != source_width())
      throw DimensionError("mapper: proxies " + shape_str(proxies.shape()) + " do not have width " +
                           std::to_string(source_width()));
    if (proxies.rows() == 0) throw DimensionError("mapper: no proxies");
    const Tensor src = ln_source(proxies);
    const Tensor attended = o(attention(q(ln_query(queries)), k(src), v(src), heads, blocks));
    const Tensor mid = add(queries, attended);
    return add(mid, ffn(ln_ffn(mid)));
  }

  // Output projection and second FFN layer set to zero: the mapper becomes
  // the identity on its queries.
  void zero_residual_branches() {
    for (Tensor t : {o.weight, o.bias, ffn.fc2.weight, ffn.fc2.bias})
      for (auto& x : t.mutable_data()) x = 0.0;
  }

  ParamList params(const std::string& prefix) const {
    auto out = ln_query.params(prefix + ".ln_query");
    append_params(out, ln_source.params(prefix + ".ln_source"));
    append_params(out, q.params(prefix + ".q"));
    append_params(out, k.params(prefix + ".k"));
    append_params(out, v.params(prefix + ".v"));
    append_params(out, o.params(prefix + ".o"));
    append_params(out, ln_ffn.params(prefix + ".ln_ffn"));
    append_params(out, ffn.params(prefix + ".ffn"));
    return out;
  }
};

}  // namespace hicropl
