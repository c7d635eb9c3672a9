#include "nashdiff/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "nashdiff/errors.hpp"

namespace nashdiff {

namespace {

// Neighbour order per node: self first, then the other agent.
constexpr int neighbour(int node, int slot) { return slot == 0 ? node : 1 - node; }

}  // namespace

EncoderParams::EncoderParams(EncoderConfig c)
    : cfg(c),
      proj("encoder.proj", static_cast<std::size_t>(c.heads * c.embed_dim), static_cast<std::size_t>(c.embed_dim)),
      norm("encoder.norm", static_cast<std::size_t>(c.embed_dim)) {
  if (c.feat_dim <= 0 || c.heads <= 0 || c.embed_dim <= 0) throw ConfigError("encoder dimensions must be positive");
  for (int m = 0; m < c.heads; ++m) {
    const std::string tag = "encoder.head" + std::to_string(m);
    head_weight.emplace_back(tag + ".W", static_cast<std::size_t>(2 * c.feat_dim),
                             static_cast<std::size_t>(c.embed_dim), false);
    head_attn.emplace_back(tag + ".a", 1, static_cast<std::size_t>(c.embed_dim));
  }
}

void EncoderParams::init(Rng& rng) {
  for (auto& w : head_weight) w.init(rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  for (auto& a : head_attn)
    for (double& v : a.value.data()) v = rng.uniform(-bound, bound);
  proj.init(rng);
}

std::vector<Parameter*> EncoderParams::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t m = 0; m < head_weight.size(); ++m) {
    for (auto* p : head_weight[m].parameters()) out.push_back(p);
    out.push_back(&head_attn[m]);
  }
  for (auto* p : proj.parameters()) out.push_back(p);
  for (auto* p : norm.parameters()) out.push_back(p);
  return out;
}

Tensor2D instance_features(const NegotiationInstance& inst) {
  Tensor2D x(kNumAgents, kFeatureDim);
  for (int i = 0; i < kNumAgents; ++i) {
    const auto f = inst.agents[static_cast<std::size_t>(i)].as_array();
    std::copy(f.begin(), f.end(), x.row(static_cast<std::size_t>(i)).begin());
  }
  return x;
}

std::pair<ContextEmbedding, EncoderCache> encode(const NegotiationInstance& inst, const EncoderParams& p) {
  return encode_features(instance_features(inst), p);
}

std::pair<ContextEmbedding, EncoderCache> encode_features(const Tensor2D& x, const EncoderParams& p) {
  const auto k = static_cast<std::size_t>(p.cfg.feat_dim);
  const auto dh = static_cast<std::size_t>(p.cfg.embed_dim);
  if (x.rows() != kNumAgents || x.cols() != k) throw ShapeError("encoder: expected 2 nodes with feat_dim features");
  x.check_finite("encoder features");

  EncoderCache cache;
  cache.valid = true;
  cache.features = x;
  if (!p.head_attn.empty()) cache.attn_version = p.head_attn.front().version;

  Tensor2D pairs(4, 2 * k);
  for (int i = 0; i < 2; ++i)
    for (int s = 0; s < 2; ++s) {
      auto row = pairs.row(static_cast<std::size_t>(2 * i + s));
      const auto xi = x.row(static_cast<std::size_t>(i));
      const auto xj = x.row(static_cast<std::size_t>(neighbour(i, s)));
      std::copy(xi.begin(), xi.end(), row.begin());
      std::copy(xj.begin(), xj.end(), row.begin() + static_cast<std::ptrdiff_t>(k));
    }

  std::vector<const Tensor2D*> head_out;
  std::vector<Tensor2D> head_store;
  head_store.reserve(p.head_weight.size());
  for (std::size_t m = 0; m < p.head_weight.size(); ++m) {
    HeadCache hc;
    auto [z, lin] = forward_linear(pairs, p.head_weight[m]);
    auto [s, leaky] = forward_leakyrelu(z);
    Tensor2D scores(2, 2);
    const auto a = p.head_attn[m].value.row(0);
    for (int i = 0; i < 2; ++i)
      for (int sl = 0; sl < 2; ++sl) {
        const auto sr = s.row(static_cast<std::size_t>(2 * i + sl));
        double e = 0.0;
        for (std::size_t c = 0; c < dh; ++c) e += a[c] * sr[c];
        scores(static_cast<std::size_t>(i), static_cast<std::size_t>(sl)) = e;
      }
    auto [alpha, att] = forward_softmax_rows(scores);

    // W_right x_j: the source half of W applied to each node.
    const auto& W = p.head_weight[m].weight.value;
    Tensor2D src(2, dh);
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t o = 0; o < dh; ++o) {
        double v = 0.0;
        for (std::size_t c = 0; c < k; ++c) v += W(o, k + c) * x(j, c);
        src(j, o) = v;
      }
    Tensor2D agg(2, dh);
    for (int i = 0; i < 2; ++i)
      for (int sl = 0; sl < 2; ++sl) {
        const double w = alpha(static_cast<std::size_t>(i), static_cast<std::size_t>(sl));
        const auto sr = src.row(static_cast<std::size_t>(neighbour(i, sl)));
        auto ar = agg.row(static_cast<std::size_t>(i));
        for (std::size_t o = 0; o < dh; ++o) ar[o] += w * sr[o];
      }
    auto [act_out, act] = forward_elu(agg);

    hc.pair_linear = std::move(lin);
    hc.leaky = std::move(leaky);
    hc.attention = std::move(att);
    hc.messages_src = std::move(src);
    hc.activation = std::move(act);
    cache.heads.push_back(std::move(hc));
    head_store.push_back(std::move(act_out));
  }
  for (const auto& t : head_store) head_out.push_back(&t);
  const Tensor2D concat = hconcat(head_out);
  auto [projected, proj_cache] = forward_linear(concat, p.proj);
  auto [nodes, norm_cache] = forward_layernorm(projected, p.norm);
  cache.proj = std::move(proj_cache);
  cache.norm = std::move(norm_cache);

  ContextEmbedding h(dh);
  for (std::size_t c = 0; c < dh; ++c) h[c] = 0.5 * (nodes(0, c) + nodes(1, c));
  return {std::move(h), std::move(cache)};
}

Tensor2D encode_backward(std::span<const double> grad_h, const EncoderCache& cache, EncoderParams& p) {
  if (!cache.valid) throw NumericError("encoder: backward called without a forward cache");
  if (!p.head_attn.empty() && cache.attn_version != p.head_attn.front().version)
    throw NumericError("encoder: stale cache (parameters changed since forward)");
  const auto k = static_cast<std::size_t>(p.cfg.feat_dim);
  const auto dh = static_cast<std::size_t>(p.cfg.embed_dim);
  if (grad_h.size() != dh) throw ShapeError("encoder: grad_h has wrong length");

  const auto& x = cache.features;
  Tensor2D gx(2, k);

  Tensor2D g_nodes(2, dh);
  for (std::size_t c = 0; c < dh; ++c) g_nodes(0, c) = g_nodes(1, c) = 0.5 * grad_h[c];
  const Tensor2D g_proj = backward_layernorm(g_nodes, cache.norm, p.norm);
  const Tensor2D g_concat = backward_linear(g_proj, cache.proj, p.proj);

  for (std::size_t m = 0; m < p.head_weight.size(); ++m) {
    const HeadCache& hc = cache.heads[m];
    const Tensor2D g_act = column_slice(g_concat, m * dh, dh);
    const Tensor2D g_agg = backward_elu(g_act, hc.activation);
    const Tensor2D& alpha = hc.attention.output;

    Tensor2D g_alpha(2, 2);
    Tensor2D g_src(2, dh);
    for (int i = 0; i < 2; ++i)
      for (int sl = 0; sl < 2; ++sl) {
        const auto j = static_cast<std::size_t>(neighbour(i, sl));
        const auto ga = g_agg.row(static_cast<std::size_t>(i));
        const auto sr = hc.messages_src.row(j);
        double dot = 0.0;
        for (std::size_t o = 0; o < dh; ++o) {
          dot += ga[o] * sr[o];
          g_src(j, o) += alpha(static_cast<std::size_t>(i), static_cast<std::size_t>(sl)) * ga[o];
        }
        g_alpha(static_cast<std::size_t>(i), static_cast<std::size_t>(sl)) = dot;
      }

    // Source half of W: src_j = W_right x_j.
    auto& W = p.head_weight[m].weight;
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t o = 0; o < dh; ++o) {
        const double g = g_src(j, o);
        for (std::size_t c = 0; c < k; ++c) {
          W.grad(o, k + c) += g * x(j, c);
          gx(j, c) += g * W.value(o, k + c);
        }
      }

    const Tensor2D g_scores = backward_softmax_rows(g_alpha, hc.attention);
    const auto a = p.head_attn[m].value.row(0);
    auto ga_param = p.head_attn[m].grad.row(0);
    const Tensor2D& s = hc.leaky.output;
    Tensor2D g_s(4, dh);
    for (std::size_t r = 0; r < 4; ++r) {
      const double ge = g_scores(r / 2, r % 2);
      const auto sr = s.row(r);
      auto gr = g_s.row(r);
      for (std::size_t c = 0; c < dh; ++c) {
        ga_param[c] += ge * sr[c];
        gr[c] = ge * a[c];
      }
    }
    const Tensor2D g_z = backward_leakyrelu(g_s, hc.leaky);
    const Tensor2D g_pairs = backward_linear(g_z, hc.pair_linear, p.head_weight[m]);
    for (int i = 0; i < 2; ++i)
      for (int sl = 0; sl < 2; ++sl) {
        const auto row = g_pairs.row(static_cast<std::size_t>(2 * i + sl));
        const auto j = static_cast<std::size_t>(neighbour(i, sl));
        for (std::size_t c = 0; c < k; ++c) {
          gx(static_cast<std::size_t>(i), c) += row[c];
          gx(j, c) += row[k + c];
        }
      }
  }
  return gx;
}

}  // namespace nashdiff
