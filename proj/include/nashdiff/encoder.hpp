#pragma once

#include <array>
#include <vector>

#include "nashdiff/domain.hpp"
#include "nashdiff/layers.hpp"

namespace nashdiff {

struct EncoderConfig {
  int feat_dim = kFeatureDim;
  int heads = 4;
  int embed_dim = 64;
};

// Single GATv2 layer over the two-node dyad graph (both directed edges plus
// self-loops), concat-merged heads, linear projection, LayerNorm, mean pool.
struct EncoderParams {
  EncoderConfig cfg;
  std::vector<LinearParams> head_weight;  // W^(m): embed_dim x 2*feat_dim, no bias
  std::vector<Parameter> head_attn;       // a^(m): 1 x embed_dim
  LinearParams proj;                      // heads*embed_dim -> embed_dim
  LayerNormParams norm;

  explicit EncoderParams(EncoderConfig cfg = {});
  void init(Rng& rng);
  std::vector<Parameter*> parameters();
};

using ContextEmbedding = std::vector<double>;

struct HeadCache {
  LinearCache pair_linear;      // over the 4 (i, j) pair rows
  ActivationCache leaky;        // LeakyReLU of W [x_i || x_j]
  ActivationCache attention;    // softmax over each node's neighbourhood (2 x 2)
  Tensor2D messages_src;        // W_right x_j per node (2 x embed_dim)
  ActivationCache activation;   // ELU of aggregated messages
};

struct EncoderCache {
  bool valid = false;
  Tensor2D features;  // 2 x feat_dim
  std::vector<HeadCache> heads;
  LinearCache proj;
  LayerNormCache norm;
  std::uint64_t attn_version = 0;

  // Attention weights of head m: row i = node, columns = [self, other].
  const Tensor2D& attention(int m) const { return heads[static_cast<std::size_t>(m)].attention.output; }
};

std::pair<ContextEmbedding, EncoderCache> encode(const NegotiationInstance& inst, const EncoderParams& p);
std::pair<ContextEmbedding, EncoderCache> encode_features(const Tensor2D& features, const EncoderParams& p);

// Accumulates parameter gradients; returns d(loss)/d(features), 2 x feat_dim.
Tensor2D encode_backward(std::span<const double> grad_h, const EncoderCache& cache, EncoderParams& p);

Tensor2D instance_features(const NegotiationInstance& inst);

}  // namespace nashdiff
