#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>

#include "fatnet/layers.hpp"

namespace fatnet {

enum class Aggregation {
  kGfa,               ///< gated max + gated mean, summed
  kMaxPool,           ///< plain max-pool (MP)
  kConcatAttention,   ///< [gated max : gated mean] (CA)
  kMaxPoolAttention,  ///< gated max only (MPA)
};

inline std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kGfa: return "gfa";
    case Aggregation::kMaxPool: return "mp";
    case Aggregation::kConcatAttention: return "ca";
    case Aggregation::kMaxPoolAttention: return "mpa";
  }
  return "?";
}

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "gfa") return Aggregation::kGfa;
  if (s == "mp" || s == "max-only") return Aggregation::kMaxPool;
  if (s == "ca" || s == "concat-attention") return Aggregation::kConcatAttention;
  if (s == "mpa" || s == "maxpool-attention") return Aggregation::kMaxPoolAttention;
  throw InvalidArgument("unknown aggregation mode '" + s + "'");
}

inline constexpr std::size_t kGfaRatio = 16;

/**
 * Global feature aggregation over each cloud's rows.
 *
 * One encoder-decoder (compression 16) produces gates for both the
 * max-pooled and the mean-pooled descriptor. `forced_gates` pins the two
 * gates to constants; it exists for ablations and degeneracy checks.
 */
template <typename T>
class GfaBlock {
 public:
  using value_type = T;

  GfaBlock() = default;
  GfaBlock(std::size_t width, Aggregation mode) : width_(width), mode_(mode) {
    if (mode != Aggregation::kMaxPool) attention_ = AttentionBlock<T>(width, kGfaRatio);
  }

  Aggregation mode() const { return mode_; }
  std::size_t in_width() const { return width_; }
  std::size_t out_width() const {
    return mode_ == Aggregation::kConcatAttention ? 2 * width_ : width_;
  }

  std::optional<std::pair<T, T>> forced_gates;

  /// embedding [clouds*N x D] -> [clouds x out_width()].
  Var<T> forward(const Var<T>& embedding, std::size_t clouds) const {
    const auto& v = embedding.value();
    if (v.rank() != 2 || v.cols() != width_ || v.rows() % clouds != 0) {
      throw DimensionError("aggregation expects width " + std::to_string(width_) +
                           ", got " + shape_string(embedding.shape()));
    }
    const std::size_t n = v.rows() / clouds;
    Var<T> grouped = reshape(embedding, {clouds, n, width_});
    Var<T> m = reduce_max(grouped, 1);
    if (mode_ == Aggregation::kMaxPool) return m;
    Var<T> wm = gate(m);
    if (mode_ == Aggregation::kMaxPoolAttention) return mul(m, wm);
    Var<T> a = reduce_mean(grouped, 1);
    Var<T> wa = gate(a, true);
    if (mode_ == Aggregation::kConcatAttention) return concat_cols<T>({mul(m, wm), mul(a, wa)});
    return add(mul(m, wm), mul(a, wa));
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    if (mode_ != Aggregation::kMaxPool) attention_.visit(prefix, v);
  }

  AttentionBlock<T>& attention() { return attention_; }

 private:
  Var<T> gate(const Var<T>& pooled, bool second = false) const {
    if (forced_gates) {
      const T g = second ? forced_gates->second : forced_gates->first;
      return Var<T>(Tensor<T>(pooled.shape(), g));
    }
    return attention_.gates(pooled);
  }

  std::size_t width_ = 0;
  Aggregation mode_ = Aggregation::kGfa;
  AttentionBlock<T> attention_;
};

/// Single-cloud convenience: embedding [N x D] -> vector [D].
template <typename T>
Tensor<T> gfa(const Tensor<T>& embedding, const GfaBlock<T>& block) {
  NoGradGuard guard;
  Var<T> out = block.forward(Var<T>(embedding), 1);
  return out.value().reshaped({out.value().size()});
}

/**
 * Aggregates one cloud with the named mode ("mp", "ca", "mpa", "gfa"),
 * using `attention` as the gate network for the attentive modes.
 */
template <typename T>
Tensor<T> aggregate_ablation(const Tensor<T>& embedding, const std::string& mode,
                             const AttentionBlock<T>& attention) {
  GfaBlock<T> block(embedding.cols(), parse_aggregation(mode));
  if (block.mode() != Aggregation::kMaxPool) {
    if (attention.width() != embedding.cols())
      throw DimensionError("attention width does not match embedding " +
                           shape_string(embedding.shape()));
    block.attention() = attention;
  }
  return gfa(embedding, block);
}

}  // namespace fatnet
