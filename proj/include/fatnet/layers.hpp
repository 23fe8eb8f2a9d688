#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fatnet/autodiff.hpp"
#include "fatnet/geometry.hpp"
#include "fatnet/module.hpp"

namespace fatnet {

inline constexpr double kLeakySlope = 0.2;

/// Shape of a batch laid out as [clouds * points, channels].
struct BatchLayout {
  std::size_t clouds = 1;
  std::size_t points = 1;
};

/**
 * Per-point dense map applied identically to every row:
 * y = act(BN(x W + b) + residual). Also serves as the dense layers of the
 * heads, where each row is one cloud.
 */
template <typename T>
class SharedMap {
 public:
  using value_type = T;

  SharedMap() = default;
  SharedMap(std::size_t in, std::size_t out, bool batch_norm, bool activation)
      : in_(in),
        out_(out),
        has_bn_(batch_norm),
        activation_(activation),
        weight_({in, out}, Init::kFanInUniform, in),
        bias_({out}, Init::kZeros) {
    if (has_bn_) {
      gamma_ = Param<T>({out}, Init::kOnes);
      beta_ = Param<T>({out}, Init::kZeros);
      bn_ = BatchNormState<T>(out);
    }
  }

  std::size_t in_width() const { return in_; }
  std::size_t out_width() const { return out_; }

  Var<T> forward(const Var<T>& x, Mode mode,
                 const std::optional<Var<T>>& residual = std::nullopt) {
    if (x.value().rank() != 2 || x.value().cols() != in_) {
      throw DimensionError("shared map expects width " + std::to_string(in_) +
                           ", got " + shape_string(x.shape()));
    }
    Var<T> y = add_row(matmul(x, weight_.var), bias_.var);
    if (has_bn_) y = batch_norm(y, gamma_.var, beta_.var, bn_, mode);
    if (residual) y = add(y, *residual);
    if (activation_) y = leaky_relu(y, T(kLeakySlope));
    return y;
  }

  void set_bn_momentum(T m) { bn_.momentum = m; }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    v.param(join_name(prefix, "weight"), weight_);
    v.param(join_name(prefix, "bias"), bias_);
    if (has_bn_) {
      v.param(join_name(prefix, "bn.gamma"), gamma_);
      v.param(join_name(prefix, "bn.beta"), beta_);
      v.buffer(join_name(prefix, "bn.running_mean"), bn_.running_mean);
      v.buffer(join_name(prefix, "bn.running_var"), bn_.running_var);
    }
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  Param<T>& gamma() { return gamma_; }
  Param<T>& beta() { return beta_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  bool has_bn_ = false, activation_ = false;
  Param<T> weight_, bias_, gamma_, beta_;
  BatchNormState<T> bn_;
};

/// Width of the squeeze-excite bottleneck: ceil(width / ratio), at least 1.
inline std::size_t bottleneck_width(std::size_t width, std::size_t ratio) {
  return std::max<std::size_t>(1, (width + ratio - 1) / ratio);
}

/**
 * Squeeze-excite encoder-decoder. Maps pooled descriptors [G x D] to gates
 * sigmoid(LeakyReLU(p W1) W2) in (0, 1).
 */
template <typename T>
class AttentionBlock {
 public:
  using value_type = T;

  AttentionBlock() = default;
  AttentionBlock(std::size_t width, std::size_t ratio)
      : width_(width),
        hidden_(bottleneck_width(width, ratio)),
        encoder_({width, hidden_}, Init::kFanInUniform, width),
        decoder_({hidden_, width}, Init::kFanInUniform, hidden_) {}

  std::size_t width() const { return width_; }
  std::size_t hidden() const { return hidden_; }

  Var<T> gates(const Var<T>& pooled) const {
    return sigmoid(matmul(leaky_relu(matmul(pooled, encoder_.var), T(kLeakySlope)),
                          decoder_.var));
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    v.param(join_name(prefix, "encoder"), encoder_);
    v.param(join_name(prefix, "decoder"), decoder_);
  }

  Param<T>& encoder() { return encoder_; }
  Param<T>& decoder() { return decoder_; }

 private:
  std::size_t width_ = 0, hidden_ = 0;
  Param<T> encoder_, decoder_;
};

/**
 * Per-cloud channel maximum of x[clouds*rows_per_cloud x D] -> [clouds x D].
 */
template <typename T>
Var<T> pool_max_per_cloud(const Var<T>& x, std::size_t clouds) {
  const std::size_t rows = x.value().rows(), d = x.value().cols();
  return reduce_max(reshape(x, {clouds, rows / clouds, d}), 1);
}

/// Gates from the per-cloud max-pooled embedding, applied channel-wise.
template <typename T>
Var<T> feature_attention(const Var<T>& embedding, const AttentionBlock<T>& block,
                         std::size_t clouds) {
  return scale_groups(embedding, block.gates(pool_max_per_cloud(embedding, clouds)));
}

/// Identity when widths agree, otherwise a linear shared map.
template <typename T>
class ResidualAdapter {
 public:
  using value_type = T;

  ResidualAdapter() = default;
  ResidualAdapter(std::size_t from, std::size_t to) {
    if (from != to) map_.emplace(from, to, false, false);
  }

  bool is_identity() const { return !map_.has_value(); }

  Var<T> forward(const Var<T>& x, Mode mode) {
    return map_ ? map_->forward(x, mode) : x;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    if (map_) map_->visit(prefix, v);
  }

  SharedMap<T>* map() { return map_ ? &*map_ : nullptr; }

 private:
  std::optional<SharedMap<T>> map_;
};

enum class Branches { kBoth, kPointOnly, kEdgeOnly };

struct FatLayerConfig {
  std::size_t d_in = 3;
  std::size_t d_out = 64;
  std::size_t k = 20;
  bool attention = true;
  /// Width of the incoming residual (previous layer's point output); 0 = none.
  std::size_t residual_from = 0;
  Branches branches = Branches::kBoth;
  /// Edge input [x_i : x_j - x_i] instead of the bare difference.
  bool edge_center = false;
  /// Use min(k, N-1) neighbors instead of rejecting small clouds.
  bool clamp_k = false;
  std::size_t attention_ratio = 8;

  std::size_t branch_width() const {
    return branches == Branches::kBoth ? d_out / 2 : d_out;
  }
};

template <typename T>
struct FatOutput {
  Var<T> out;    ///< [rows x d_out]
  Var<T> point;  ///< rescaled second point embedding, feeds the next residual
};

/**
 * Feature-attentive layer.
 *
 * Point branch: S1 = LReLU(BN(x W) [+ residual]), S2 = BN(S1 W').
 * Edge branch: kNN in the input feature space, neighbor differences, then
 * E1 = LReLU(BN(.)), E2 = BN(.). Both S2 and E2 are rescaled by gates from
 * one shared attention block, E2 is max-pooled over neighbors, and the two
 * are concatenated with the point channels first.
 */
template <typename T>
class FatLayer {
 public:
  using value_type = T;

  FatLayer() = default;
  explicit FatLayer(const FatLayerConfig& cfg) : cfg_(cfg) {
    if (cfg.branches == Branches::kBoth && cfg.d_out % 2 != 0)
      throw InvalidArgument("FAT layer width must be even, got " +
                            std::to_string(cfg.d_out));
    if (cfg.k < 1) throw InvalidArgument("FAT layer needs k >= 1");
    const std::size_t h = cfg.branch_width();
    if (cfg.branches != Branches::kEdgeOnly) {
      point1_ = SharedMap<T>(cfg.d_in, h, true, true);
      point2_ = SharedMap<T>(h, h, true, false);
      if (cfg.residual_from > 0) residual_ = ResidualAdapter<T>(cfg.residual_from, h);
    }
    if (cfg.branches != Branches::kPointOnly) {
      const std::size_t edge_in = cfg.edge_center ? 2 * cfg.d_in : cfg.d_in;
      edge1_ = SharedMap<T>(edge_in, h, true, true);
      edge2_ = SharedMap<T>(h, h, true, false);
    }
    if (cfg.attention) attention_ = AttentionBlock<T>(h, cfg.attention_ratio);
  }

  const FatLayerConfig& config() const { return cfg_; }
  bool has_point() const { return cfg_.branches != Branches::kEdgeOnly; }
  bool has_edge() const { return cfg_.branches != Branches::kPointOnly; }

  std::size_t neighbors_for(std::size_t points) const {
    if (cfg_.clamp_k) {
      if (points < 2) throw InvalidArgument("FAT layer needs at least 2 points");
      return std::min(cfg_.k, points - 1);
    }
    if (cfg_.k >= points)
      throw InvalidArgument("FAT layer needs more than k=" + std::to_string(cfg_.k) +
                            " points, got " + std::to_string(points));
    return cfg_.k;
  }

  /// Point branch alone.
  Var<T> point_branch(const Var<T>& x, BatchLayout layout, Mode mode,
                      const std::optional<Var<T>>& prev_residual = std::nullopt) {
    check_input(x, layout);
    std::optional<Var<T>> res;
    if (prev_residual && cfg_.residual_from > 0) res = residual_.forward(*prev_residual, mode);
    return point2_.forward(point1_.forward(x, mode, res), mode);
  }

  /// Edge branch alone, before attention: [rows*k x branch_width].
  Var<T> edge_branch(const Var<T>& x, BatchLayout layout, Mode mode) {
    check_input(x, layout);
    const std::size_t k = neighbors_for(layout.points);
    std::vector<std::size_t> nbrs(layout.clouds * layout.points * k);
    const auto& xv = x.value();
    const std::size_t d = xv.cols();
    for (std::size_t b = 0; b < layout.clouds; ++b) {
      std::size_t* dst = nbrs.data() + b * layout.points * k;
      knn_block(xv.raw() + b * layout.points * d, layout.points, d, k, dst);
      for (std::size_t i = 0; i < layout.points * k; ++i) dst[i] += b * layout.points;
    }
    Var<T> edges = gather_edges(x, std::move(nbrs), k, cfg_.edge_center);
    return edge2_.forward(edge1_.forward(edges, mode), mode);
  }

  FatOutput<T> forward(const Var<T>& x, BatchLayout layout, Mode mode,
                       const std::optional<Var<T>>& prev_residual = std::nullopt) {
    FatOutput<T> result;
    std::vector<Var<T>> parts;
    if (has_point()) {
      Var<T> s2 = point_branch(x, layout, mode, prev_residual);
      if (cfg_.attention) s2 = feature_attention(s2, attention_, layout.clouds);
      result.point = s2;
      parts.push_back(s2);
    }
    if (has_edge()) {
      Var<T> e2 = edge_branch(x, layout, mode);
      if (cfg_.attention) e2 = feature_attention(e2, attention_, layout.clouds);
      const std::size_t rows = layout.clouds * layout.points;
      const std::size_t h = e2.value().cols();
      parts.push_back(reduce_max(reshape(e2, {rows, e2.value().rows() / rows, h}), 1));
    }
    result.out = parts.size() == 1 ? parts[0] : concat_cols(parts);
    return result;
  }

  void set_bn_momentum(T m) {
    for (auto* map : {&point1_, &point2_, &edge1_, &edge2_}) map->set_bn_momentum(m);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    if (has_point()) {
      point1_.visit(join_name(prefix, "point1"), v);
      point2_.visit(join_name(prefix, "point2"), v);
      residual_.visit(join_name(prefix, "residual"), v);
    }
    if (has_edge()) {
      edge1_.visit(join_name(prefix, "edge1"), v);
      edge2_.visit(join_name(prefix, "edge2"), v);
    }
    if (cfg_.attention) attention_.visit(join_name(prefix, "attention"), v);
  }

  SharedMap<T>& point1() { return point1_; }
  SharedMap<T>& point2() { return point2_; }
  SharedMap<T>& edge1() { return edge1_; }
  SharedMap<T>& edge2() { return edge2_; }
  AttentionBlock<T>& attention() { return attention_; }
  ResidualAdapter<T>& residual() { return residual_; }

 private:
  void check_input(const Var<T>& x, BatchLayout layout) const {
    const auto& v = x.value();
    if (v.rank() != 2 || v.cols() != cfg_.d_in ||
        v.rows() != layout.clouds * layout.points) {
      throw DimensionError("FAT layer expects [" +
                           std::to_string(layout.clouds * layout.points) + "x" +
                           std::to_string(cfg_.d_in) + "], got " +
                           shape_string(x.shape()));
    }
  }

  FatLayerConfig cfg_;
  SharedMap<T> point1_, point2_, edge1_, edge2_;
  ResidualAdapter<T> residual_;
  AttentionBlock<T> attention_;
};

}  // namespace fatnet
