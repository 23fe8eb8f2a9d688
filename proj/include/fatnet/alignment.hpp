#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fatnet/layers.hpp"

namespace fatnet {

enum class TransformerKind { kNone, kPointNet, kFat };

inline std::string to_string(TransformerKind t) {
  switch (t) {
    case TransformerKind::kNone: return "none";
    case TransformerKind::kPointNet: return "tnet";
    case TransformerKind::kFat: return "fat-tnet";
  }
  return "?";
}

inline TransformerKind parse_transformer(const std::string& s) {
  if (s == "none") return TransformerKind::kNone;
  if (s == "tnet") return TransformerKind::kPointNet;
  if (s == "fat-tnet") return TransformerKind::kFat;
  throw InvalidArgument("unknown transformer '" + s + "'");
}

struct TNetConfig {
  TransformerKind kind = TransformerKind::kFat;
  std::vector<std::size_t> widths{64, 128, 1024};
  std::vector<std::size_t> head{512, 256};
  std::size_t k = 20;
  bool edge_center = false;
};

/**
 * Regresses a 3x3 alignment from the raw cloud.
 *
 * The FAT variant embeds with attention-free FAT layers; the PointNet
 * variant with plain shared maps. Both max-pool, run a dense head and end
 * in a 9-wide layer whose weights start at zero and whose bias starts at
 * the flattened identity, so a fresh network applies exactly I.
 */
template <typename T>
class TNet {
 public:
  using value_type = T;

  TNet() = default;
  explicit TNet(const TNetConfig& cfg) : cfg_(cfg) {
    std::size_t in = 3;
    for (std::size_t w : cfg.widths) {
      if (cfg.kind == TransformerKind::kFat) {
        FatLayerConfig lc;
        lc.d_in = in;
        lc.d_out = w;
        lc.k = cfg.k;
        lc.attention = false;
        lc.edge_center = cfg.edge_center;
        lc.clamp_k = true;
        fat_.emplace_back(lc);
      } else {
        maps_.emplace_back(in, w, true, true);
      }
      in = w;
    }
    for (std::size_t w : cfg.head) {
      head_.emplace_back(in, w, true, true);
      in = w;
    }
    out_ = SharedMap<T>(in, 9, false, false);
    out_.weight().init = Init::kZeros;
    out_.bias().init = Init::kIdentity;
  }

  /// x [clouds*N x 3] -> [clouds x 9], row-major 3x3 per cloud.
  Var<T> regress(const Var<T>& x, BatchLayout layout, Mode mode) {
    Var<T> h = x;
    for (auto& l : fat_) h = l.forward(h, layout, mode).out;
    for (auto& m : maps_) h = m.forward(h, mode);
    h = pool_max_per_cloud(h, layout.clouds);
    for (auto& m : head_) h = m.forward(h, mode);
    return out_.forward(h, mode);
  }

  void set_bn_momentum(T m) {
    for (auto& l : fat_) l.set_bn_momentum(m);
    for (auto& l : maps_) l.set_bn_momentum(m);
    for (auto& l : head_) l.set_bn_momentum(m);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    for (std::size_t i = 0; i < fat_.size(); ++i)
      fat_[i].visit(join_name(prefix, "layers." + std::to_string(i)), v);
    for (std::size_t i = 0; i < maps_.size(); ++i)
      maps_[i].visit(join_name(prefix, "layers." + std::to_string(i)), v);
    for (std::size_t i = 0; i < head_.size(); ++i)
      head_[i].visit(join_name(prefix, "head." + std::to_string(i)), v);
    out_.visit(join_name(prefix, "out"), v);
  }

  SharedMap<T>& output_layer() { return out_; }

 private:
  TNetConfig cfg_;
  std::vector<FatLayer<T>> fat_;
  std::vector<SharedMap<T>> maps_;
  std::vector<SharedMap<T>> head_;
  SharedMap<T> out_;
};

/// Row-wise p' = p T for each cloud of the batch.
template <typename T>
Var<T> apply_transform(const Var<T>& points, const Var<T>& transforms) {
  return batched_transform(points, transforms, 3);
}

/// Single-cloud convenience over plain tensors: [N x 3] times 3x3.
template <typename T>
Tensor<T> apply_transform(const Tensor<T>& points, const Tensor<T>& transform) {
  if (transform.size() != 9)
    throw DimensionError("transform must be 3x3, got " + shape_string(transform.shape()));
  NoGradGuard guard;
  return apply_transform(Var<T>(points), Var<T>(transform.reshaped({1, 9}))).value();
}

}  // namespace fatnet
