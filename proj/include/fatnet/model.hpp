#pragma once

#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fatnet/aggregation.hpp"
#include "fatnet/alignment.hpp"
#include "fatnet/layers.hpp"

namespace fatnet {

enum class Task { kClassify, kSegment };

/// How point and edge embeddings are combined (FAT-layer ablations).
enum class Layout {
  kPerLayer,      ///< FAT layers (the full architecture)
  kCombineAtEnd,  ///< separate point-only and edge-only stacks joined after pooling
};

/**
 * Architecture of a classifier or part segmenter.
 *
 * Backbone: `widths` FAT layers whose outputs are concatenated and fed to
 * one `final_width` FAT layer, then a global aggregator and a dense head.
 */
struct ModelConfig {
  Task task = Task::kClassify;
  std::vector<std::size_t> widths{64, 64, 128};
  std::size_t final_width = 1024;
  std::vector<std::size_t> head{512, 256};
  std::size_t classes = 40;  ///< c: classes, or r: part labels when segmenting
  std::size_t k = 20;
  Aggregation aggregation = Aggregation::kGfa;
  bool attention = true;
  bool residual = true;
  bool edge_center = false;
  Layout layout = Layout::kPerLayer;
  TransformerKind transformer = TransformerKind::kFat;
  std::vector<std::size_t> tnet_widths{64, 128, 1024};
  std::vector<std::size_t> tnet_head{512, 256};

  void validate() const {
    auto even = [](std::size_t w) { return w > 0 && w % 2 == 0; };
    if (widths.empty()) throw InvalidArgument("model needs at least one FAT layer width");
    for (std::size_t w : widths)
      if (!even(w)) throw InvalidArgument("FAT widths must be positive and even");
    if (!even(final_width)) throw InvalidArgument("final width must be positive and even");
    if (transformer == TransformerKind::kFat)
      for (std::size_t w : tnet_widths)
        if (!even(w)) throw InvalidArgument("T-Net widths must be positive and even");
    for (std::size_t w : head)
      if (w == 0) throw InvalidArgument("head widths must be positive");
    if (classes < 2) throw InvalidArgument("need at least 2 classes or parts");
    if (k < 1) throw InvalidArgument("k must be at least 1");
    if (task == Task::kSegment && layout == Layout::kCombineAtEnd)
      throw InvalidArgument("combine-at-end layout is classification only");
  }
};

/**
 * FatNet classifier / part segmenter.
 *
 * Input is a batch laid out as [clouds*N x 3]. Classification returns
 * [clouds x classes] logits; segmentation returns [clouds*N x parts].
 * Not copyable: parameters are graph nodes and copies would alias them.
 */
template <typename T>
class FatNet {
 public:
  using value_type = T;

  explicit FatNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.transformer != TransformerKind::kNone) {
      TNetConfig tc;
      tc.kind = cfg_.transformer;
      tc.widths = cfg_.tnet_widths;
      tc.head = cfg_.tnet_head;
      tc.k = cfg_.k;
      tc.edge_center = cfg_.edge_center;
      tnet_.emplace(tc);
    }
    std::size_t head_in = 0;
    if (cfg_.layout == Layout::kPerLayer) {
      std::size_t in = 3, skip = 0, prev_point = 0;
      for (std::size_t w : cfg_.widths) {
        FatLayerConfig lc = layer_config(in, w);
        if (cfg_.residual) lc.residual_from = prev_point;
        layers_.emplace_back(lc);
        prev_point = lc.branch_width();
        skip += w;
        in = w;
      }
      skip_width_ = skip;
      FatLayerConfig fc = layer_config(skip, cfg_.final_width);
      if (cfg_.residual) fc.residual_from = prev_point;
      final_.emplace(fc);
      aggregator_ = GfaBlock<T>(cfg_.final_width, cfg_.aggregation);
      head_in = aggregator_.out_width();
      if (cfg_.task == Task::kSegment) head_in += skip_width_;
    } else {
      std::size_t pin = 3, ein = 3;
      auto widths = cfg_.widths;
      widths.push_back(cfg_.final_width);
      for (std::size_t w : widths) {
        FatLayerConfig pc = layer_config(pin, w);
        pc.branches = Branches::kPointOnly;
        point_stack_.emplace_back(pc);
        FatLayerConfig ec = layer_config(ein, w);
        ec.branches = Branches::kEdgeOnly;
        edge_stack_.emplace_back(ec);
        pin = ein = w;
      }
      aggregator_ = GfaBlock<T>(cfg_.final_width, cfg_.aggregation);
      edge_aggregator_ = GfaBlock<T>(cfg_.final_width, cfg_.aggregation);
      head_in = 2 * aggregator_.out_width();
    }
    for (std::size_t w : cfg_.head) {
      head_.emplace_back(head_in, w, true, true);
      head_in = w;
    }
    out_ = SharedMap<T>(head_in, cfg_.classes, false, false);
  }

  FatNet(const FatNet&) = delete;
  FatNet& operator=(const FatNet&) = delete;
  FatNet(FatNet&&) = default;
  FatNet& operator=(FatNet&&) = default;

  const ModelConfig& config() const { return cfg_; }

  /// Smallest cloud the model accepts.
  std::size_t min_points() const { return cfg_.k + 1; }

  Var<T> forward(const Var<T>& points, BatchLayout layout, Mode mode) {
    const auto& v = points.value();
    if (v.rank() != 2 || v.cols() != 3 || v.rows() != layout.clouds * layout.points)
      throw DimensionError("model input must be [clouds*N x 3], got " +
                           shape_string(points.shape()));
    if (layout.points <= cfg_.k)
      throw InvalidArgument("cloud of " + std::to_string(layout.points) +
                            " points is too small for k=" + std::to_string(cfg_.k));
    Var<T> x = points;
    if (tnet_) x = apply_transform(x, tnet_->regress(x, layout, mode));

    if (cfg_.layout == Layout::kCombineAtEnd) {
      Var<T> p = x, e = x;
      for (auto& l : point_stack_) p = l.forward(p, layout, mode).out;
      for (auto& l : edge_stack_) e = l.forward(e, layout, mode).out;
      Var<T> g = concat_cols<T>({aggregator_.forward(p, layout.clouds),
                                 edge_aggregator_.forward(e, layout.clouds)});
      return run_head(g, mode);
    }

    std::vector<Var<T>> outs;
    std::optional<Var<T>> residual;
    for (auto& l : layers_) {
      FatOutput<T> o = l.forward(x, layout, mode, residual);
      outs.push_back(o.out);
      if (cfg_.residual) residual = o.point;
      x = o.out;
    }
    Var<T> skip = outs.size() == 1 ? outs[0] : concat_cols(outs);
    Var<T> fin = final_->forward(skip, layout, mode, residual).out;
    Var<T> g = aggregator_.forward(fin, layout.clouds);
    if (cfg_.task == Task::kClassify) return run_head(g, mode);
    return run_head(concat_cols<T>({skip, tile_rows(g, layout.points)}), mode);
  }

  /// Alignment matrices [clouds x 9]; identity rows when no transformer.
  Var<T> transforms(const Var<T>& points, BatchLayout layout, Mode mode) {
    if (tnet_) return tnet_->regress(points, layout, mode);
    Tensor<T> eye({layout.clouds, 9});
    for (std::size_t b = 0; b < layout.clouds; ++b)
      for (std::size_t i = 0; i < 3; ++i) eye[b * 9 + 4 * i] = T(1);
    return Var<T>(eye);
  }

  void set_bn_momentum(T m) {
    if (tnet_) tnet_->set_bn_momentum(m);
    for (auto& l : layers_) l.set_bn_momentum(m);
    if (final_) final_->set_bn_momentum(m);
    for (auto& l : point_stack_) l.set_bn_momentum(m);
    for (auto& l : edge_stack_) l.set_bn_momentum(m);
    for (auto& h : head_) h.set_bn_momentum(m);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    if (tnet_) tnet_->visit(join_name(prefix, "tnet"), v);
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].visit(join_name(prefix, "fat." + std::to_string(i)), v);
    if (final_) final_->visit(join_name(prefix, "fat.final"), v);
    for (std::size_t i = 0; i < point_stack_.size(); ++i)
      point_stack_[i].visit(join_name(prefix, "point_stack." + std::to_string(i)), v);
    for (std::size_t i = 0; i < edge_stack_.size(); ++i)
      edge_stack_[i].visit(join_name(prefix, "edge_stack." + std::to_string(i)), v);
    aggregator_.visit(join_name(prefix, "aggregate"), v);
    if (cfg_.layout == Layout::kCombineAtEnd)
      edge_aggregator_.visit(join_name(prefix, "aggregate_edge"), v);
    for (std::size_t i = 0; i < head_.size(); ++i)
      head_[i].visit(join_name(prefix, "head." + std::to_string(i)), v);
    out_.visit(join_name(prefix, "out"), v);
  }

  TNet<T>* tnet() { return tnet_ ? &*tnet_ : nullptr; }
  std::vector<FatLayer<T>>& layers() { return layers_; }
  FatLayer<T>& final_layer() { return *final_; }
  GfaBlock<T>& aggregator() { return aggregator_; }
  std::size_t skip_width() const { return skip_width_; }

 private:
  FatLayerConfig layer_config(std::size_t in, std::size_t out) const {
    FatLayerConfig lc;
    lc.d_in = in;
    lc.d_out = out;
    lc.k = cfg_.k;
    lc.attention = cfg_.attention;
    lc.edge_center = cfg_.edge_center;
    return lc;
  }

  Var<T> run_head(Var<T> h, Mode mode) {
    for (auto& m : head_) h = m.forward(h, mode);
    return out_.forward(h, mode);
  }

  ModelConfig cfg_;
  std::optional<TNet<T>> tnet_;
  std::vector<FatLayer<T>> layers_;
  std::optional<FatLayer<T>> final_;
  std::vector<FatLayer<T>> point_stack_, edge_stack_;
  GfaBlock<T> aggregator_, edge_aggregator_;
  std::vector<SharedMap<T>> head_;
  SharedMap<T> out_;
  std::size_t skip_width_ = 0;
};

template <typename T>
FatNet<T> make_model(const ModelConfig& cfg, std::uint64_t seed) {
  FatNet<T> m(cfg);
  init_module(m, seed);
  return m;
}

}  // namespace fatnet
