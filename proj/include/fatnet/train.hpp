#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fatnet/checkpoint.hpp"
#include "fatnet/config.hpp"
#include "fatnet/data.hpp"
#include "fatnet/metrics.hpp"
#include "fatnet/model.hpp"
#include "fatnet/optim.hpp"

namespace fatnet {

/// Staircase decay: max(lr * decay^floor(epoch / every), floor).
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const double steps = double(epoch / cfg.decay_every);
  return std::max(cfg.lr * std::pow(cfg.lr_decay, steps), cfg.lr_floor);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;  ///< per cloud, or per point when segmenting
  std::optional<double> val;  ///< instance accuracy or part mIoU
};

struct EvalResult {
  double instance_acc = 0.0;  ///< per cloud, or per point when segmenting
  double class_acc = 0.0;
  double miou = 0.0;

  double headline(Task task) const { return task == Task::kClassify ? instance_acc : miou; }
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::optional<double> best_val;
};

inline std::string history_header(Task task) {
  return std::string("epoch,lr,train_loss,train_acc,") +
         (task == Task::kClassify ? "val_acc" : "val_miou");
}

inline std::string history_row(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,", r.epoch, r.lr, r.train_loss,
                r.train_acc);
  std::string row = buf;
  if (r.val) {
    std::snprintf(buf, sizeof buf, "%.9g", *r.val);
    row += buf;
  }
  return row;
}

namespace detail {

template <typename T>
Tensor<T> stack_clouds(const std::vector<const PointCloud*>& clouds) {
  const std::size_t n = clouds.front()->size();
  Tensor<T> out({clouds.size() * n, 3});
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    if (clouds[b]->size() != n)
      throw InvalidArgument("clouds in one batch must have equal point counts");
    for (std::size_t i = 0; i < 3 * n; ++i) out[b * 3 * n + i] = T(clouds[b]->xyz[i]);
  }
  return out;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace detail

/// Eval-mode logits for all clouds, rows concatenated in order.
template <typename T>
Tensor<T> predict_logits(FatNet<T>& model, const std::vector<PointCloud>& clouds,
                         std::size_t batch_size = 8) {
  if (clouds.empty()) throw InvalidArgument("no clouds to predict");
  NoGradGuard guard;
  std::vector<T> rows;
  std::size_t width = 0;
  for (std::size_t start = 0; start < clouds.size(); start += batch_size) {
    const std::size_t end = std::min(clouds.size(), start + batch_size);
    std::vector<const PointCloud*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&clouds[i]);
    const std::size_t n = clouds[start].size();
    const Tensor<T> logits =
        model.forward(Var<T>(detail::stack_clouds<T>(batch)), {batch.size(), n}, Mode::kEval)
            .value();
    width = logits.cols();
    rows.insert(rows.end(), logits.data().begin(), logits.data().end());
  }
  const std::size_t count = rows.size() / width;
  return Tensor<T>({count, width}, std::move(rows));
}

/**
 * Eval-mode predictions: one class per cloud, or one part per point
 * (concatenated over clouds) when segmenting.
 */
template <typename T>
std::vector<std::size_t> predict(FatNet<T>& model, const std::vector<PointCloud>& clouds,
                                 std::size_t batch_size = 8) {
  return detail::argmax_rows(predict_logits(model, clouds, batch_size));
}

/**
 * Classification: instance and class-averaged accuracy. Segmentation: each
 * point takes the best-scoring part of its shape's category, then part mIoU
 * and per-point accuracy are reported.
 */
template <typename T>
EvalResult evaluate(FatNet<T>& model, const Dataset& ds, const std::vector<Sample>& split,
                    std::size_t batch_size = 8) {
  if (split.empty()) throw InvalidArgument("cannot evaluate an empty split");
  std::vector<PointCloud> clouds;
  for (const auto& s : split) clouds.push_back(s.cloud);
  const Tensor<T> logits = predict_logits(model, clouds, batch_size);
  EvalResult r;
  if (ds.task == Task::kClassify) {
    std::vector<std::size_t> labels;
    for (const auto& s : split) labels.push_back(s.label);
    const auto m = accuracy_metrics(detail::argmax_rows(logits), labels);
    r.instance_acc = m.instance;
    r.class_acc = m.per_class;
    return r;
  }
  std::vector<std::vector<std::size_t>> p, g, parts;
  std::size_t row = 0, hits = 0, total = 0;
  for (const auto& s : split) {
    const auto& allowed = ds.category_parts[ds.category_of(s)];
    std::vector<std::size_t> pred(s.cloud.size());
    for (std::size_t i = 0; i < pred.size(); ++i, ++row) {
      auto lr = logits.row(row);
      std::size_t best = allowed[0];
      for (std::size_t part : allowed)
        if (lr[part] > lr[best]) best = part;
      pred[i] = best;
      hits += best == s.point_labels[i];
      ++total;
    }
    p.push_back(std::move(pred));
    g.push_back(s.point_labels);
    parts.push_back(allowed);
  }
  r.instance_acc = double(hits) / double(total);
  r.class_acc = r.instance_acc;
  r.miou = part_miou(p, g, parts);
  return r;
}

/**
 * Mini-batch training with Adam, the staircase schedule and train-mode
 * batch norm. Every epoch reshuffles (seeded) and re-augments the training
 * split, then evaluates on the test split when it is non-empty.
 *
 * `checkpoint` (optional) receives the final weights; the weights of the
 * best validation epoch go to `checkpoint + ".best"`.
 */
template <typename T>
TrainResult train(FatNet<T>& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& checkpoint = "",
                  const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (ds.train.empty()) throw InvalidArgument("training split is empty");
  if (model.config().task != ds.task)
    throw InvalidArgument("model task does not match the dataset");
  if (model.config().classes != ds.num_labels)
    throw InvalidArgument("model predicts " + std::to_string(model.config().classes) +
                          " labels but the dataset has " + std::to_string(ds.num_labels));
  model.set_bn_momentum(T(cfg.bn_momentum));

  auto named = named_params(model);
  std::vector<Tensor<T>*> params;
  std::vector<std::string> names;
  for (auto& [n, p] : named) {
    params.push_back(&p->var.mutable_value());
    names.push_back(n);
  }
  AdamState<T> adam;

  TrainResult result;
  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.lr = T(lr_at(epoch, cfg));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = substream(cfg.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng aug_rng = substream(cfg.seed, "augment", epoch);

    double loss_sum = 0.0;
    std::size_t loss_batches = 0, hits = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      // A lone trailing cloud would give the head's batch norm one row.
      if (end - start < 2 && order.size() > 1) break;
      std::vector<PointCloud> clouds;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = ds.train[order[i]];
        const std::uint64_t aug_seed = aug_rng();
        clouds.push_back(cfg.augment_enabled ? augment(s.cloud, aug_seed, cfg.augment) : s.cloud);
        if (ds.task == Task::kClassify) labels.push_back(s.label);
        else labels.insert(labels.end(), s.point_labels.begin(), s.point_labels.end());
      }
      std::vector<const PointCloud*> ptrs;
      for (const auto& c : clouds) ptrs.push_back(&c);
      const std::size_t n = clouds.front().size();

      for (auto& [name, p] : named) p->var.zero_grad();
      Var<T> logits = model.forward(Var<T>(detail::stack_clouds<T>(ptrs)),
                                    {clouds.size(), n}, Mode::kTrain);
      Var<T> loss = softmax_cross_entropy(logits, labels);
      const double lv = double(loss.value()[0]);
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite loss " + std::to_string(lv) + " at epoch " +
                           std::to_string(epoch) + ", batch starting at " +
                           std::to_string(start) + " (lr " + std::to_string(lr_at(epoch, cfg)) +
                           ")");
      }
      backward(loss);
      std::vector<const Tensor<T>*> grads;
      for (auto& [name, p] : named) grads.push_back(&p->var.grad());
      adam_step(params, grads, adam, names);

      const auto preds = detail::argmax_rows(logits.value());
      for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
      seen += preds.size();
      loss_sum += lv;
      ++loss_batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, cfg);
    rec.train_loss = loss_sum / double(std::max<std::size_t>(1, loss_batches));
    rec.train_acc = seen ? double(hits) / double(seen) : 0.0;
    if (!ds.test.empty()) {
      rec.val = evaluate(model, ds, ds.test, cfg.batch_size).headline(ds.task);
      if (!result.best_val || *rec.val > *result.best_val) {
        result.best_val = rec.val;
        result.best_epoch = epoch;
        if (!checkpoint.empty()) save_checkpoint(model, checkpoint + ".best");
      }
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!checkpoint.empty()) save_checkpoint(model, checkpoint);
  return result;
}

}  // namespace fatnet
