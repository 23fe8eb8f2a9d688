#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <vector>

#include "fatnet/error.hpp"

namespace fatnet {

struct AccuracyMetrics {
  double instance = 0.0;  ///< overall fraction correct
  double per_class = 0.0; ///< unweighted mean recall over classes present
};

inline AccuracyMetrics accuracy_metrics(const std::vector<std::size_t>& preds,
                                        const std::vector<std::size_t>& labels) {
  if (preds.size() != labels.size())
    throw InvalidArgument("accuracy_metrics: prediction and label counts differ");
  if (labels.empty()) throw InvalidArgument("accuracy_metrics: empty input");
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_class;  // hit, total
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [hit, total] = per_class[labels[i]];
    ++total;
    if (preds[i] == labels[i]) {
      ++hit;
      ++correct;
    }
  }
  double recall_sum = 0.0;
  for (const auto& [cls, ht] : per_class)
    recall_sum += double(ht.first) / double(ht.second);
  return {double(correct) / double(labels.size()),
          recall_sum / double(per_class.size())};
}

/**
 * Part mIoU. For each shape, IoU is averaged over the parts of its
 * category, a part absent from both prediction and ground truth counting
 * as 1; the result is the mean over shapes.
 */
inline double part_miou(const std::vector<std::vector<std::size_t>>& preds,
                        const std::vector<std::vector<std::size_t>>& gts,
                        const std::vector<std::vector<std::size_t>>& category_parts) {
  if (preds.size() != gts.size() || gts.size() != category_parts.size())
    throw InvalidArgument("part_miou: shape counts differ");
  if (gts.empty()) throw InvalidArgument("part_miou: no shapes");
  double total = 0.0;
  for (std::size_t s = 0; s < gts.size(); ++s) {
    const auto& pred = preds[s];
    const auto& gt = gts[s];
    const auto& parts = category_parts[s];
    if (pred.size() != gt.size())
      throw InvalidArgument("part_miou: point counts differ for shape " + std::to_string(s));
    if (parts.empty()) throw InvalidArgument("part_miou: category has no parts");
    const std::set<std::size_t> allowed(parts.begin(), parts.end());
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!allowed.count(gt[i]) || !allowed.count(pred[i]))
        throw InvalidArgument("part_miou: label outside the category's parts in shape " +
                              std::to_string(s));
    }
    double shape_iou = 0.0;
    for (std::size_t part : allowed) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool a = gt[i] == part, b = pred[i] == part;
        inter += a && b;
        uni += a || b;
      }
      shape_iou += uni == 0 ? 1.0 : double(inter) / double(uni);
    }
    total += shape_iou / double(allowed.size());
  }
  return total / double(gts.size());
}

}  // namespace fatnet
