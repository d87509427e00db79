#pragma once

#include <string>
#include <vector>

#include "quanet/grid.hpp"

namespace quanet {

// Everything the metrics need about one evaluated image: counts plus
// per-region sums for each GAME level (region grid 2^L x 2^L, level 0 =
// whole image).
struct EvalRecord {
    std::string image_id;
    std::string class_name;
    double gt_count = 0.0;
    double pred_count = 0.0;
    std::vector<std::vector<double>> region_pred;  // [level][region]
    std::vector<std::vector<double>> region_gt;
};

// Region boundaries at floor(i * H / 2^L): exact for power-of-two sizes,
// deterministic floor/ceil split otherwise.
std::vector<double> region_sums(const GridF& map, int level);

EvalRecord make_eval_record(const std::string& image_id, const std::string& class_name,
                            const GridF& pred, const GridF& gt, int max_level = 3);

std::pair<double, double> mae_rmse(const std::vector<EvalRecord>& records);

// GAME(L) = mean over images of the summed per-region absolute count error.
double game(const std::vector<EvalRecord>& records, int level);

// Rank preservation: per class, order images by GT count and by predicted
// count (ties broken by image id); AP = mean over prefix sizes of the
// overlap fraction; mAP = mean over classes with >= 2 images.
double rank_map(const std::vector<EvalRecord>& records, std::vector<std::string>* warnings = nullptr);

double average_precision(const std::vector<std::string>& gt_order,
                         const std::vector<std::string>& pred_order);

}  // namespace quanet
