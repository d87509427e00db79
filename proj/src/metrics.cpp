#include "quanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace quanet {

std::vector<double> region_sums(const GridF& map, int level) {
    require_shape(map.shape.rank() == 2, "region_sums expects a rank-2 density map");
    const int H = map.shape[0], W = map.shape[1];
    const int side = 1 << level;
    require(side <= H && side <= W,
            "GAME level " + std::to_string(level) + " too fine for map " + map.shape.str());
    std::vector<double> sums(static_cast<size_t>(side) * side, 0.0);
    for (int y = 0; y < H; ++y) {
        int ry = std::min(side - 1, static_cast<int>((static_cast<int64_t>(y) * side) / H));
        for (int x = 0; x < W; ++x) {
            int rx = std::min(side - 1, static_cast<int>((static_cast<int64_t>(x) * side) / W));
            sums[static_cast<size_t>(ry) * side + rx] += map.at(y, x);
        }
    }
    return sums;
}

EvalRecord make_eval_record(const std::string& image_id, const std::string& class_name,
                            const GridF& pred, const GridF& gt, int max_level) {
    require_shape(pred.shape == gt.shape, "prediction/ground-truth shape mismatch");
    EvalRecord r;
    r.image_id = image_id;
    r.class_name = class_name;
    for (int level = 0; level <= max_level; ++level) {
        r.region_pred.push_back(region_sums(pred, level));
        r.region_gt.push_back(region_sums(gt, level));
    }
    r.pred_count = r.region_pred[0][0];
    r.gt_count = r.region_gt[0][0];
    return r;
}

std::pair<double, double> mae_rmse(const std::vector<EvalRecord>& records) {
    require(!records.empty(), "metrics need at least one record");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (const auto& r : records) {
        double e = r.pred_count - r.gt_count;
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    double n = static_cast<double>(records.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

double game(const std::vector<EvalRecord>& records, int level) {
    require(!records.empty(), "metrics need at least one record");
    double total = 0.0;
    for (const auto& r : records) {
        require(level < static_cast<int>(r.region_pred.size()),
                "record lacks GAME level " + std::to_string(level));
        double err = 0.0;
        for (size_t i = 0; i < r.region_pred[level].size(); ++i)
            err += std::abs(r.region_pred[level][i] - r.region_gt[level][i]);
        total += err;
    }
    return total / static_cast<double>(records.size());
}

double average_precision(const std::vector<std::string>& gt_order,
                         const std::vector<std::string>& pred_order) {
    require(gt_order.size() == pred_order.size() && !gt_order.empty(),
            "average_precision: order lists must match and be non-empty");
    double ap = 0.0;
    std::set<std::string> gt_prefix, pred_prefix;
    for (size_t k = 0; k < gt_order.size(); ++k) {
        gt_prefix.insert(gt_order[k]);
        pred_prefix.insert(pred_order[k]);
        size_t overlap = 0;
        for (const auto& id : pred_prefix) overlap += gt_prefix.count(id);
        ap += static_cast<double>(overlap) / static_cast<double>(k + 1);
    }
    return ap / static_cast<double>(gt_order.size());
}

double rank_map(const std::vector<EvalRecord>& records, std::vector<std::string>* warnings) {
    require(!records.empty(), "metrics need at least one record");
    std::map<std::string, std::vector<const EvalRecord*>> by_class;
    for (const auto& r : records) by_class[r.class_name].push_back(&r);

    double sum_ap = 0.0;
    int classes = 0;
    for (auto& [cls, recs] : by_class) {
        if (recs.size() < 2) {
            if (warnings)
                warnings->push_back("class '" + cls + "' has fewer than 2 images; skipped");
            continue;
        }
        auto order_by = [&](auto key) {
            std::vector<const EvalRecord*> v = recs;
            std::sort(v.begin(), v.end(), [&](const EvalRecord* a, const EvalRecord* b) {
                double ka = key(a), kb = key(b);
                if (ka != kb) return ka < kb;
                return a->image_id < b->image_id;
            });
            std::vector<std::string> ids;
            for (const auto* r : v) ids.push_back(r->image_id);
            return ids;
        };
        auto gt_ids = order_by([](const EvalRecord* r) { return r->gt_count; });
        auto pred_ids = order_by([](const EvalRecord* r) { return r->pred_count; });
        sum_ap += average_precision(gt_ids, pred_ids);
        ++classes;
    }
    require(classes >= 1, "rank mAP needs at least one class with >= 2 images");
    return sum_ap / classes;
}

}  // namespace quanet
