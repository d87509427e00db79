#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "quanet/grid.hpp"
#include "quanet/rng.hpp"

namespace quanet {

// One counting image: pixels, target-class point annotations, the ground-
// truth density map, and a paired distractor-class annotation (possibly
// empty) so class-specificity can be tested.
struct CountingSample {
    std::string image_id;
    std::string class_name;
    GridF image;    // [S x S x 3], values in [0,1]
    GridF density;  // [S x S], sums to |points|
    std::vector<std::pair<float, float>> points;  // (x, y) glyph centers
    std::string distractor_class;
    std::vector<std::pair<float, float>> distractor_points;
};

struct DatasetSpec {
    int image_size = 64;
    int n_train = 2000;
    int n_val = 500;
    int n_test = 500;
    std::vector<std::string> classes = {"discs",   "squares", "triangles",
                                        "crosses", "rings",   "bars"};
    int64_t min_count = 1;
    int64_t max_count = 100;  // counts drawn log-uniform in [min, max]
    double min_glyph = 2.0;   // glyph radius range, pixels
    double max_glyph = 5.0;
    double distractor_prob = 0.5;
    double noise = 0.05;  // background noise amplitude
    uint64_t seed = 0;

    void validate() const;
};

// Names of the glyph shapes the renderer knows how to draw.
const std::vector<std::string>& known_glyph_classes();

// Sum of unit-mass isotropic Gaussians (sigma px) at the given centers;
// each kernel is truncated at 4*sigma, clipped to the image, and
// renormalized so every point contributes exactly one count.
GridF render_density(int size, const std::vector<std::pair<float, float>>& points,
                     float sigma = 1.5f);

// Deterministic single-sample generation; `index` selects the per-sample
// RNG stream.
CountingSample make_sample(const DatasetSpec& spec, const std::string& image_id,
                           uint64_t index);

// Writes images/, densities/, annotations.json, classes.txt (image -> class
// map), and splits.json under root. Reproducible byte-for-byte per spec+seed.
void generate_dataset(const DatasetSpec& spec, const std::string& root);

struct LoadReport {
    std::vector<std::string> warnings;
};

// Reads a dataset in the directory layout written by generate_dataset
// (point-annotation JSON + image->class map + split JSON). Images are
// resized to image_size with points rescaled; densities are regenerated
// from the rescaled points unless the stored map already matches.
std::vector<CountingSample> load_dataset(const std::string& root, const std::string& split,
                                         int image_size, LoadReport* report = nullptr);

// Distinct class names appearing in the image->class map, sorted.
std::vector<std::string> dataset_classes(const std::string& root);

}  // namespace quanet
