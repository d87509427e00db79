#include "quanet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "quanet/imageio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace quanet {

namespace {

struct GlyphStyle {
    float r, g, b;
};

const std::map<std::string, GlyphStyle>& glyph_styles() {
    static const std::map<std::string, GlyphStyle> styles = {
        {"discs", {0.85f, 0.15f, 0.15f}},    {"squares", {0.10f, 0.65f, 0.20f}},
        {"triangles", {0.20f, 0.30f, 0.90f}}, {"crosses", {0.90f, 0.75f, 0.10f}},
        {"rings", {0.80f, 0.20f, 0.80f}},     {"bars", {0.10f, 0.75f, 0.75f}}};
    return styles;
}

bool inside_glyph(const std::string& cls, double dx, double dy, double r) {
    if (cls == "discs") return dx * dx + dy * dy <= r * r;
    if (cls == "squares") return std::max(std::abs(dx), std::abs(dy)) <= 0.85 * r;
    if (cls == "triangles") {
        // vertices (0,-r), (-0.9r, 0.7r), (0.9r, 0.7r)
        if (dy > 0.7 * r) return false;
        double half = 0.9 * r * (dy + r) / (1.7 * r);
        return std::abs(dx) <= half;
    }
    if (cls == "crosses")
        return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) ||
               (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
    if (cls == "rings") {
        double d2 = dx * dx + dy * dy;
        return d2 <= r * r && d2 >= 0.55 * r * 0.55 * r;
    }
    if (cls == "bars") return std::abs(dx) <= r && std::abs(dy) <= 0.35 * r;
    throw ConfigError("unknown glyph class '" + cls + "'");
}

void draw_glyph(GridF& img, const std::string& cls, float cx, float cy, double r) {
    const GlyphStyle& st = glyph_styles().at(cls);
    const int S = img.shape[0];
    int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    int x1 = std::min(S - 1, static_cast<int>(std::ceil(cx + r + 1)));
    int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    int y1 = std::min(S - 1, static_cast<int>(std::ceil(cy + r + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (inside_glyph(cls, x + 0.5 - cx, y + 0.5 - cy, r)) {
                img.at(y, x, 0) = st.r;
                img.at(y, x, 1) = st.g;
                img.at(y, x, 2) = st.b;
            }
}

// sample `n` centers keeping pairwise distance >= sep, also away from
// `taken`; returns empty vector on failure
std::vector<std::pair<float, float>> place_centers(
    Rng& rng, int n, int size, double margin, double sep,
    const std::vector<std::pair<float, float>>& taken) {
    std::vector<std::pair<float, float>> centers;
    const double sep2 = sep * sep;
    for (int i = 0; i < n; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            float x = static_cast<float>(rng.uniform(margin, size - margin));
            float y = static_cast<float>(rng.uniform(margin, size - margin));
            auto clear = [&](const std::vector<std::pair<float, float>>& pts) {
                for (const auto& [px, py] : pts) {
                    double dx = px - x, dy = py - y;
                    if (dx * dx + dy * dy < sep2) return false;
                }
                return true;
            };
            if (clear(centers) && clear(taken)) {
                centers.emplace_back(x, y);
                placed = true;
            }
        }
        if (!placed) return {};
    }
    return centers;
}

json point_list(const std::vector<std::pair<float, float>>& pts) {
    json arr = json::array();
    for (const auto& [x, y] : pts) arr.push_back({x, y});
    return arr;
}

std::vector<std::pair<float, float>> parse_points(const json& arr) {
    std::vector<std::pair<float, float>> pts;
    for (const auto& p : arr) pts.emplace_back(p.at(0).get<float>(), p.at(1).get<float>());
    return pts;
}

json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in '" + path.string() + "': " + e.what());
    }
    return j;
}

}  // namespace

void DatasetSpec::validate() const {
    require(image_size >= 16, "image_size must be >= 16");
    require(n_train >= 0 && n_val >= 0 && n_test >= 0, "split sizes must be >= 0");
    require(classes.size() >= 2, "need at least two classes (targets + distractors)");
    for (const auto& c : classes)
        require(glyph_styles().count(c) > 0, "unknown glyph class '" + c + "'");
    require(min_count >= 1 && max_count >= min_count,
            "count range must satisfy 1 <= min <= max");
    require(min_glyph >= 1.0 && max_glyph >= min_glyph, "bad glyph size range");
    require(distractor_prob >= 0.0 && distractor_prob <= 1.0, "bad distractor_prob");
    require(noise >= 0.0 && noise <= 0.5, "noise must lie in [0, 0.5]");
}

const std::vector<std::string>& known_glyph_classes() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& [k, s] : glyph_styles()) v.push_back(k);
        return v;
    }();
    return names;
}

GridF render_density(int size, const std::vector<std::pair<float, float>>& points,
                     float sigma) {
    GridF den(Shape{size, size});
    const double radius = 4.0 * sigma;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (const auto& [px, py] : points) {
        int x0 = std::max(0, static_cast<int>(std::floor(px - radius)));
        int x1 = std::min(size - 1, static_cast<int>(std::ceil(px + radius)));
        int y0 = std::max(0, static_cast<int>(std::floor(py - radius)));
        int y1 = std::min(size - 1, static_cast<int>(std::ceil(py + radius)));
        require(x0 <= x1 && y0 <= y1, "density point outside the image");
        // accumulate the truncated window, then renormalize to unit mass
        double total = 0.0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dx = x - px, dy = y - py;
                double d2 = dx * dx + dy * dy;
                if (d2 > radius * radius) continue;
                total += std::exp(-d2 * inv2s2);
            }
        require(total > 0.0, "empty density window");
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dx = x - px, dy = y - py;
                double d2 = dx * dx + dy * dy;
                if (d2 > radius * radius) continue;
                den.at(y, x) += static_cast<float>(std::exp(-d2 * inv2s2) / total);
            }
    }
    return den;
}

CountingSample make_sample(const DatasetSpec& spec, const std::string& image_id,
                           uint64_t index) {
    spec.validate();
    Rng rng(spec.seed, "sample:" + std::to_string(index));

    CountingSample s;
    s.image_id = image_id;
    const int S = spec.image_size;

    // background: light gray with uniform noise
    s.image = GridF(Shape{S, S, 3});
    for (float& v : s.image.data)
        v = static_cast<float>(std::clamp(0.92 + rng.uniform(-spec.noise, spec.noise), 0.0, 1.0));

    int target_idx = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(spec.classes.size()) - 1));
    s.class_name = spec.classes[target_idx];
    int64_t count = rng.log_uniform_int(spec.min_count, spec.max_count);

    bool with_distractors = rng.uniform() < spec.distractor_prob;
    int64_t d_count = 0;
    if (with_distractors) {
        int d_idx = static_cast<int>(
            rng.uniform_int(0, static_cast<int64_t>(spec.classes.size()) - 2));
        if (d_idx >= target_idx) ++d_idx;
        s.distractor_class = spec.classes[d_idx];
        d_count = rng.log_uniform_int(1, std::max<int64_t>(2, count / 2));
    }

    double size_px = rng.uniform(spec.min_glyph, spec.max_glyph);
    for (int attempt = 0;; ++attempt) {
        if (attempt >= 100)
            throw ConfigError("could not place " + std::to_string(count) + "+" +
                              std::to_string(d_count) + " glyphs in a " + std::to_string(S) +
                              "px image after 100 attempts");
        double margin = size_px + 1.0;
        double sep = 2.2 * size_px;
        auto targets = place_centers(rng, static_cast<int>(count), S, margin, sep, {});
        if (!targets.empty() || count == 0) {
            auto distract =
                place_centers(rng, static_cast<int>(d_count), S, margin, sep, targets);
            if (d_count == 0 || !distract.empty()) {
                s.points = std::move(targets);
                s.distractor_points = std::move(distract);
                break;
            }
        }
        size_px = std::max(1.5, size_px * 0.85);  // retry smaller
    }

    for (const auto& [x, y] : s.distractor_points)
        draw_glyph(s.image, s.distractor_class, x, y, size_px);
    for (const auto& [x, y] : s.points) draw_glyph(s.image, s.class_name, x, y, size_px);

    s.density = render_density(S, s.points);
    return s;
}

void generate_dataset(const DatasetSpec& spec, const std::string& root) {
    spec.validate();
    fs::create_directories(fs::path(root) / "images");
    fs::create_directories(fs::path(root) / "densities");

    json annotations = json::object();
    json splits = json::object();
    std::ostringstream class_map;

    struct SplitDef {
        const char* name;
        int n;
    };
    const SplitDef defs[] = {{"train", spec.n_train}, {"val", spec.n_val}, {"test", spec.n_test}};
    uint64_t index = 0;
    for (const auto& def : defs) {
        json ids = json::array();
        for (int i = 0; i < def.n; ++i, ++index) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s_%06d", def.name, i);
            std::string id(buf);
            CountingSample s = make_sample(spec, id, index);
            write_png_rgb8((fs::path(root) / "images" / (id + ".png")).string(),
                           to_u8(s.image));
            write_density((fs::path(root) / "densities" / (id + ".qdm")).string(), s.density);
            json ann;
            ann["points"] = point_list(s.points);
            ann["distractor_class"] = s.distractor_class;
            ann["distractor_points"] = point_list(s.distractor_points);
            annotations[id] = std::move(ann);
            class_map << id << '\t' << s.class_name << '\n';
            ids.push_back(id);
        }
        splits[def.name] = std::move(ids);
    }

    std::ofstream(fs::path(root) / "annotations.json") << annotations.dump(1) << '\n';
    std::ofstream(fs::path(root) / "classes.txt") << class_map.str();
    std::ofstream(fs::path(root) / "splits.json") << splits.dump(1) << '\n';

    json meta;
    meta["version"] = 1;
    meta["image_size"] = spec.image_size;
    meta["seed"] = spec.seed;
    meta["classes"] = spec.classes;
    meta["count_range"] = {spec.min_count, spec.max_count};
    std::ofstream(fs::path(root) / "spec.json") << meta.dump(1) << '\n';
}

namespace {

std::map<std::string, std::string> read_class_map(const std::string& root) {
    std::ifstream in(fs::path(root) / "classes.txt");
    if (!in) throw IoError("cannot open '" + root + "/classes.txt'");
    std::map<std::string, std::string> m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        require(tab != std::string::npos, "classes.txt line without a tab: '" + line + "'");
        m[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return m;
}

}  // namespace

std::vector<CountingSample> load_dataset(const std::string& root, const std::string& split,
                                         int image_size, LoadReport* report) {
    json splits = load_json(fs::path(root) / "splits.json");
    require(splits.contains(split), "split '" + split + "' not present in splits.json");
    json annotations = load_json(fs::path(root) / "annotations.json");
    auto class_map = read_class_map(root);

    std::vector<CountingSample> out;
    for (const auto& id_json : splits.at(split)) {
        std::string id = id_json.get<std::string>();
        if (!annotations.contains(id) || !class_map.count(id)) {
            if (report)
                report->warnings.push_back("image '" + id + "' has no annotation; skipped");
            continue;
        }
        CountingSample s;
        s.image_id = id;
        s.class_name = class_map.at(id);
        const json& ann = annotations.at(id);
        s.points = parse_points(ann.at("points"));
        s.distractor_class = ann.value("distractor_class", std::string());
        if (ann.contains("distractor_points"))
            s.distractor_points = parse_points(ann.at("distractor_points"));

        ImageU8 img = read_png_rgb8((fs::path(root) / "images" / (id + ".png")).string());
        const double scale_x = static_cast<double>(image_size) / img.width;
        const double scale_y = static_cast<double>(image_size) / img.height;
        const bool native = img.width == image_size && img.height == image_size;
        if (!native) img = resize_rgb8(img, image_size, image_size);
        s.image = to_float(img);

        auto rescale = [&](std::vector<std::pair<float, float>>& pts) {
            for (auto& [x, y] : pts) {
                x = static_cast<float>(x * scale_x);
                y = static_cast<float>(y * scale_y);
                if (x < 0.0f || y < 0.0f || x > image_size - 1.0f || y > image_size - 1.0f) {
                    x = std::clamp(x, 0.0f, static_cast<float>(image_size - 1));
                    y = std::clamp(y, 0.0f, static_cast<float>(image_size - 1));
                    if (report)
                        report->warnings.push_back("point clamped to border in '" + id + "'");
                }
            }
        };
        rescale(s.points);
        rescale(s.distractor_points);

        fs::path den_path = fs::path(root) / "densities" / (id + ".qdm");
        if (native && fs::exists(den_path)) {
            s.density = read_density(den_path.string());
            require_shape(s.density.shape == Shape{image_size, image_size},
                          "stored density shape mismatch for '" + id + "'");
        } else {
            s.density = render_density(image_size, s.points);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<std::string> dataset_classes(const std::string& root) {
    std::set<std::string> uniq;
    for (const auto& [id, cls] : read_class_map(root)) uniq.insert(cls);
    return {uniq.begin(), uniq.end()};
}

}  // namespace quanet
