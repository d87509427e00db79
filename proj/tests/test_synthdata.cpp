#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "quanet/imageio.hpp"
#include "quanet/rng.hpp"
#include "quanet/synthdata.hpp"

using namespace quanet;
namespace fs = std::filesystem;

namespace {

// Unique scratch directory, removed when the guard dies.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("quanet_test_" + tag + "_" +
                                            std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double grid_sum(const GridF& g) {
    double s = 0.0;
    for (float v : g.data) s += v;
    return s;
}

DatasetSpec tiny_spec(uint64_t seed = 7) {
    DatasetSpec spec;
    spec.image_size = 48;
    spec.n_train = 6;
    spec.n_val = 2;
    spec.n_test = 2;
    spec.max_count = 20;
    spec.seed = seed;
    return spec;
}

// Regular grid of n centers, spaced well apart inside a size x size image.
std::vector<std::pair<float, float>> grid_points(int n, int size, float x0, float step) {
    std::vector<std::pair<float, float>> pts;
    int per_row = static_cast<int>((size - 2 * x0) / step) + 1;
    for (int i = 0; i < n; ++i) {
        float x = x0 + step * (i % per_row);
        float y = x0 + step * (i / per_row);
        REQUIRE(y < size - 1);
        pts.emplace_back(x, y);
    }
    return pts;
}

ImageU8 random_image_u8(int h, int w, uint64_t seed) {
    ImageU8 img;
    img.height = h;
    img.width = w;
    img.rgb.resize(static_cast<size_t>(h) * w * 3);
    Rng rng(seed, "png");
    for (auto& v : img.rgb) v = static_cast<uint8_t>(rng.uniform_int(0, 255));
    return img;
}

void write_text(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    out << body;
}

}  // namespace

// ---------------------------------------------------------------------------
// imageio
// ---------------------------------------------------------------------------

TEST_CASE("PNG round trip preserves every byte of an RGB8 image") {
    TempDir td("png");
    ImageU8 img = random_image_u8(21, 33, 5);
    const std::string path = (td.path / "a.png").string();
    write_png_rgb8(path, img);
    ImageU8 back = read_png_rgb8(path);
    REQUIRE(back.height == 21);
    REQUIRE(back.width == 33);
    CHECK(back.rgb == img.rgb);
}

TEST_CASE("density file round trip is bit exact") {
    TempDir td("qdm");
    Rng rng(11, "den");
    GridF den(Shape{17, 23});
    for (float& v : den.data) v = static_cast<float>(rng.normal(0.0, 1.0));
    const std::string path = (td.path / "d.qdm").string();
    write_density(path, den);
    GridF back = read_density(path);
    REQUIRE(back.shape == den.shape);
    for (size_t i = 0; i < den.data.size(); ++i) CHECK(back.data[i] == den.data[i]);

    SUBCASE("header carries the magic and little-endian dims") {
        std::string bytes = slurp(td.path / "d.qdm");
        REQUIRE(bytes.size() == 8 + 17 * 23 * 4);
        CHECK(bytes.substr(0, 4) == "QDM1");
        CHECK(static_cast<uint8_t>(bytes[4]) == 17);  // H lo
        CHECK(static_cast<uint8_t>(bytes[5]) == 0);   // H hi
        CHECK(static_cast<uint8_t>(bytes[6]) == 23);  // W lo
        CHECK(static_cast<uint8_t>(bytes[7]) == 0);   // W hi
    }

    SUBCASE("corrupted magic is rejected") {
        std::string bytes = slurp(td.path / "d.qdm");
        bytes[0] = 'X';
        write_text(td.path / "bad.qdm", bytes);
        CHECK_THROWS_AS(read_density((td.path / "bad.qdm").string()), IoError);
    }

    SUBCASE("truncated payload is rejected") {
        std::string bytes = slurp(td.path / "d.qdm");
        write_text(td.path / "trunc.qdm", bytes.substr(0, bytes.size() - 5));
        CHECK_THROWS_AS(read_density((td.path / "trunc.qdm").string()), IoError);
    }
}

TEST_CASE("missing files raise io errors") {
    CHECK_THROWS_AS(read_png_rgb8("/nonexistent/nope.png"), IoError);
    CHECK_THROWS_AS(read_density("/nonexistent/nope.qdm"), IoError);
}

TEST_CASE("u8/float conversion round trips and stays in range") {
    ImageU8 img = random_image_u8(9, 7, 3);
    GridF f = to_float(img);
    REQUIRE(f.shape == (Shape{9, 7, 3}));
    for (float v : f.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    ImageU8 back = to_u8(f);
    CHECK(back.rgb == img.rgb);
}

TEST_CASE("bilinear resize basics") {
    SUBCASE("constant image stays constant at any scale") {
        ImageU8 img;
        img.height = img.width = 10;
        img.rgb.assign(10 * 10 * 3, 137);
        ImageU8 up = resize_rgb8(img, 23, 17);
        REQUIRE(up.height == 23);
        REQUIRE(up.width == 17);
        for (uint8_t v : up.rgb) CHECK(static_cast<int>(v) == 137);
    }
    SUBCASE("identity size reproduces the pixels") {
        ImageU8 img = random_image_u8(12, 8, 9);
        ImageU8 same = resize_rgb8(img, 12, 8);
        CHECK(same.rgb == img.rgb);
    }
    SUBCASE("horizontal gradient stays monotone when upscaled") {
        ImageU8 img;
        img.height = 4;
        img.width = 16;
        img.rgb.resize(4 * 16 * 3);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 16; ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<uint8_t>(x * 16);
        ImageU8 up = resize_rgb8(img, 8, 32);
        for (int x = 0; x + 1 < 32; ++x) CHECK(up.at(3, x, 0) <= up.at(3, x + 1, 0));
    }
}

TEST_CASE("16-bit grayscale dump scales the map to full range") {
    TempDir td("g16");
    GridF den(Shape{6, 6});
    den.at(2, 3) = 4.0f;
    den.at(4, 1) = 2.0f;
    const std::string path = (td.path / "den.png").string();
    write_png_gray16(path, den);
    // our RGB8 reader strips 16 -> 8 bit and expands gray -> RGB
    ImageU8 vis = read_png_rgb8(path);
    REQUIRE(vis.height == 6);
    REQUIRE(vis.width == 6);
    CHECK(static_cast<int>(vis.at(2, 3, 0)) == 255);  // max value -> full scale
    CHECK(static_cast<int>(vis.at(4, 1, 0)) == 128);  // half value (32768 >> 8)
    CHECK(static_cast<int>(vis.at(0, 0, 0)) == 0);
}

// ---------------------------------------------------------------------------
// density rendering
// ---------------------------------------------------------------------------

TEST_CASE("a single kernel carries exactly one count") {
    GridF den = render_density(64, {{31.0f, 27.5f}});
    CHECK(grid_sum(den) == doctest::Approx(1.0).epsilon(1e-3));
    for (float v : den.data) CHECK(v >= 0.0f);

    SUBCASE("also when truncated by the image border") {
        GridF corner = render_density(64, {{0.5f, 0.5f}});
        CHECK(grid_sum(corner) == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("density mass equals the number of target points, distractors add nothing") {
    // 40 target discs + 10 distractor squares worth of centers
    auto targets = grid_points(40, 64, 4.0f, 8.0f);
    auto distractors = grid_points(10, 64, 8.5f, 9.0f);
    GridF den = render_density(64, targets);
    CHECK(grid_sum(den) == doctest::Approx(40.0).epsilon(1e-4));
    // rendering the distractor set separately shows what their inclusion
    // would have added; the sample map must exclude it
    GridF dden = render_density(64, distractors);
    CHECK(grid_sum(dden) == doctest::Approx(10.0).epsilon(1e-4));
}

TEST_CASE("sigma controls the spread but not the mass") {
    GridF narrow = render_density(48, {{24.0f, 24.0f}}, 0.8f);
    GridF wide = render_density(48, {{24.0f, 24.0f}}, 3.0f);
    CHECK(grid_sum(narrow) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(grid_sum(wide) == doctest::Approx(1.0).epsilon(1e-3));
    // peak of the narrow kernel is higher
    float n_max = 0.0f, w_max = 0.0f;
    for (float v : narrow.data) n_max = std::max(n_max, v);
    for (float v : wide.data) w_max = std::max(w_max, v);
    CHECK(n_max > w_max);
}

// ---------------------------------------------------------------------------
// sample generation
// ---------------------------------------------------------------------------

TEST_CASE("spec validation rejects bad configurations") {
    CHECK_NOTHROW(tiny_spec().validate());

    DatasetSpec zero_count = tiny_spec();
    zero_count.min_count = 0;  // counts start at one
    CHECK_THROWS_AS(zero_count.validate(), ConfigError);

    DatasetSpec one_class = tiny_spec();
    one_class.classes = {"discs"};
    CHECK_THROWS_AS(one_class.validate(), ConfigError);

    DatasetSpec unknown = tiny_spec();
    unknown.classes = {"discs", "hexagons"};
    CHECK_THROWS_AS(unknown.validate(), ConfigError);

    DatasetSpec noisy = tiny_spec();
    noisy.noise = 0.9;
    CHECK_THROWS_AS(noisy.validate(), ConfigError);

    DatasetSpec inverted = tiny_spec();
    inverted.min_count = 10;
    inverted.max_count = 5;
    CHECK_THROWS_AS(inverted.validate(), ConfigError);
}

TEST_CASE("every generated sample keeps density mass equal to its point count") {
    DatasetSpec spec = tiny_spec(42);
    bool saw_distractors = false;
    for (uint64_t i = 0; i < 24; ++i) {
        CountingSample s = make_sample(spec, "s" + std::to_string(i), i);
        REQUIRE(!s.points.empty());  // counts start at one
        CHECK(grid_sum(s.density) ==
              doctest::Approx(static_cast<double>(s.points.size())).epsilon(1e-3));
        for (float v : s.density.data) CHECK(v >= 0.0f);
        for (auto [x, y] : s.points) {
            CHECK(x >= 0.0f);
            CHECK(y >= 0.0f);
            CHECK(x <= spec.image_size - 1.0f);
            CHECK(y <= spec.image_size - 1.0f);
        }
        for (float v : s.image.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        if (!s.distractor_points.empty()) {
            saw_distractors = true;
            CHECK(s.distractor_class != s.class_name);
            // distractor glyphs never add density mass
            CHECK(grid_sum(s.density) ==
                  doctest::Approx(static_cast<double>(s.points.size())).epsilon(1e-3));
        }
    }
    CHECK(saw_distractors);  // distractor_prob = 0.5 over 24 draws
}

TEST_CASE("same spec and index reproduce a sample exactly") {
    DatasetSpec spec = tiny_spec(3);
    CountingSample a = make_sample(spec, "x", 5);
    CountingSample b = make_sample(spec, "x", 5);
    CHECK(a.class_name == b.class_name);
    CHECK(a.points == b.points);
    CHECK(a.image.data == b.image.data);
    CHECK(a.density.data == b.density.data);

    CountingSample c = make_sample(spec, "x", 6);
    CHECK(a.image.data != c.image.data);  // streams are index-separated
}

TEST_CASE("impossible packing gives up with an error") {
    DatasetSpec spec = tiny_spec();
    spec.image_size = 16;
    spec.min_count = 100;
    spec.max_count = 100;
    spec.min_glyph = 5.0;
    spec.max_glyph = 5.0;
    CHECK_THROWS_AS(make_sample(spec, "full", 0), ConfigError);
}

// ---------------------------------------------------------------------------
// dataset generation + loading
// ---------------------------------------------------------------------------

TEST_CASE("generated datasets are byte identical across runs and splits are disjoint") {
    DatasetSpec spec = tiny_spec(99);
    TempDir a("gen_a"), b("gen_b");
    generate_dataset(spec, a.str());
    generate_dataset(spec, b.str());

    std::vector<std::string> rels;
    for (const auto& e : fs::recursive_directory_iterator(a.path))
        if (e.is_regular_file()) rels.push_back(fs::relative(e.path(), a.path).string());
    std::sort(rels.begin(), rels.end());
    REQUIRE(rels.size() == 4 + 2 * (6 + 2 + 2));  // 4 metadata files + png/qdm per image
    for (const auto& rel : rels) CHECK(slurp(a.path / rel) == slurp(b.path / rel));

    std::ifstream splits_in(a.path / "splits.json");
    REQUIRE(splits_in.good());
    std::string splits_text((std::istreambuf_iterator<char>(splits_in)),
                            std::istreambuf_iterator<char>());
    // ids are namespaced by split, so overlap would be a bug in the writer
    auto train = load_dataset(a.str(), "train", spec.image_size);
    auto val = load_dataset(a.str(), "val", spec.image_size);
    auto test = load_dataset(a.str(), "test", spec.image_size);
    REQUIRE(train.size() == 6);
    REQUIRE(val.size() == 2);
    REQUIRE(test.size() == 2);
    std::set<std::string> ids;
    for (const auto* part : {&train, &val, &test})
        for (const auto& s : *part) ids.insert(s.image_id);
    CHECK(ids.size() == 10);
}

TEST_CASE("native-size loading round trips the stored density and annotations") {
    DatasetSpec spec = tiny_spec(1234);
    TempDir td("load");
    generate_dataset(spec, td.str());

    LoadReport report;
    auto samples = load_dataset(td.str(), "train", spec.image_size, &report);
    REQUIRE(samples.size() == 6);
    CHECK(report.warnings.empty());

    for (uint64_t i = 0; i < samples.size(); ++i) {
        const CountingSample& s = samples[i];
        CountingSample ref = make_sample(spec, s.image_id, i);
        CHECK(s.class_name == ref.class_name);
        REQUIRE(s.points.size() == ref.points.size());
        // stored density is float32-exact
        REQUIRE(s.density.shape == ref.density.shape);
        CHECK(s.density.data == ref.density.data);
        // PNG is lossy only through u8 quantization
        GridF quantized = to_float(to_u8(ref.image));
        CHECK(s.image.data == quantized.data);
    }

    SUBCASE("class list comes back sorted and unique") {
        auto classes = dataset_classes(td.str());
        CHECK(!classes.empty());
        CHECK(std::is_sorted(classes.begin(), classes.end()));
        for (const auto& c : classes)
            CHECK(std::find(spec.classes.begin(), spec.classes.end(), c) !=
                  spec.classes.end());
    }

    SUBCASE("unknown split name is a configuration error") {
        CHECK_THROWS_AS(load_dataset(td.str(), "holdout", spec.image_size), ConfigError);
    }
}

TEST_CASE("empty split loads as an empty sample list") {
    DatasetSpec spec = tiny_spec(5);
    spec.n_test = 0;
    TempDir td("empty");
    generate_dataset(spec, td.str());
    auto samples = load_dataset(td.str(), "test", spec.image_size);
    CHECK(samples.empty());
}

TEST_CASE("downscaled loading rescales points and regenerates density") {
    // hand-built directory in the ingestion layout: one 64px image with 14
    // annotated points, loaded at 32px (2x down)
    TempDir td("resize");
    fs::create_directories(td.path / "images");

    ImageU8 img;
    img.height = img.width = 64;
    img.rgb.assign(64 * 64 * 3, 230);
    write_png_rgb8((td.path / "images" / "a.png").string(), img);

    auto pts = grid_points(14, 64, 6.0f, 12.0f);
    std::string ann = "{\"a\": {\"points\": [";
    for (size_t i = 0; i < pts.size(); ++i) {
        if (i) ann += ", ";
        ann += "[" + std::to_string(pts[i].first) + ", " + std::to_string(pts[i].second) + "]";
    }
    ann += "], \"distractor_class\": \"\", \"distractor_points\": []}}";
    write_text(td.path / "annotations.json", ann);
    write_text(td.path / "classes.txt", "a\tdiscs\n");
    write_text(td.path / "splits.json", "{\"train\": [\"a\"]}");

    LoadReport report;
    auto samples = load_dataset(td.str(), "train", 32, &report);
    REQUIRE(samples.size() == 1);
    CHECK(report.warnings.empty());
    const CountingSample& s = samples[0];
    REQUIRE(s.points.size() == 14);
    REQUIRE(s.image.shape == (Shape{32, 32, 3}));
    for (size_t i = 0; i < pts.size(); ++i) {
        CHECK(s.points[i].first == doctest::Approx(pts[i].first * 0.5f));
        CHECK(s.points[i].second == doctest::Approx(pts[i].second * 0.5f));
    }
    REQUIRE(s.density.shape == (Shape{32, 32}));
    CHECK(grid_sum(s.density) == doctest::Approx(14.0).epsilon(1e-3));
}

TEST_CASE("loader warnings: missing annotations skip, border points clamp") {
    TempDir td("warn");
    fs::create_directories(td.path / "images");

    ImageU8 img;
    img.height = img.width = 64;
    img.rgb.assign(64 * 64 * 3, 240);
    write_png_rgb8((td.path / "images" / "a.png").string(), img);
    write_png_rgb8((td.path / "images" / "c.png").string(), img);

    // 'b' is listed in the split but has no annotation; 'c' has a point past
    // the right edge
    write_text(td.path / "annotations.json",
               "{\"a\": {\"points\": [[10.0, 12.0]]},"
               " \"c\": {\"points\": [[63.6, 10.0]]}}");
    write_text(td.path / "classes.txt", "a\tdiscs\nb\tdiscs\nc\tsquares\n");
    write_text(td.path / "splits.json", "{\"train\": [\"a\", \"b\", \"c\"]}");

    LoadReport report;
    auto samples = load_dataset(td.str(), "train", 64, &report);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].image_id == "a");
    CHECK(samples[1].image_id == "c");
    CHECK(samples[1].points[0].first == 63.0f);
    CHECK(samples[1].points[0].second == 10.0f);
    CHECK(grid_sum(samples[1].density) == doctest::Approx(1.0).epsilon(1e-3));

    REQUIRE(report.warnings.size() == 2);
    CHECK(report.warnings[0].find("'b'") != std::string::npos);
    CHECK(report.warnings[1].find("clamped") != std::string::npos);
}

TEST_CASE("malformed metadata is a hard error") {
    TempDir td("bad");
    write_text(td.path / "splits.json", "{\"train\": [");
    CHECK_THROWS_AS(load_dataset(td.str(), "train", 32), IoError);
}
