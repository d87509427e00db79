#include "quanet/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

using nlohmann::json;

namespace quanet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written little-endian via memcpy");

namespace {

constexpr int kVersion = 1;
constexpr size_t kBlock = 512;

// ---- minimal POSIX (ustar) tar ----

struct TarMember {
    std::string name;
    std::string bytes;
};

std::array<char, kBlock> tar_header(const std::string& name, size_t size) {
    require(name.size() < 100, "tar member name too long: '" + name + "'");
    std::array<char, kBlock> h{};
    std::memcpy(h.data(), name.data(), name.size());
    std::snprintf(h.data() + 100, 8, "%07o", 0644);  // mode
    std::snprintf(h.data() + 108, 8, "%07o", 0);     // uid
    std::snprintf(h.data() + 116, 8, "%07o", 0);     // gid
    std::snprintf(h.data() + 124, 12, "%011llo", static_cast<unsigned long long>(size));
    std::snprintf(h.data() + 136, 12, "%011o", 0);  // mtime: zero for stable bytes
    std::memset(h.data() + 148, ' ', 8);            // checksum counted as spaces
    h[156] = '0';                                   // regular file
    std::memcpy(h.data() + 257, "ustar", 6);        // magic, NUL-terminated
    h[263] = '0';
    h[264] = '0';  // version "00"
    unsigned sum = 0;
    for (char c : h) sum += static_cast<unsigned char>(c);
    std::snprintf(h.data() + 148, 8, "%06o", sum);  // 6 digits, NUL, trailing space
    return h;
}

void write_tar(const std::string& path, const std::vector<TarMember>& members) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    for (const TarMember& m : members) {
        auto h = tar_header(m.name, m.bytes.size());
        out.write(h.data(), kBlock);
        out.write(m.bytes.data(), static_cast<std::streamsize>(m.bytes.size()));
        size_t pad = (kBlock - m.bytes.size() % kBlock) % kBlock;
        std::string zeros(pad, '\0');
        out.write(zeros.data(), static_cast<std::streamsize>(pad));
    }
    std::string end(2 * kBlock, '\0');
    out.write(end.data(), static_cast<std::streamsize>(end.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

std::vector<TarMember> read_tar(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<TarMember> members;
    std::array<char, kBlock> h;
    while (in.read(h.data(), kBlock)) {
        bool all_zero = true;
        for (char c : h)
            if (c) {
                all_zero = false;
                break;
            }
        if (all_zero) break;  // end-of-archive marker
        if (std::memcmp(h.data() + 257, "ustar", 5) != 0)
            throw IoError("'" + path + "' is not a tar archive");
        TarMember m;
        m.name.assign(h.data(), strnlen(h.data(), 100));
        char* endp = nullptr;
        unsigned long long size = std::strtoull(h.data() + 124, &endp, 8);
        m.bytes.resize(size);
        if (!in.read(m.bytes.data(), static_cast<std::streamsize>(size)))
            throw IoError("truncated tar member '" + m.name + "' in '" + path + "'");
        in.ignore(static_cast<std::streamsize>((kBlock - size % kBlock) % kBlock));
        members.push_back(std::move(m));
    }
    return members;
}

const TarMember* find_member(const std::vector<TarMember>& members, const std::string& name) {
    for (const TarMember& m : members)
        if (m.name == name) return &m;
    return nullptr;
}

const TarMember& need_member(const std::vector<TarMember>& members, const std::string& name,
                             const std::string& path) {
    const TarMember* m = find_member(members, name);
    if (!m) throw IoError("checkpoint '" + path + "' is missing " + name);
    return *m;
}

json parse_member(const TarMember& m) {
    try {
        return json::parse(m.bytes);
    } catch (const json::exception& e) {
        throw IoError("malformed " + m.name + ": " + e.what());
    }
}

template <typename T>
void append_scalars(std::string& blob, const std::vector<double>& data) {
    for (double v : data) {
        T x = static_cast<T>(v);
        char buf[sizeof(T)];
        std::memcpy(buf, &x, sizeof(T));
        blob.append(buf, sizeof(T));
    }
}

template <typename T>
void read_scalars(const std::string& blob, size_t offset, GridD& out) {
    for (size_t i = 0; i < out.data.size(); ++i) {
        T x;
        std::memcpy(&x, blob.data() + offset + i * sizeof(T), sizeof(T));
        out.data[i] = static_cast<double>(x);
    }
}

}  // namespace

const GridD* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, g] : tensors)
        if (n == name) return &g;
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    for (size_t i = 1; i < ck.tensors.size(); ++i)
        require(ck.tensors[i - 1].first < ck.tensors[i].first,
                "checkpoint tensors must be sorted by unique name");
    if (ck.has_moments)
        require(ck.moments.size() == ck.tensors.size(),
                "moment list does not match the tensor list");

    json manifest;
    manifest["version"] = kVersion;
    manifest["blob"] = "weights.bin";
    json entries = json::object();
    std::string weights;
    uint64_t offset = 0;
    for (const auto& [name, g] : ck.tensors) {
        json t;
        t["shape"] = g.shape.dims;
        t["dtype"] = "float32";
        t["offset"] = offset;
        entries[name] = std::move(t);
        append_scalars<float>(weights, g.data);
        offset += g.data.size() * sizeof(float);
    }
    manifest["tensors"] = std::move(entries);

    json state = ck.state;
    state["version"] = kVersion;
    state["opt_step"] = ck.opt_step;
    state["has_moments"] = ck.has_moments;

    std::vector<TarMember> members;
    members.push_back({"manifest.json", manifest.dump(1) + "\n"});
    members.push_back({"weights.bin", std::move(weights)});
    members.push_back({"state.json", state.dump(1) + "\n"});
    if (ck.has_moments) {
        std::string blob;
        for (size_t i = 0; i < ck.tensors.size(); ++i) {
            const GridD& value = ck.tensors[i].second;
            const auto& [m, v] = ck.moments[i];
            auto check = [&](const GridD& g, const char* what) {
                require(g.data.empty() || g.shape == value.shape,
                        std::string(what) + " shape mismatch for '" + ck.tensors[i].first + "'");
            };
            check(m, "moment m");
            check(v, "moment v");
            std::vector<double> zeros;
            auto data_or_zeros = [&](const GridD& g) -> const std::vector<double>& {
                if (!g.data.empty()) return g.data;
                zeros.assign(value.data.size(), 0.0);
                return zeros;
            };
            append_scalars<double>(blob, value.data);
            append_scalars<double>(blob, data_or_zeros(m));
            append_scalars<double>(blob, data_or_zeros(v));
        }
        members.push_back({"moments.bin", std::move(blob)});
    }
    write_tar(path, members);
}

Checkpoint load_checkpoint(const std::string& path) {
    auto members = read_tar(path);
    json manifest = parse_member(need_member(members, "manifest.json", path));
    if (!manifest.contains("version"))
        throw ConfigError("checkpoint '" + path + "' has no version field");
    int version = manifest.at("version").get<int>();
    if (version != kVersion)
        throw ConfigError("checkpoint '" + path + "' is version " + std::to_string(version) +
                          "; this build reads version " + std::to_string(kVersion));

    const std::string& blob = need_member(members, "weights.bin", path).bytes;

    Checkpoint ck;
    uint64_t expected = 0;
    for (const auto& [name, t] : manifest.at("tensors").items()) {
        Shape shape(t.at("shape").get<std::vector<int>>());
        require(t.at("dtype").get<std::string>() == "float32",
                "tensor '" + name + "' has unsupported dtype");
        uint64_t offset = t.at("offset").get<uint64_t>();
        GridD g(shape);
        uint64_t bytes = g.data.size() * sizeof(float);
        if (offset + bytes > blob.size())
            throw IoError("weights blob too short for tensor '" + name + "'");
        read_scalars<float>(blob, offset, g);
        expected += bytes;
        ck.tensors.emplace_back(name, std::move(g));
    }
    if (expected != blob.size())
        throw IoError("weights blob has " + std::to_string(blob.size()) + " bytes; manifest covers " +
                      std::to_string(expected));

    ck.state = parse_member(need_member(members, "state.json", path));
    ck.opt_step = ck.state.value("opt_step", int64_t{0});
    ck.has_moments = ck.state.value("has_moments", false);

    if (ck.has_moments) {
        const std::string& mm = need_member(members, "moments.bin", path).bytes;
        uint64_t want = 0;
        for (const auto& [name, g] : ck.tensors) want += 3 * g.data.size() * sizeof(double);
        if (mm.size() != want)
            throw IoError("moments sidecar has " + std::to_string(mm.size()) +
                          " bytes; expected " + std::to_string(want));
        size_t off = 0;
        for (auto& [name, g] : ck.tensors) {
            GridD m(g.shape), v(g.shape);
            read_scalars<double>(mm, off, g);  // double master overrides the f32 value
            off += g.data.size() * sizeof(double);
            read_scalars<double>(mm, off, m);
            off += g.data.size() * sizeof(double);
            read_scalars<double>(mm, off, v);
            off += g.data.size() * sizeof(double);
            ck.moments.emplace_back(std::move(m), std::move(v));
        }
    }
    return ck;
}

Checkpoint snapshot_params(const ParamStore<double>& params, bool with_moments) {
    Checkpoint ck;
    ck.has_moments = with_moments;
    for (const auto& [name, e] : params) {
        ck.tensors.emplace_back(name, e.value);
        if (with_moments) ck.moments.emplace_back(e.m, e.v);
    }
    return ck;
}

void restore_params(ParamStore<double>& params, const Checkpoint& ck) {
    size_t matched = 0;
    for (auto& [name, e] : params) {
        const GridD* g = ck.find(name);
        if (!g) throw ConfigError("checkpoint has no tensor '" + name + "'");
        if (g->shape != e.value.shape)
            throw ConfigError("tensor '" + name + "' is " + g->shape.str() +
                              " in the checkpoint but " + e.value.shape.str() + " in the model");
        e.value = *g;
        ++matched;
    }
    if (matched != ck.tensors.size())
        for (const auto& [name, g] : ck.tensors)
            if (!params.has(name))
                throw ConfigError("checkpoint tensor '" + name + "' does not exist in the model");
    if (ck.has_moments) {
        for (size_t i = 0; i < ck.tensors.size(); ++i) {
            auto& e = params.entry(ck.tensors[i].first);
            e.m = ck.moments[i].first;
            e.v = ck.moments[i].second;
        }
    }
}

}  // namespace quanet
