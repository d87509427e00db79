#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "quanet/grid.hpp"
#include "quanet/nn.hpp"

namespace quanet {

// Training-state archive: a plain POSIX tar holding
//   manifest.json  version + tensor name -> {shape, dtype, byte offset}
//   weights.bin    one contiguous little-endian float32 blob, manifest order
//   state.json     run metadata (epoch, seed, variant, config echo, ...)
//   moments.bin    optional little-endian float64 sidecar: per tensor, the
//                  double-precision master value plus Adam m and v
//
// The float32 blob is the interchange surface any external tool can read;
// the sidecar preserves the double-precision optimizer state so a resumed
// run continues bit-identically. Archives are written with zeroed
// timestamps, so identical contents give identical bytes.
struct Checkpoint {
    nlohmann::json state = nlohmann::json::object();     // free-form run metadata
    std::vector<std::pair<std::string, GridD>> tensors;  // sorted by name
    bool has_moments = false;
    std::vector<std::pair<GridD, GridD>> moments;  // Adam (m, v), parallel to tensors
    int64_t opt_step = 0;                          // Adam timestep

    // nullptr when the name is absent
    const GridD* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Orders every parameter (and, with moments, its Adam state) into a
// checkpoint. Empty moment grids are stored as zeros.
Checkpoint snapshot_params(const ParamStore<double>& params, bool with_moments);

// Writes checkpoint values (and moments when present) back into the store.
// The name sets and shapes must match exactly; any difference is a
// ConfigError naming the offending tensor.
void restore_params(ParamStore<double>& params, const Checkpoint& ck);

}  // namespace quanet
