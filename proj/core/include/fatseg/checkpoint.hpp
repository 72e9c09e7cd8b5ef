#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "fatseg/net.hpp"
#include "fatseg/optim.hpp"
#include "fatseg/rng.hpp"

namespace fatseg {

// Optimizer state for a whole parameter table, keyed by layer path.
struct AdamTable {
    std::int64_t step = 0;
    std::map<std::string, AdamSlot<float>> slots;
};

struct TrainerState {
    std::int64_t iteration = 0;
    AdamTable adam;
    Rng rng;
};

// Versioned binary container: magic "ASCK", format version u32, a
// length-prefixed JSON spec/state header, then (key-length, key-utf8, rank,
// extents, float32 data) records, little-endian throughout. Reload
// reproduces bit-identical forward outputs.
void save_checkpoint(const std::filesystem::path& path, Network<float>& net, const TrainerState& state);

struct LoadedCheckpoint {
    std::unique_ptr<Network<float>> net;
    TrainerState state;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fatseg
