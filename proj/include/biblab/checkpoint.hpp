#pragma once

#include "biblab/tensor.hpp"

#include <string>
#include <vector>

namespace biblab {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One named tensor inside a checkpoint file.
struct CheckpointEntry {
    std::string name;
    std::vector<Index> dims; // rank 0..2
    std::vector<double> values; // row-major
};

/**
 * Flat binary checkpoint format:
 *   magic "BIBL", version u32, entry count u32; per entry: name length u16,
 *   UTF-8 name bytes, rank u8, dims as u32 each, values as little-endian f64
 *   in row-major order.
 */
void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

/// Snapshot of a parameter collection, in collection order.
std::vector<CheckpointEntry> snapshot(const std::vector<Parameter*>& params);

/// Restores parameter values by name. Every parameter must be present in the
/// entries with matching dims; extra entries are ignored by this call.
void restore(const std::vector<CheckpointEntry>& entries,
             const std::vector<Parameter*>& params);

} // namespace biblab
