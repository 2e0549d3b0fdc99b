#pragma once

// Tensor archive: u64 LE manifest length, JSON manifest, then one blob.
// The manifest lists name, shape, dtype, byte offset and length per entry.

#include "certkit/types.hpp"

#include <map>
#include <string>

namespace certkit {

struct ArchiveTensor {
    std::vector<Index> shape;
    std::string dtype = "f64";  // f32, f64, i32
    std::vector<double> values;

    Index count() const;
};

using TensorArchive = std::map<std::string, ArchiveTensor>;

void write_archive(const std::string& path, const TensorArchive& archive);
TensorArchive read_archive(const std::string& path);

}  // namespace certkit
