#pragma once

// Checkpoint file: u64 LE header length, UTF-8 JSON header, then one
// u64 LE byte length plus raw little-endian values per state tensor.

#include "certkit/network.hpp"

#include <map>
#include <string>

namespace certkit {

inline constexpr int kCheckpointFormat = 1;

using Metadata = std::map<std::string, std::string>;

template <class T>
void save_checkpoint(const std::string& path, const Network<T>& net, const Metadata& meta = {});

/// Loads into T regardless of the stored dtype.
template <class T>
Network<T> load_checkpoint(const std::string& path, Metadata* meta = nullptr);

}  // namespace certkit
