#pragma once

#include <filesystem>
#include <string>

#include "octlesion/net.hpp"

namespace oct::nn {

// Checkpoint layout: 8-byte magic "OCTNNET1", little-endian u64 header
// length, JSON header (architecture), then all parameter tensors followed by
// all buffer tensors as little-endian IEEE-754 doubles.
std::string serialize_net(const MiniNet& net);
MiniNet deserialize_net(const std::string& bytes);

void save_net(const MiniNet& net, const std::filesystem::path& path);
MiniNet load_net(const std::filesystem::path& path);

}  // namespace oct::nn
