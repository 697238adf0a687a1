#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lrnet/network.hpp"
#include "lrnet/rng.hpp"
#include "lrnet/training.hpp"

namespace lrnet {

/// On-disk layout, all integers little-endian:
///
///   "LRNETCK1"            8-byte magic
///   u32 version           kCheckpointVersion
///   u64 payload_length
///   payload:
///     str topology, str meta                      (u32 length + bytes)
///     u64 epoch, u64 step_in_epoch, u64 global_step
///     f64 epoch_loss_sum, f64 epoch_data_sum
///     u64 rng_seed, u64 rng_stream, u64 rng_counter
///     u32 n, n x tensor                           (str name, u32 rank, rank x u64 dim, f64 data...)
///     u64 adam_timestep, u32 m, m x (str name, tensor first, tensor second)
///   u32 crc32                                      over every preceding byte
inline constexpr char kCheckpointMagic[8] = {'L', 'R', 'N', 'E', 'T', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string topology;
  std::string meta;
  std::uint64_t epoch = 0;
  std::uint64_t step_in_epoch = 0;
  std::uint64_t global_step = 0;
  Real epoch_loss_sum = 0;
  Real epoch_data_sum = 0;
  Rng rng{0};
  std::map<std::string, Tensor> tensors;  // parameters and buffers
  AdamState optimizer;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Topology plus every parameter and buffer of `net`.
Checkpoint capture_network(Network& net);
/// Copies tensors into `net`; throws TopologyError when layouts differ.
void restore_network(const Checkpoint& ck, Network& net);
/// Rebuilds the network described by the checkpoint's topology.
std::unique_ptr<Network> network_from_checkpoint(const Checkpoint& ck);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace lrnet
