#include "lrnet/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lrnet/config.hpp"
#include "lrnet/errors.hpp"

namespace lrnet {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (Real v : t.data()) f64(static_cast<double>(v));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    const auto b = take(n);
    return {b.begin(), b.end()};
  }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank > 8) throw CheckpointError("checkpoint tensor rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    const std::size_t n = shape_size(shape);
    if (n > remaining() / 8) throw CheckpointError("checkpoint truncated inside tensor data");
    Tensor t(shape);
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<Real>(f64());
    return t;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) throw CheckpointError("checkpoint truncated");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::size_t kHeaderBytes = 8 + 4 + 8;

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  Writer p;
  p.str(ck.topology);
  p.str(ck.meta);
  p.u64(ck.epoch);
  p.u64(ck.step_in_epoch);
  p.u64(ck.global_step);
  p.f64(ck.epoch_loss_sum);
  p.f64(ck.epoch_data_sum);
  p.u64(ck.rng.seed());
  p.u64(ck.rng.stream());
  p.u64(ck.rng.counter());
  p.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    p.str(name);
    p.tensor(t);
  }
  p.u64(ck.optimizer.timestep);
  p.u32(static_cast<std::uint32_t>(ck.optimizer.moments.size()));
  for (const auto& [name, m] : ck.optimizer.moments) {
    p.str(name);
    p.tensor(m.first);
    p.tensor(m.second);
  }

  Writer out;
  out.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  out.u32(kCheckpointVersion);
  out.u64(p.bytes().size());
  out.raw(p.bytes().data(), p.bytes().size());
  out.u32(crc32_of(out.bytes()));
  return std::move(out.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes + 4) throw CheckpointError("checkpoint truncated: file too short for a header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError("not a checkpoint: bad magic");
  }
  Reader header(bytes.subspan(8, 12));
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const std::uint64_t length = header.u64();
  if (bytes.size() < kHeaderBytes + 4 || length > bytes.size() - kHeaderBytes - 4) {
    throw CheckpointError("checkpoint truncated: payload declares " + std::to_string(length) + " bytes");
  }
  if (length != bytes.size() - kHeaderBytes - 4) throw CheckpointError("checkpoint has trailing bytes");
  const std::size_t body = kHeaderBytes + length;
  Reader trailer(bytes.subspan(body, 4));
  if (trailer.u32() != crc32_of(bytes.first(body))) throw CheckpointError("checkpoint checksum failure");

  Reader r(bytes.subspan(kHeaderBytes, length));
  Checkpoint ck;
  ck.topology = r.str();
  ck.meta = r.str();
  ck.epoch = r.u64();
  ck.step_in_epoch = r.u64();
  ck.global_step = r.u64();
  ck.epoch_loss_sum = static_cast<Real>(r.f64());
  ck.epoch_data_sum = static_cast<Real>(r.f64());
  const std::uint64_t seed = r.u64(), stream = r.u64(), counter = r.u64();
  ck.rng = Rng(seed, stream, counter);
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    std::string name = r.str();
    ck.tensors.emplace(std::move(name), r.tensor());
  }
  ck.optimizer.timestep = r.u64();
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    std::string name = r.str();
    AdamMoments m;
    m.first = r.tensor();
    m.second = r.tensor();
    ck.optimizer.moments.emplace(std::move(name), std::move(m));
  }
  if (r.remaining() != 0) throw CheckpointError("checkpoint payload has unread bytes");
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

Checkpoint capture_network(Network& net) {
  Checkpoint ck;
  ck.topology = net.topology();
  for (const auto& p : net.params()) ck.tensors.emplace(p.name, *p.value);
  for (const auto& b : net.buffers()) ck.tensors.emplace(b.name, *b.value);
  return ck;
}

void restore_network(const Checkpoint& ck, Network& net) {
  if (ck.topology != net.topology()) {
    throw TopologyError("checkpoint topology " + ck.topology + " does not match network " + net.topology());
  }
  auto copy_in = [&ck](const std::string& name, Tensor* dst) {
    const auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw TopologyError("checkpoint lacks tensor " + name);
    if (it->second.shape() != dst->shape()) {
      throw TopologyError("checkpoint tensor " + name + " has shape " + shape_string(it->second.shape()) +
                          ", network expects " + shape_string(dst->shape()));
    }
    *dst = it->second;
  };
  const auto params = net.params();
  const auto buffers = net.buffers();
  if (params.size() + buffers.size() != ck.tensors.size()) {
    throw TopologyError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, network has " +
                        std::to_string(params.size() + buffers.size()));
  }
  for (const auto& p : params) copy_in(p.name, p.value);
  for (const auto& b : buffers) copy_in(b.name, b.value);
}

std::unique_ptr<Network> network_from_checkpoint(const Checkpoint& ck) {
  NetworkConfig cfg;
  try {
    cfg = network_from_json(nlohmann::json::parse(ck.topology));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint topology is not valid JSON: ") + e.what());
  }
  Rng unused(0);
  auto net = std::make_unique<Network>(cfg, unused);
  restore_network(ck, *net);
  return net;
}

}  // namespace lrnet
