#include "lrnet/data.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numeric>

#include "lrnet/errors.hpp"

namespace lrnet {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return static_cast<std::uint32_t>(bytes[offset]) << 24 | static_cast<std::uint32_t>(bytes[offset + 1]) << 16 |
         static_cast<std::uint32_t>(bytes[offset + 2]) << 8 | static_cast<std::uint32_t>(bytes[offset + 3]);
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

}  // namespace

Shape Dataset::example_shape() const {
  return {images.dim(1), images.dim(2), images.dim(3)};
}

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError("dataset images must be [N, C, H, W], got " + shape_string(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw DataError("dataset has " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                    " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string split_name) const {
  const Shape ex = example_shape();
  const std::size_t stride = shape_size(ex);
  Dataset out;
  out.images = Tensor({indices.size(), ex[0], ex[1], ex[2]});
  out.labels.reserve(indices.size());
  out.split = std::move(split_name);
  out.num_classes = num_classes;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DataError("subset index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(images.ptr() + indices[i] * stride, stride, out.images.ptr() + i * stride);
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

Dataset Dataset::slice(std::size_t begin, std::size_t count, std::string split_name) const {
  if (begin + count > size()) {
    throw DataError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") exceeds " +
                    std::to_string(size()) + " examples");
  }
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), begin);
  return subset(idx, std::move(split_name));
}

// ---------------------------------------------------------------------------
// IDX

IdxFile parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw DataError("IDX file truncated: missing magic number");
  IdxFile idx;
  idx.magic = read_be32(bytes, 0);
  if ((idx.magic & 0xFFFF0000u) != 0 || ((idx.magic >> 8) & 0xFF) != 0x08) {
    throw DataError("bad IDX magic " + hex32(idx.magic) + " (expected unsigned-byte data)");
  }
  const std::size_t ndims = idx.magic & 0xFF;
  if (ndims == 0) throw DataError("bad IDX magic " + hex32(idx.magic) + " (zero dimensions)");
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) throw DataError("IDX file truncated inside its dimension header");
  std::size_t expected = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    idx.dims.push_back(read_be32(bytes, 4 + 4 * d));
    expected *= idx.dims.back();
  }
  const std::size_t available = bytes.size() - header;
  if (available < expected) {
    throw DataError("IDX payload truncated: header declares " + std::to_string(expected) + " bytes, file has " +
                    std::to_string(available));
  }
  if (available > expected) {
    throw DataError("IDX payload has " + std::to_string(available - expected) + " trailing bytes");
  }
  idx.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return idx;
}

std::vector<std::uint8_t> encode_idx(const IdxFile& idx) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * idx.dims.size() + idx.payload.size());
  append_be32(out, idx.magic);
  for (std::uint32_t d : idx.dims) append_be32(out, d);
  out.insert(out.end(), idx.payload.begin(), idx.payload.end());
  return out;
}

IdxFile read_idx(const std::filesystem::path& path) { return parse_idx(read_file(path)); }

void write_idx(const std::filesystem::path& path, const IdxFile& idx) { write_file(path, encode_idx(idx)); }

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const IdxFile images = read_idx(images_path);
  if (images.magic != kIdxImagesMagic) {
    throw DataError("bad magic " + hex32(images.magic) + " in image file " + images_path.string() + ", expected " +
                    hex32(kIdxImagesMagic));
  }
  const IdxFile labels = read_idx(labels_path);
  if (labels.magic != kIdxLabelsMagic) {
    throw DataError("bad magic " + hex32(labels.magic) + " in label file " + labels_path.string() + ", expected " +
                    hex32(kIdxLabelsMagic));
  }
  if (images.dims[0] != labels.dims[0]) {
    throw DataError("count mismatch: " + std::to_string(images.dims[0]) + " images vs " +
                    std::to_string(labels.dims[0]) + " labels");
  }
  const std::size_t n = images.dims[0], rows = images.dims[1], cols = images.dims[2];
  Dataset out;
  out.images = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < images.payload.size(); ++i) {
    out.images[i] = static_cast<Real>(images.payload[i]) / Real(255);
  }
  out.labels.assign(labels.payload.begin(), labels.payload.end());
  out.split = images_path.filename().string();
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10

std::vector<CifarRecord> parse_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw DataError("CIFAR-10 batch size " + std::to_string(bytes.size()) + " is not a multiple of " +
                    std::to_string(kCifarRecordBytes));
  }
  std::vector<CifarRecord> out(bytes.size() / kCifarRecordBytes);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) throw DataError("CIFAR-10 record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
    out[r].label = rec[0];
    std::copy_n(rec + 1, kCifarPixels, out[r].pixels.begin());
  }
  return out;
}

std::vector<std::uint8_t> encode_cifar10(std::span<const CifarRecord> records) {
  std::vector<std::uint8_t> out;
  out.reserve(records.size() * kCifarRecordBytes);
  for (const auto& r : records) {
    out.push_back(r.label);
    out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  }
  return out;
}

std::vector<CifarRecord> read_cifar10_records(const std::filesystem::path& path) {
  return parse_cifar10(read_file(path));
}

Dataset load_cifar10(std::span<const std::filesystem::path> batch_paths) {
  std::vector<CifarRecord> records;
  for (const auto& p : batch_paths) {
    auto part = read_cifar10_records(p);
    records.insert(records.end(), part.begin(), part.end());
  }
  Dataset out;
  out.images = Tensor({records.size(), 3, 32, 32});
  out.split = "cifar10";
  for (std::size_t r = 0; r < records.size(); ++r) {
    out.labels.push_back(records[r].label);
    const auto& px = records[r].pixels;
    Real mu = 0;
    for (auto v : px) mu += v;
    mu /= static_cast<Real>(kCifarPixels);
    Real ss = 0;
    for (auto v : px) ss += (v - mu) * (v - mu);
    const Real sd = std::sqrt(ss / static_cast<Real>(kCifarPixels));
    Real* dst = out.images.ptr() + r * kCifarPixels;
    if (sd == 0) {
      out.degenerate.push_back(r);
      std::fill_n(dst, kCifarPixels, Real(0));
      continue;
    }
    for (std::size_t i = 0; i < kCifarPixels; ++i) dst[i] = (px[i] - mu) / sd;
  }
  out.validate();
  return out;
}

Tensor crop_and_flip(const Tensor& image, std::size_t offset_y, std::size_t offset_x, bool flip) {
  constexpr std::size_t kPad = 4, kSide = 32;
  if (image.shape() != Shape{3, kSide, kSide}) {
    throw DimensionError("augment expects [3, 32, 32], got " + shape_string(image.shape()));
  }
  if (offset_y > 2 * kPad || offset_x > 2 * kPad) throw DimensionError("crop offset outside [0, 8]");
  Tensor out(image.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < kSide; ++y) {
      const long sy = static_cast<long>(y + offset_y) - static_cast<long>(kPad);
      for (std::size_t x = 0; x < kSide; ++x) {
        const std::size_t dx = flip ? kSide - 1 - x : x;
        const long sx = static_cast<long>(dx + offset_x) - static_cast<long>(kPad);
        const bool inside = sy >= 0 && sy < static_cast<long>(kSide) && sx >= 0 && sx < static_cast<long>(kSide);
        out[(c * kSide + y) * kSide + x] = inside ? image[(c * kSide + sy) * kSide + sx] : Real(0);
      }
    }
  }
  return out;
}

Tensor augment_cifar(const Tensor& image, Rng& rng) {
  const std::size_t oy = rng.uniform_int(9);
  const std::size_t ox = rng.uniform_int(9);
  const bool flip = rng.uniform() < 0.5;
  return crop_and_flip(image, oy, ox, flip);
}

// ---------------------------------------------------------------------------

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed,
                             std::uint64_t epoch, bool shuffle)
    : data_(&data), batch_size_(batch_size), order_(data.size()) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(shuffle_seed, epoch);
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.uniform_int(i)]);
  }
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t count = std::min(batch_size_, order_.size() - cursor_);
  std::span<const std::size_t> idx(order_.data() + cursor_, count);
  cursor_ += count;
  Dataset part = data_->subset(idx, data_->split);
  return Batch{std::move(part.images), std::move(part.labels), std::vector<std::size_t>(idx.begin(), idx.end())};
}

std::size_t BatchIterator::batch_count() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }

void BatchIterator::skip(std::size_t batches) noexcept {
  cursor_ = std::min(order_.size(), cursor_ + batches * batch_size_);
}

std::filesystem::path data_root(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("LRNET_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

MnistFiles locate_mnist(const std::filesystem::path& root) {
  for (const auto& dir : {root / "mnist", root}) {
    MnistFiles f{dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", dir / "t10k-images-idx3-ubyte",
                 dir / "t10k-labels-idx1-ubyte"};
    if (std::filesystem::exists(f.train_images) && std::filesystem::exists(f.test_images)) return f;
  }
  throw DataError("MNIST IDX files not found under " + root.string() + " (set LRNET_DATA_DIR)");
}

}  // namespace lrnet
