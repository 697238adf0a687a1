#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrnet/rng.hpp"
#include "lrnet/tensor.hpp"

namespace lrnet {

struct Dataset {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  std::string split;
  std::size_t num_classes = 10;
  /// Images whose pixels had zero spread and were zero-filled instead of standardized.
  std::vector<std::size_t> degenerate;

  std::size_t size() const noexcept { return labels.size(); }
  Shape example_shape() const;
  /// Throws DataError on inconsistent counts or out-of-range labels.
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices, std::string split_name) const;
  Dataset slice(std::size_t begin, std::size_t count, std::string split_name) const;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Raw IDX container: big-endian magic, one u32 per dimension, unsigned bytes.
struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;
};

IdxFile parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx(const IdxFile& idx);
IdxFile read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxFile& idx);

/// MNIST images scaled to [0, 1], shaped [N, 1, rows, cols].
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixels;

struct CifarRecord {
  std::uint8_t label = 0;
  std::array<std::uint8_t, kCifarPixels> pixels{};  // R plane, G plane, B plane
};

std::vector<CifarRecord> parse_cifar10(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_cifar10(std::span<const CifarRecord> records);
std::vector<CifarRecord> read_cifar10_records(const std::filesystem::path& path);

/// Concatenates batch files; each image is standardized by its own mean and
/// standard deviation.
Dataset load_cifar10(std::span<const std::filesystem::path> batch_paths);

/// Zero-pads a [3, 32, 32] image by 4 on every side, crops 32x32 at
/// (offset_y, offset_x) in [0, 8], optionally mirrors horizontally.
Tensor crop_and_flip(const Tensor& image, std::size_t offset_y, std::size_t offset_x, bool flip);
/// Random crop offsets and a fair-coin flip.
Tensor augment_cifar(const Tensor& image, Rng& rng);

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// One pass over a dataset in a permutation fixed by (shuffle_seed, epoch).
/// The final partial batch is included.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed, std::uint64_t epoch = 0,
                bool shuffle = true);

  std::optional<Batch> next();
  std::size_t batch_count() const noexcept;
  void skip(std::size_t batches) noexcept;

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// `$LRNET_DATA_DIR`, or `fallback` when unset.
std::filesystem::path data_root(const std::filesystem::path& fallback = "data");

struct MnistFiles {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};
/// Looks under <root>/mnist and then <root> for the four standard file names.
MnistFiles locate_mnist(const std::filesystem::path& root);

}  // namespace lrnet
