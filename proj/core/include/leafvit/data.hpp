#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leafvit/tensor.hpp"

namespace leafvit {

namespace fs = std::filesystem;

enum class Split { train, val };

std::string to_string(Split split);
/// "train" or "val"; anything else is a ConfigError.
Split parse_split(const std::string& text);

struct DatasetRecord {
  fs::path path;
  std::size_t class_id = 0;
  Split split = Split::train;
};

struct DatasetIndex {
  std::vector<std::string> labels;
  std::vector<DatasetRecord> records;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t count(Split split) const;
  /// Per-class record counts for one split, indexed by class id.
  [[nodiscard]] std::vector<std::size_t> class_counts(Split split) const;
};

/// Validation share for a class of n images: round-half-up(0.2·n), raised to
/// 1 when n >= 2 so every such class lands in both splits.
std::size_t validation_count(std::size_t n);

/// Indexes root/<class>/<image>.ppm. Labels are the subdirectory names in
/// byte order; each class is shuffled with its own seeded stream and its
/// last validation_count(n) images go to val.
DatasetIndex scan_dataset(const fs::path& root, std::uint64_t seed);

/// Binary PPM (P6, maxval 255) -> [3,H,W] in [0,1].
Tensor decode_ppm(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");
Tensor decode_image(const fs::path& path);

void write_ppm(const fs::path& path, std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb);

/// Bilinear resize with half-pixel centres (align_corners = false).
Tensor resize_bilinear(const Tensor& image, std::size_t out_h = 224, std::size_t out_w = 224);

inline constexpr std::array<double, 3> kImageNetMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd = {0.229, 0.224, 0.225};

Tensor normalize(const Tensor& image);
Tensor denormalize(const Tensor& image);

/// decode -> resize to size×size -> normalize.
Tensor load_image(const fs::path& path, std::size_t size = 224);

struct ImageBatch {
  Tensor pixels;                       ///< [B,3,S,S], normalized
  std::vector<std::size_t> class_ids;
  std::vector<std::size_t> records;    ///< positions in DatasetIndex::records
};

/// Record positions of `split` in batch order: index order for val, a
/// reshuffle keyed by (seed, epoch) for train.
std::vector<std::size_t> split_order(const DatasetIndex& index, Split split, std::uint64_t seed, std::size_t epoch);

/// Lazily decoded batches over one split; the last batch may be short.
class BatchStream {
 public:
  BatchStream(const DatasetIndex& index, Split split, std::size_t batch_size, std::uint64_t seed, std::size_t epoch,
              std::size_t image_size = 224);

  [[nodiscard]] std::size_t num_batches() const;
  [[nodiscard]] std::size_t num_items() const { return order_.size(); }
  /// Next batch, or nullopt at the end. Decode failures throw with the path.
  std::optional<ImageBatch> next();

 private:
  const DatasetIndex* index_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t image_size_;
  std::size_t cursor_ = 0;
};

BatchStream make_batches(const DatasetIndex& index, Split split, std::size_t batch_size, std::uint64_t seed,
                         std::size_t epoch, std::size_t image_size = 224);

/// One label per line, line order = class id.
void write_labels(const fs::path& path, const std::vector<std::string>& labels);
std::vector<std::string> read_labels(const fs::path& path);

/// Synthetic three-class dataset: a solid red, green or blue square of random
/// size and position on a mid-grey noise background, `per_class` images per
/// class at size×size. Returns the class names in label order.
std::vector<std::string> make_color_patch_dataset(const fs::path& root, std::size_t per_class = 64,
                                                  std::size_t size = 224, std::uint64_t seed = 0);

}  // namespace leafvit
