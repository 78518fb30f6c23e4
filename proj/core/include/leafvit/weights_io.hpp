#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "leafvit/shape.hpp"

namespace leafvit {

class ModelGraph;

// MVW1 layout, every integer little-endian:
//   "MVW1" | u32 version | u32 count
//   count × { u16 name_len | name | u8 dtype (0 = f32) | u8 rank | rank × u32 dim | f32 values }
//   u32 CRC-32 (IEEE) over everything after the magic

inline constexpr std::uint32_t kMvwVersion = 1;

struct ArchiveTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct WeightArchive {
  std::uint32_t version = kMvwVersion;
  std::vector<ArchiveTensor> tensors;

  [[nodiscard]] const ArchiveTensor* find(const std::string& name) const;
  [[nodiscard]] std::size_t total_elements() const;
  friend bool operator==(const WeightArchive&, const WeightArchive&);
};

/// Every weight and buffer of `model`, in its layer order.
WeightArchive archive_from_model(const ModelGraph& model);

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize(const WeightArchive& archive);
/// Throws FormatError naming the failing field and its byte offset.
WeightArchive deserialize(std::span<const std::uint8_t> bytes);

void save(const WeightArchive& archive, const std::filesystem::path& path);
WeightArchive load(const std::filesystem::path& path);

struct ArchiveListing {
  WeightArchive archive;
  std::uint32_t stored_crc = 0;
  std::uint32_t computed_crc = 0;
  std::uint64_t file_size = 0;
  [[nodiscard]] bool crc_ok() const { return stored_crc == computed_crc; }
};

/// Parses structure without enforcing the checksum so a listing can still
/// report a mismatch.
ArchiveListing read_listing(const std::filesystem::path& path);
/// Per-tensor table, totals and CRC status.
std::string format_listing(const ArchiveListing& listing);

/// True for tensors that are persisted state rather than trained weights.
bool is_buffer_name(const std::string& name);

struct ApplyReport {
  std::vector<std::string> loaded;
  std::vector<std::string> skipped;     ///< present in both, shape differs; model keeps its own init
  std::vector<std::string> missing;     ///< in the model, absent from the archive
  std::vector<std::string> unexpected;  ///< in the archive, absent from the model
};

/// Strict: any mismatch throws FormatError listing the differences and
/// nothing is copied. Lenient: copies every tensor whose name and shape
/// match and reports the rest.
ApplyReport apply(ModelGraph& model, const WeightArchive& archive, bool strict);

/// Rebuilds the architecture named by the archive's tensors, loads it
/// strictly and switches to eval mode.
ModelGraph model_from_archive(const WeightArchive& archive);

}  // namespace leafvit
