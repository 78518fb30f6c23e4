#include "leafvit/weights_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <zlib.h>

#include "leafvit/error.hpp"
#include "leafvit/model.hpp"

namespace leafvit {

const ArchiveTensor* WeightArchive::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::size_t WeightArchive::total_elements() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.data.size();
  return n;
}

bool operator==(const WeightArchive& a, const WeightArchive& b) {
  if (a.version != b.version || a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto& x = a.tensors[i];
    const auto& y = b.tensors[i];
    if (x.name != y.name || x.shape != y.shape || x.data.size() != y.data.size()) return false;
    if (std::memcmp(x.data.data(), y.data.data(), x.data.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

WeightArchive archive_from_model(const ModelGraph& model) {
  WeightArchive archive;
  for (const auto& p : model.named_tensors()) {
    archive.tensors.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  return archive;
}

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

// ---- encoding -----------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'V', 'W', '1'};
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::size_t offset() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

  std::uint64_t uint(int n, const std::string& field) {
    need(static_cast<std::size_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string text(std::size_t n, const std::string& field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(std::vector<float>& out, std::size_t n, const std::string& field) {
    if (n > (end_ - pos_) / 4) fail(field, "truncated: need " + std::to_string(n) + " f32 values");
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(static_cast<std::uint32_t>(uint(4, field)));
  }
  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw FormatError("MVW1 " + field + " at byte offset " + std::to_string(pos_) + ": " + what);
  }

 private:
  void need(std::size_t n, const std::string& field) const {
    if (end_ - pos_ < n) fail(field, "truncated file");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += len;
  }
  return true;
}

struct Parsed {
  WeightArchive archive;
  std::uint32_t stored_crc = 0;
  std::uint32_t computed_crc = 0;
};

Parsed parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("MVW1 magic at byte offset 0: expected 'MVW1'");
  }
  if (bytes.size() < 16) {
    throw FormatError("MVW1 header at byte offset " + std::to_string(bytes.size()) + ": truncated file (" +
                      std::to_string(bytes.size()) + " bytes, minimum 16)");
  }
  const std::size_t crc_at = bytes.size() - 4;
  Reader r(bytes, crc_at);
  r.seek(4);

  Parsed out;
  out.archive.version = static_cast<std::uint32_t>(r.uint(4, "version"));
  if (out.archive.version != kMvwVersion) {
    r.seek(4);
    r.fail("version", "unsupported version " + std::to_string(out.archive.version));
  }
  const auto count = static_cast<std::uint32_t>(r.uint(4, "tensor_count"));
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string tag = "tensor[" + std::to_string(i) + "].";
    ArchiveTensor t;
    const auto name_len = static_cast<std::size_t>(r.uint(2, tag + "name_len"));
    const std::size_t name_at = r.offset();
    if (name_len == 0) r.fail(tag + "name_len", "empty name");
    t.name = r.text(name_len, tag + "name");
    if (!valid_utf8(t.name)) {
      r.seek(name_at);
      r.fail(tag + "name", "not valid UTF-8");
    }
    if (!seen.insert(t.name).second) {
      r.seek(name_at);
      r.fail(tag + "name", "duplicate tensor name '" + t.name + "'");
    }
    const std::size_t dtype_at = r.offset();
    const auto dtype = static_cast<std::uint8_t>(r.uint(1, tag + "dtype"));
    if (dtype != kDtypeF32) {
      r.seek(dtype_at);
      r.fail(tag + "dtype", "unsupported dtype " + std::to_string(dtype) + " (only 0 = f32)");
    }
    const auto rank = static_cast<std::size_t>(r.uint(1, tag + "rank"));
    std::vector<std::size_t> dims(rank);
    std::size_t numel = 1;
    for (std::size_t d = 0; d < rank; ++d) {
      const std::size_t dim_at = r.offset();
      dims[d] = static_cast<std::size_t>(r.uint(4, tag + "dims"));
      if (dims[d] == 0) {
        r.seek(dim_at);
        r.fail(tag + "dims", "zero extent");
      }
      if (numel > (std::size_t{1} << 40) / dims[d]) {
        r.seek(dim_at);
        r.fail(tag + "dims", "tensor too large");
      }
      numel *= dims[d];
    }
    t.shape = Shape(std::move(dims));
    r.floats(t.data, numel, tag + "data");
    out.archive.tensors.push_back(std::move(t));
  }
  if (r.offset() != crc_at) {
    r.fail("crc", std::to_string(crc_at - r.offset()) + " unexpected bytes before the trailer");
  }
  Reader tail(bytes, bytes.size());
  tail.seek(crc_at);
  out.stored_crc = static_cast<std::uint32_t>(tail.uint(4, "crc"));
  out.computed_crc = crc32_ieee(bytes.subspan(4, crc_at - 4));
  return out;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight archive '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> serialize(const WeightArchive& archive) {
  std::unordered_set<std::string> seen;
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(archive.version);
  if (archive.tensors.size() > UINT32_MAX) throw FormatError("MVW1 save: too many tensors");
  w.u32(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& t : archive.tensors) {
    if (t.name.empty() || t.name.size() > UINT16_MAX) throw FormatError("MVW1 save: bad name length for '" + t.name + "'");
    if (!seen.insert(t.name).second) throw FormatError("MVW1 save: duplicate tensor name '" + t.name + "'");
    if (t.shape.rank() > 255) throw FormatError("MVW1 save: rank too large for '" + t.name + "'");
    if (t.shape.numel() != t.data.size()) throw FormatError("MVW1 save: data size does not match shape for '" + t.name + "'");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(kDtypeF32);
    w.u8(static_cast<std::uint8_t>(t.shape.rank()));
    for (std::size_t d : t.shape.dims()) {
      if (d > UINT32_MAX) throw FormatError("MVW1 save: extent too large for '" + t.name + "'");
      w.u32(static_cast<std::uint32_t>(d));
    }
    for (float v : t.data) w.f32(v);
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc32_ieee(std::span<const std::uint8_t>(buf).subspan(4));
  w.u32(crc);
  return std::move(buf);
}

WeightArchive deserialize(std::span<const std::uint8_t> bytes) {
  Parsed p = parse(bytes);
  if (p.stored_crc != p.computed_crc) {
    std::ostringstream os;
    os << "MVW1 crc at byte offset " << bytes.size() - 4 << ": checksum mismatch (stored 0x" << std::hex
       << std::setw(8) << std::setfill('0') << p.stored_crc << ", computed 0x" << std::setw(8) << p.computed_crc
       << ")";
    throw FormatError(os.str());
  }
  return std::move(p.archive);
}

void save(const WeightArchive& archive, const std::filesystem::path& path) {
  const auto bytes = serialize(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write weight archive '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + path.string() + "'");
}

WeightArchive load(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ArchiveListing read_listing(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  Parsed p;
  try {
    p = parse(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  ArchiveListing listing;
  listing.archive = std::move(p.archive);
  listing.stored_crc = p.stored_crc;
  listing.computed_crc = p.computed_crc;
  listing.file_size = bytes.size();
  return listing;
}

bool is_buffer_name(const std::string& name) {
  auto ends = [&](const std::string& s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends(".running_mean") || ends(".running_var");
}

namespace {

// display width of UTF-8 text: one column per code point
std::size_t columns(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
}

std::string pad_right(const std::string& s, std::size_t width) {
  const std::size_t w = columns(s);
  return w >= width ? s : s + std::string(width - w, ' ');
}

}  // namespace

std::string format_listing(const ArchiveListing& listing) {
  const auto& tensors = listing.archive.tensors;
  std::size_t name_w = 4;
  for (const auto& t : tensors) name_w = std::max(name_w, columns(t.name));
  std::size_t shape_w = 5;
  for (const auto& t : tensors) shape_w = std::max(shape_w, t.shape.str().size());

  std::ostringstream os;
  os << "MVW1 version " << listing.archive.version << ", " << tensors.size() << " tensors, " << listing.file_size
     << " bytes\n";
  os << std::left << std::setw(static_cast<int>(name_w)) << "name" << "  " << std::setw(static_cast<int>(shape_w))
     << "shape" << "  " << std::right << std::setw(10) << "count" << "\n";
  std::size_t params = 0, buffers = 0;
  for (const auto& t : tensors) {
    os << pad_right(t.name, name_w) << "  " << std::left << std::setw(static_cast<int>(shape_w))
       << t.shape.str() << "  " << std::right << std::setw(10) << t.data.size();
    if (is_buffer_name(t.name)) {
      os << "  (buffer)";
      buffers += t.data.size();
    } else {
      params += t.data.size();
    }
    os << "\n";
  }
  os << "total parameters: " << params << "\n";
  os << "total buffer values: " << buffers << "\n";
  os << std::hex << std::setfill('0');
  os << "crc32: stored 0x" << std::setw(8) << listing.stored_crc << ", computed 0x" << std::setw(8)
     << listing.computed_crc << (listing.crc_ok() ? " (ok)" : " (MISMATCH)") << "\n";
  return os.str();
}

// ---- applying to a model --------------------------------------------------------------

ApplyReport apply(ModelGraph& model, const WeightArchive& archive, bool strict) {
  const auto params = model.named_tensors();
  std::unordered_map<std::string, const ArchiveTensor*> by_name;
  for (const auto& t : archive.tensors) by_name.emplace(t.name, &t);

  ApplyReport report;
  std::unordered_set<std::string> model_names;
  for (const auto& p : params) {
    model_names.insert(p.name);
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      report.missing.push_back(p.name);
    } else if (it->second->shape != p.tensor.shape()) {
      report.skipped.push_back(p.name);
    } else {
      report.loaded.push_back(p.name);
    }
  }
  for (const auto& t : archive.tensors) {
    if (!model_names.count(t.name)) report.unexpected.push_back(t.name);
  }

  if (strict && (!report.missing.empty() || !report.skipped.empty() || !report.unexpected.empty())) {
    std::ostringstream os;
    os << "strict weight load failed:";
    for (const auto& n : report.missing) os << "\n  missing from archive: " << n;
    for (const auto& n : report.unexpected) os << "\n  not in model: " << n;
    for (const auto& n : report.skipped) {
      const ArchiveTensor* t = by_name.at(n);
      const auto p = std::find_if(params.begin(), params.end(), [&](const auto& q) { return q.name == n; });
      os << "\n  shape mismatch: " << n << " archive " << t->shape.str() << " vs model " << p->tensor.shape().str();
    }
    throw FormatError(os.str());
  }

  for (auto p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end() || it->second->shape != p.tensor.shape()) continue;
    auto dst = p.tensor.mutable_data();
    std::copy(it->second->data.begin(), it->second->data.end(), dst.begin());
  }
  return report;
}

ModelGraph model_from_archive(const WeightArchive& archive) {
  std::vector<std::pair<std::string, Shape>> names;
  names.reserve(archive.tensors.size());
  for (const auto& t : archive.tensors) names.emplace_back(t.name, t.shape);
  const ArchitectureGuess guess = detect_architecture(names);
  ModelGraph model = build_model(guess.arch, guess.num_classes);
  apply(model, archive, true);
  model.set_mode(Mode::eval);
  return model;
}

}  // namespace leafvit
