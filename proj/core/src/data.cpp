#include "leafvit/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "leafvit/error.hpp"
#include "leafvit/parallel.hpp"
#include "leafvit/rng.hpp"

namespace leafvit {

std::string to_string(Split split) { return split == Split::train ? "train" : "val"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  throw ConfigError("unknown split '" + text + "' (expected train or val)");
}

std::size_t DatasetIndex::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const DatasetRecord& r) { return r.split == split; }));
}

std::vector<std::size_t> DatasetIndex::class_counts(Split split) const {
  std::vector<std::size_t> counts(labels.size(), 0);
  for (const auto& r : records) {
    if (r.split == split) ++counts.at(r.class_id);
  }
  return counts;
}

std::size_t validation_count(std::size_t n) {
  const std::size_t rounded = (2 * n + 5) / 10;  // floor(0.2n + 0.5) in integers
  return n >= 2 ? std::max<std::size_t>(rounded, 1) : rounded;
}

namespace {

bool is_ppm(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm";
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

DatasetIndex scan_dataset(const fs::path& root, std::uint64_t seed) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IngestionError("dataset root '" + root.string() + "' is not a directory");

  DatasetIndex index;
  index.seed = seed;
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && !name.empty() && name[0] != '.') class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (class_dirs.empty()) throw IngestionError("dataset root '" + root.string() + "' contains no class directories");

  const CounterRng base(seed, 0x5c4e);
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    const std::string label = class_dirs[c].filename().string();
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c])) {
      if (entry.is_regular_file() && is_ppm(entry.path())) files.push_back(entry.path());
    }
    if (files.empty()) throw IngestionError("class '" + label + "' has no .ppm images");
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

    CounterRng rng = base.fork(c);
    rng.shuffle(files);
    const std::size_t n_val = validation_count(files.size());
    const std::size_t n_train = files.size() - n_val;
    for (std::size_t i = 0; i < files.size(); ++i) {
      index.records.push_back({files[i], c, i < n_train ? Split::train : Split::val});
    }
    index.labels.push_back(label);
  }
  return index;
}

// ---- decoding -----------------------------------------------------------------------

Tensor decode_ppm(std::span<const std::uint8_t> bytes, const std::string& source) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what, std::size_t at) -> DecodeError {
    return DecodeError(source + ": " + what + " at byte offset " + std::to_string(at));
  };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* field) -> std::size_t {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > 1'000'000) throw fail(std::string(field) + " too large", start);
      ++pos;
    }
    if (pos == start) throw fail(std::string("expected ") + field, start);
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw fail("bad magic (expected P6)", 0);
  pos = 2;
  const std::size_t width = read_uint("width");
  const std::size_t height = read_uint("height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = read_uint("maxval");
  if (width == 0 || height == 0) throw fail("zero image extent", maxval_at);
  if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval) + " (only 255)", maxval_at);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("expected whitespace after maxval", pos);
  ++pos;

  const std::size_t plane = width * height;
  if (bytes.size() - pos < 3 * plane) {
    throw fail("truncated payload: need " + std::to_string(3 * plane) + " bytes, have " +
                   std::to_string(bytes.size() - pos),
               bytes.size());
  }
  std::vector<float> out(3 * plane);
  const std::uint8_t* px = bytes.data() + pos;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = static_cast<float>(px[3 * i + c]) / 255.0f;
  }
  return Tensor(Shape{3, height, width}, std::move(out));
}

Tensor decode_image(const fs::path& path) {
  const auto bytes = read_file(path);
  return decode_ppm(bytes, path.string());
}

void write_ppm(const fs::path& path, std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != 3 * width * height) throw ContractError("write_ppm: pixel buffer does not match extents");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw IngestionError("short write to '" + path.string() + "'");
}

// ---- preprocessing ------------------------------------------------------------------

namespace {

struct Tap {
  std::size_t lo, hi;
  float frac;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(src);
    t[i] = {lo, std::min(lo + 1, in - 1), static_cast<float>(src - static_cast<double>(lo))};
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw DimensionError("resize_bilinear: expected [C,H,W], got " + image.shape().str());
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);
  const auto src = image.data();
  std::vector<float> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* plane = src.data() + ch * h * w;
    float* dst = out.data() + ch * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const float* r0 = plane + ty[y].lo * w;
      const float* r1 = plane + ty[y].hi * w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& t = tx[x];
        // a + f·(b − a) keeps constant regions exact
        const float top = r0[t.lo] + t.frac * (r0[t.hi] - r0[t.lo]);
        const float bottom = r1[t.lo] + t.frac * (r1[t.hi] - r1[t.lo]);
        dst[y * out_w + x] = top + ty[y].frac * (bottom - top);
      }
    }
  }
  return Tensor(Shape{c, out_h, out_w}, std::move(out));
}

namespace {

Tensor affine_per_channel(const Tensor& image, bool forward) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("normalize: expected [3,H,W], got " + image.shape().str());
  }
  const std::size_t plane = image.dim(1) * image.dim(2);
  std::vector<float> out(image.data().begin(), image.data().end());
  for (std::size_t c = 0; c < 3; ++c) {
    const double m = kImageNetMean[c], s = kImageNetStd[c];
    for (std::size_t i = 0; i < plane; ++i) {
      float& v = out[c * plane + i];
      v = forward ? static_cast<float>((v - m) / s) : static_cast<float>(v * s + m);
    }
  }
  return Tensor(image.shape(), std::move(out));
}

}  // namespace

Tensor normalize(const Tensor& image) { return affine_per_channel(image, true); }
Tensor denormalize(const Tensor& image) { return affine_per_channel(image, false); }

Tensor load_image(const fs::path& path, std::size_t size) {
  Tensor img = decode_image(path);
  if (img.dim(1) != size || img.dim(2) != size) img = resize_bilinear(img, size, size);
  return normalize(img);
}

// ---- batching -----------------------------------------------------------------------

std::vector<std::size_t> split_order(const DatasetIndex& index, Split split, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    if (index.records[i].split == split) order.push_back(i);
  }
  if (split == Split::train) {
    CounterRng rng(seed, 0xba7c0000ULL + epoch);
    rng.shuffle(order);
  }
  return order;
}

BatchStream::BatchStream(const DatasetIndex& index, Split split, std::size_t batch_size, std::uint64_t seed,
                         std::size_t epoch, std::size_t image_size)
    : index_(&index), order_(split_order(index, split, seed, epoch)), batch_size_(batch_size),
      image_size_(image_size) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (image_size == 0) throw ConfigError("image size must be >= 1");
  if (order_.empty()) throw IngestionError("split '" + to_string(split) + "' is empty");
}

std::size_t BatchStream::num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

std::optional<ImageBatch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  const std::size_t per = 3 * image_size_ * image_size_;
  ImageBatch batch;
  batch.records.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                       order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + n));
  cursor_ += n;

  std::vector<float> pixels(n * per);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& rec = index_->records[batch.records[i]];
      Tensor img;
      try {
        img = load_image(rec.path, image_size_);
      } catch (const Error& e) {
        throw IngestionError("failed to load '" + rec.path.string() + "': " + e.what());
      }
      std::copy(img.data().begin(), img.data().end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
  });
  for (std::size_t r : batch.records) batch.class_ids.push_back(index_->records[r].class_id);
  batch.pixels = Tensor(Shape{n, 3, image_size_, image_size_}, std::move(pixels));
  return batch;
}

BatchStream make_batches(const DatasetIndex& index, Split split, std::size_t batch_size, std::uint64_t seed,
                         std::size_t epoch, std::size_t image_size) {
  return BatchStream(index, split, batch_size, seed, epoch, image_size);
}

// ---- labels -------------------------------------------------------------------------

void write_labels(const fs::path& path, const std::vector<std::string>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write label file '" + path.string() + "'");
  for (const auto& l : labels) out << l << '\n';
}

std::vector<std::string> read_labels(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open label file '" + path.string() + "'");
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    labels.push_back(line);
  }
  while (!labels.empty() && labels.back().empty()) labels.pop_back();
  if (labels.empty()) throw LabelError("label file '" + path.string() + "' is empty");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) throw LabelError("label file '" + path.string() + "': empty label on line " +
                                            std::to_string(i + 1));
  }
  return labels;
}

// ---- synthetic fixture ----------------------------------------------------------------

std::vector<std::string> make_color_patch_dataset(const fs::path& root, std::size_t per_class, std::size_t size,
                                                  std::uint64_t seed) {
  if (per_class == 0 || size < 8) throw ConfigError("fixture: need per_class >= 1 and size >= 8");
  const std::vector<std::string> names = {"blue_patch", "green_patch", "red_patch"};
  const std::size_t channel_of[] = {2, 1, 0};
  CounterRng rng(seed, 0xf1c7);
  for (std::size_t c = 0; c < names.size(); ++c) {
    const fs::path dir = root / names[c];
    fs::create_directories(dir);
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<std::uint8_t> rgb(3 * size * size);
      for (auto& v : rgb) v = static_cast<std::uint8_t>(96 + rng.below(64));
      const std::size_t side = size / 4 + rng.below(size / 4 + 1);
      const std::size_t y0 = rng.below(size - side + 1), x0 = rng.below(size - side + 1);
      for (std::size_t y = y0; y < y0 + side; ++y) {
        for (std::size_t x = x0; x < x0 + side; ++x) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            rgb[3 * (y * size + x) + ch] =
                static_cast<std::uint8_t>(ch == channel_of[c] ? 200 + rng.below(56) : rng.below(48));
          }
        }
      }
      char file[32];
      std::snprintf(file, sizeof file, "img_%03zu.ppm", i);
      write_ppm(dir / file, size, size, rgb);
    }
  }
  return names;
}

}  // namespace leafvit
