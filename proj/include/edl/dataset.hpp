#pragma once

// On-disk datasets: binary PPM (P6, maxval 255) images plus manifest.csv
// with header "filename,label".

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "edl/io.hpp"
#include "edl/random.hpp"
#include "edl/synthfundus.hpp"

namespace edl {

inline constexpr const char* kManifestName = "manifest.csv";
inline constexpr const char* kManifestHeader = "filename,label";

struct LabeledImage {
  std::string filename;
  Tensor image;  // 3×H×W in [0, 1]
  int label = 0;
};

inline std::string encode_ppm(const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw DimensionError("PPM needs a 3×H×W image");
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(image[ch * plane + i], 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
  return out;
}

inline Tensor decode_ppm(std::string_view bytes, const std::string& name) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  auto number = [&](const char* what) {
    const std::string t = token();
    if (t.empty() || !std::all_of(t.begin(), t.end(), ::isdigit)) {
      throw DatasetError(name + ": bad PPM " + what);
    }
    return static_cast<std::size_t>(std::stoul(t));
  };
  if (token() != "P6") throw DatasetError(name + ": not a binary PPM (P6)");
  const std::size_t w = number("width"), h = number("height"), maxval = number("maxval");
  if (maxval != 255) throw DatasetError(name + ": only maxval 255 is supported");
  if (w == 0 || h == 0) throw DatasetError(name + ": empty image");
  ++pos;  // single whitespace byte before the raster
  const std::size_t plane = w * h;
  if (bytes.size() < pos + 3 * plane) throw DatasetError(name + ": truncated raster");
  Tensor img({3, h, w});
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch)
      img[ch * plane + i] = static_cast<std::uint8_t>(bytes[pos + 3 * i + ch]) / 255.0;
  return img;
}

inline std::string sample_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05zu.ppm", index);
  return buf;
}

inline void write_dataset(std::span<const SyntheticSample> samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::CsvWriter manifest({"filename", "label"});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string name = sample_filename(i);
    io::write_file_atomic(dir / name, encode_ppm(samples[i].image));
    manifest.cell(name).cell(samples[i].label).end_row();
  }
  manifest.save(dir / kManifestName);
}

struct ManifestRow {
  std::string filename;
  int label = 0;
};

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  if (!std::filesystem::exists(path)) {
    if (!std::filesystem::exists(dir) || std::filesystem::is_empty(dir)) {
      throw DatasetError("empty dataset: " + dir.string() + " contains no images");
    }
    throw DatasetError("missing manifest: " + path.string());
  }
  const std::string text = io::read_file(path);
  auto lines = io::split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines[0] != kManifestHeader) {
    throw DatasetError(path.string() + ": header must be exactly \"" + kManifestHeader + "\"");
  }
  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = io::split(lines[i], ',');
    if (cells.size() != 2 || (cells[1] != "0" && cells[1] != "1") || cells[0].empty()) {
      throw DatasetError(path.string() + ": malformed row " + std::to_string(i + 1) + ": '" + lines[i] + "'");
    }
    if (!seen.insert(cells[0]).second) {
      throw DatasetError(path.string() + ": duplicate filename " + cells[0]);
    }
    rows.push_back({cells[0], cells[1] == "1" ? 1 : 0});
  }
  if (rows.empty()) throw DatasetError("empty dataset: " + path.string() + " lists no images");
  return rows;
}

/// Loads every image listed in the manifest; any listed file that is
/// missing or unreadable is an integrity error naming that file.
inline std::vector<LabeledImage> read_dataset(const std::filesystem::path& dir) {
  const auto rows = read_manifest(dir);
  std::vector<LabeledImage> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    const auto path = dir / row.filename;
    if (!std::filesystem::is_regular_file(path)) {
      throw DatasetError("dataset integrity: manifest lists " + row.filename + " but the file is missing");
    }
    out.push_back({row.filename, decode_ppm(io::read_file(path), row.filename), row.label});
    if (out.back().image.shape() != out.front().image.shape()) {
      throw DatasetError("dataset integrity: " + row.filename + " differs in size from " + out.front().filename);
    }
  }
  return out;
}

/// Stacks images into an N×C×H×W batch.
inline Tensor stack_images(std::span<const LabeledImage> items, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("stack_images: no images");
  const Shape& s = items[indices[0]].image.shape();
  Tensor out({indices.size(), s[0], s[1], s[2]});
  const std::size_t per = items[indices[0]].image.size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& img = items[indices[i]].image;
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + i * per);
  }
  return out;
}

struct DatasetSplit {
  std::vector<std::size_t> train, val, test;

  const std::vector<std::size_t>& by_name(std::string_view name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ArgumentError("unknown split '" + std::string(name) + "' (expected train, val or test)");
  }
};

/// Stratified split: within each class a seeded shuffle, then
/// round(count*val_fraction) to val, round(count*test_fraction) to test,
/// the rest to train. Index lists come back sorted.
inline DatasetSplit split_dataset(std::span<const int> labels, double val_fraction, double test_fraction,
                                  std::uint64_t seed) {
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0) {
    throw ArgumentError("split fractions must be non-negative and sum to less than 1");
  }
  DatasetSplit split;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    std::mt19937_64 rng(derive_seed({seed, static_cast<std::uint64_t>(cls), 0x5b11}));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(idx.size() * val_fraction));
    const auto n_test = static_cast<std::size_t>(std::llround(idx.size() * test_fraction));
    split.val.insert(split.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.test.insert(split.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val),
                      idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace edl
