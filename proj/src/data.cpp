#include <algorithm>
#include <cmath>
#include <fstream>

#include "nrt/data.hpp"

namespace nrt {

void Dataset::validate() const {
  if (images.size() != labels.size()) {
    throw ValidationError("dataset has " + std::to_string(images.size()) + " images but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at index " +
                            std::to_string(i) + " exceeds class count");
    }
    if (images[i].shape() != images[0].shape()) {
      throw ValidationError("image " + std::to_string(i) + " has a different shape");
    }
    for (float v : images[i].data()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw ValidationError("pixel outside [0,1] in image " + std::to_string(i));
      }
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.num_classes = num_classes;
  d.split = split;
  d.images.reserve(indices.size());
  d.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    d.images.push_back(images.at(i));
    d.labels.push_back(labels.at(i));
  }
  return d;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(idx);
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off,
                        const std::string& what) {
  if (b.size() < off + 4) throw IdxTruncatedError(what + ": truncated header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split, std::size_t num_classes) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  const std::string iname = images.filename().string();
  const std::string lname = labels.filename().string();

  if (ib.size() < 4) throw IdxTruncatedError(iname + ": file too short for an IDX header");
  if (lb.size() < 4) throw IdxTruncatedError(lname + ": file too short for an IDX header");
  if (read_be32(ib, 0, iname) != kIdxImagesMagic) {
    throw IdxMagicError(iname + ": not an IDX image file (magic mismatch)");
  }
  if (read_be32(lb, 0, lname) != kIdxLabelsMagic) {
    throw IdxMagicError(lname + ": not an IDX label file (magic mismatch)");
  }
  const std::uint32_t n_img = read_be32(ib, 4, iname);
  const std::uint32_t rows = read_be32(ib, 8, iname);
  const std::uint32_t cols = read_be32(ib, 12, iname);
  const std::uint32_t n_lab = read_be32(lb, 4, lname);
  if (n_img != n_lab) {
    throw IdxCountMismatchError("image count " + std::to_string(n_img) +
                                " does not match label count " + std::to_string(n_lab));
  }
  if (n_img == 0 || rows == 0 || cols == 0) throw IdxTruncatedError(iname + ": empty dataset");
  const std::size_t plane = std::size_t{rows} * cols;
  if (ib.size() < 16 + plane * n_img) throw IdxTruncatedError(iname + ": truncated pixel data");
  if (lb.size() < 8 + std::size_t{n_lab}) throw IdxTruncatedError(lname + ": truncated labels");

  Dataset d;
  d.split = split;
  d.images.reserve(n_img);
  d.labels.reserve(n_img);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n_img; ++i) {
    std::vector<float> px(plane);
    const std::uint8_t* src = ib.data() + 16 + i * plane;
    for (std::size_t j = 0; j < plane; ++j) px[j] = static_cast<float>(src[j]) / 255.0f;
    d.images.emplace_back(Shape{1, rows, cols}, std::move(px));
    d.labels.push_back(lb[8 + i]);
    max_label = std::max<std::size_t>(max_label, lb[8 + i]);
  }
  d.num_classes = num_classes != 0 ? num_classes : std::max<std::size_t>(2, max_label + 1);
  d.validate();
  return d;
}

void write_idx(const Dataset& d, const std::filesystem::path& images,
               const std::filesystem::path& labels) {
  if (d.empty()) throw ValidationError("cannot write an empty dataset");
  const Shape& s = d.image_shape();
  if (s[0] != 1) throw ValidationError("IDX export supports single-channel images only");
  std::ofstream io(images, std::ios::binary | std::ios::trunc);
  std::ofstream lo(labels, std::ios::binary | std::ios::trunc);
  if (!io || !lo) throw IdxError("cannot open IDX output files");
  put_be32(io, kIdxImagesMagic);
  put_be32(io, static_cast<std::uint32_t>(d.size()));
  put_be32(io, static_cast<std::uint32_t>(s[1]));
  put_be32(io, static_cast<std::uint32_t>(s[2]));
  put_be32(lo, kIdxLabelsMagic);
  put_be32(lo, static_cast<std::uint32_t>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (float v : d.images[i].data()) {
      io.put(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
    lo.put(static_cast<char>(d.labels[i]));
  }
}

}  // namespace nrt
