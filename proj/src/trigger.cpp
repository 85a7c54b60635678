#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nrt/data.hpp"
#include "nrt/rng.hpp"

namespace nrt {

std::string to_string(TriggerKind k) {
  switch (k) {
    case TriggerKind::Patch: return "patch";
    case TriggerKind::Pattern: return "pattern";
    case TriggerKind::Watermark: return "watermark";
  }
  return "?";
}

TriggerKind trigger_kind_from_string(const std::string& s) {
  if (s == "patch") return TriggerKind::Patch;
  if (s == "pattern") return TriggerKind::Pattern;
  if (s == "watermark") return TriggerKind::Watermark;
  throw ValidationError("unknown trigger kind '" + s + "' (expected patch, pattern or watermark)");
}

std::size_t TriggerSpec::support_size() const {
  return static_cast<std::size_t>(std::count(mask.data().begin(), mask.data().end(), 1.0f));
}

std::vector<bool> TriggerSpec::plane_support() const {
  const std::size_t c = mask.dim(0), plane = mask.dim(1) * mask.dim(2);
  std::vector<bool> out(plane, false);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < plane; ++j) {
      if (mask[ch * plane + j] != 0.0f) out[j] = true;
    }
  }
  return out;
}

nlohmann::json TriggerSpec::to_json() const {
  nlohmann::json positions = nlohmann::json::array();
  const std::size_t h = mask.dim(1), w = mask.dim(2);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0f) positions.push_back({i / (h * w), (i / w) % h, i % w});
  }
  return {{"kind", to_string(kind)},
          {"alpha", alpha},
          {"target_class", target},
          {"mask_shape", mask.shape()},
          {"mask_positions", positions}};
}

TriggerSpec TriggerSpec::from_json(const nlohmann::json& j) {
  TriggerSpec t;
  t.kind = trigger_kind_from_string(j.at("kind").get<std::string>());
  t.alpha = j.at("alpha").get<float>();
  t.target = j.at("target_class").get<std::size_t>();
  t.mask = Tensor(j.at("mask_shape").get<Shape>());
  for (const auto& p : j.at("mask_positions")) {
    t.mask.at(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>(),
              p.at(2).get<std::size_t>()) = 1.0f;
  }
  return t;
}

namespace {

void check_image_shape(const Shape& s) {
  if (s.size() != 3) throw ValidationError("trigger image shape must be [C,H,W]");
}

void check_binary(const Tensor& mask) {
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) throw ValidationError("trigger mask must be strictly binary");
  }
}

void check_alpha(float alpha) {
  if (!(alpha >= 0.0f) || !std::isfinite(alpha)) {
    throw ValidationError("trigger intensity must be finite and >= 0");
  }
}

}  // namespace

TriggerSpec make_patch_trigger(std::size_t size, float alpha, std::size_t target,
                               const Shape& image_shape) {
  check_image_shape(image_shape);
  check_alpha(alpha);
  const std::size_t h = image_shape[1], w = image_shape[2];
  if (size < 1 || size + 2 > h || size + 2 > w) {
    throw ValidationError("patch of size " + std::to_string(size) + " does not fit image " +
                          shape_string(image_shape) + " at offset (2,2) from the corner");
  }
  TriggerSpec t;
  t.kind = TriggerKind::Patch;
  t.alpha = alpha;
  t.target = target;
  t.mask = Tensor(image_shape);
  const std::size_t y1 = h - 3, x1 = w - 3;  // inclusive lower-right corner of the patch
  for (std::size_t c = 0; c < image_shape[0]; ++c) {
    for (std::size_t y = y1 + 1 - size; y <= y1; ++y) {
      for (std::size_t x = x1 + 1 - size; x <= x1; ++x) t.mask.at(c, y, x) = 1.0f;
    }
  }
  return t;
}

TriggerSpec make_pattern_trigger(float alpha, std::size_t target, const Shape& image_shape) {
  check_image_shape(image_shape);
  const std::size_t h = image_shape[1], w = image_shape[2];
  if (h < 6 || w < 6) throw ValidationError("image too small for the pattern trigger");
  // Offsets (dy, dx) back from the anchor two pixels in from the corner.
  constexpr std::size_t kOffsets[4][2] = {{0, 0}, {2, 0}, {0, 2}, {1, 1}};
  Tensor mask(image_shape);
  for (std::size_t c = 0; c < image_shape[0]; ++c) {
    for (const auto& o : kOffsets) mask.at(c, h - 3 - o[0], w - 3 - o[1]) = 1.0f;
  }
  return make_mask_trigger(TriggerKind::Pattern, std::move(mask), alpha, target);
}

TriggerSpec make_mask_trigger(TriggerKind kind, Tensor mask, float alpha, std::size_t target) {
  check_image_shape(mask.shape());
  check_binary(mask);
  check_alpha(alpha);
  TriggerSpec t;
  t.kind = kind;
  t.alpha = alpha;
  t.target = target;
  t.mask = std::move(mask);
  if (t.support_size() == 0) throw ValidationError("trigger mask is empty");
  return t;
}

TriggerSpec make_trigger(TriggerKind kind, const std::variant<std::size_t, Tensor>& size_or_mask,
                         float alpha, std::size_t target, const Shape& image_shape) {
  if (kind == TriggerKind::Patch) {
    if (!std::holds_alternative<std::size_t>(size_or_mask)) {
      throw ValidationError("patch triggers take a size");
    }
    return make_patch_trigger(std::get<std::size_t>(size_or_mask), alpha, target, image_shape);
  }
  if (!std::holds_alternative<Tensor>(size_or_mask)) {
    if (kind == TriggerKind::Pattern) return make_pattern_trigger(alpha, target, image_shape);
    return make_mask_trigger(kind, default_watermark_mask(image_shape), alpha, target);
  }
  const Tensor& mask = std::get<Tensor>(size_or_mask);
  if (mask.shape() != image_shape) {
    throw ValidationError("trigger mask shape " + shape_string(mask.shape()) +
                          " does not match image " + shape_string(image_shape));
  }
  return make_mask_trigger(kind, mask, alpha, target);
}

Tensor default_watermark_mask(const Shape& image_shape) {
  check_image_shape(image_shape);
  const std::size_t h = image_shape[1], w = image_shape[2];
  Tensor mask(image_shape);
  const std::size_t span = std::min(h, w) / 2;
  const std::size_t y0 = h - 2 - span, x0 = w - 2 - span;
  for (std::size_t c = 0; c < image_shape[0]; ++c) {
    for (std::size_t i = 0; i < span; i += 2) {
      mask.at(c, y0 + i, x0 + i) = 1.0f;
      mask.at(c, y0 + i, x0 + span - 1 - i) = 1.0f;
    }
  }
  return mask;
}

Tensor read_pgm_mask(const std::filesystem::path& path, std::size_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open stencil '" + path.string() + "'");
  auto token = [&in]() {
    std::string tok;
    while (in >> std::ws && in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
    }
    in >> tok;
    return tok;
  };
  if (token() != "P5") throw ValidationError("stencil '" + path.string() + "' is not a P5 PGM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ValidationError("malformed PGM header in '" + path.string() + "'");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw ValidationError("unsupported PGM geometry in '" + path.string() + "'");
  }
  in.get();  // single whitespace byte before the raster
  std::vector<char> raster(w * h);
  in.read(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (in.gcount() != static_cast<std::streamsize>(raster.size())) {
    throw ValidationError("truncated PGM raster in '" + path.string() + "'");
  }
  Tensor mask({channels, h, w});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t j = 0; j < w * h; ++j) {
      mask[c * w * h + j] = static_cast<unsigned char>(raster[j]) >= 128 ? 1.0f : 0.0f;
    }
  }
  return mask;
}

void write_pgm_mask(const Tensor& mask, const std::filesystem::path& path) {
  const std::size_t h = mask.dim(1), w = mask.dim(2);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (std::size_t j = 0; j < h * w; ++j) out.put(mask[j] != 0.0f ? static_cast<char>(255) : 0);
}

Tensor apply_trigger(const Tensor& x, const TriggerSpec& t) {
  if (x.shape() != t.mask.shape()) {
    throw DimensionError("trigger mask " + shape_string(t.mask.shape()) + " vs image " +
                         shape_string(x.shape()));
  }
  Tensor out(x.shape(), x.values());
  auto o = out.data();
  const auto m = t.mask.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = std::clamp(o[i] + t.alpha * m[i], 0.0f, 1.0f);
  }
  return out;
}

nlohmann::json PoisonReport::to_json() const {
  return {{"poison_fraction", poison_fraction},
          {"poisoned_count", poisoned_indices.size()},
          {"poisoned_indices", poisoned_indices},
          {"trigger", trigger.to_json()}};
}

PoisonedDataset poison_dataset(const Dataset& d, const TriggerSpec& t, double fraction,
                               std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("poison fraction must lie in (0, 1]");
  }
  if (d.empty()) throw ValidationError("cannot poison an empty dataset");
  if (t.target >= d.num_classes) {
    throw ValidationError("target class " + std::to_string(t.target) + " exceeds class count " +
                          std::to_string(d.num_classes));
  }
  if (d.split != Split::Train) throw ValidationError("only training splits are poisoned");
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(d.size())));
  if (count == 0) {
    throw ValidationError("poison fraction " + std::to_string(fraction) +
                          " rounds to zero poisoned items");
  }
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0x9015011);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  std::sort(order.begin(), order.end());

  PoisonedDataset out{d, {fraction, order, t}};
  for (std::size_t i : order) {
    out.data.images[i] = apply_trigger(d.images[i], t);
    out.data.labels[i] = t.target;
  }
  return out;
}

}  // namespace nrt
