#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nrt/tensor.hpp"

namespace nrt {

enum class Split { Train, Test };

/// Labelled images with pixels in [0,1].
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  Split split = Split::Train;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  const Shape& image_shape() const { return images.at(0).shape(); }

  /// Throws ValidationError unless counts match, labels < num_classes and
  /// every pixel lies in [0,1].
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

// IDX -------------------------------------------------------------------------

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IdxMagicError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxCountMismatchError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxTruncatedError : public IdxError {
 public:
  using IdxError::IdxError;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an MNIST-style IDX pair. Bytes map to value/255. num_classes of 0
/// means "max label + 1" (at least 2).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split = Split::Test, std::size_t num_classes = 0);

/// Writes single-channel datasets as an IDX pair (pixels rounded to bytes).
void write_idx(const Dataset& d, const std::filesystem::path& images,
               const std::filesystem::path& labels);

// Synthetic data ----------------------------------------------------------------

/// Digit-like data for offline runs. Every class owns two stroke templates
/// that depend only on (K, shape); `seed` drives per-image jitter
/// (shift/scale/rotation, stroke gain) plus smoothed background noise.
Dataset synthetic_dataset(std::size_t num_classes, std::size_t n_per_class, const Shape& shape,
                          std::uint64_t seed, Split split = Split::Train);

// Triggers ------------------------------------------------------------------------

enum class TriggerKind { Patch, Pattern, Watermark };

std::string to_string(TriggerKind k);
TriggerKind trigger_kind_from_string(const std::string& s);

/// A backdoor trigger: binary mask, intensity and target class.
struct TriggerSpec {
  Tensor mask;  // [C,H,W], entries in {0,1}
  float alpha = 1.0f;
  std::size_t target = 0;
  TriggerKind kind = TriggerKind::Patch;

  std::size_t support_size() const;
  /// Mask projected onto the image plane: true where any channel is set.
  std::vector<bool> plane_support() const;

  nlohmann::json to_json() const;
  static TriggerSpec from_json(const nlohmann::json& j);
};

/// s x s square whose lower-right corner sits two pixels in from the image's
/// lower-right corner.
TriggerSpec make_patch_trigger(std::size_t size, float alpha, std::size_t target,
                               const Shape& image_shape);
/// Four isolated pixels on a small diagonal lattice in the lower-right corner.
TriggerSpec make_pattern_trigger(float alpha, std::size_t target, const Shape& image_shape);
/// Trigger from an explicit mask (pattern or watermark kinds).
TriggerSpec make_mask_trigger(TriggerKind kind, Tensor mask, float alpha, std::size_t target);
/// Patch kinds take a size, other kinds an explicit mask.
TriggerSpec make_trigger(TriggerKind kind, const std::variant<std::size_t, Tensor>& size_or_mask,
                         float alpha, std::size_t target, const Shape& image_shape);

/// Built-in watermark stencil: a dotted "X" spanning the lower-right quadrant.
Tensor default_watermark_mask(const Shape& image_shape);

/// Binary PGM (P5) stencil thresholded at 128, broadcast over `channels`.
Tensor read_pgm_mask(const std::filesystem::path& path, std::size_t channels = 1);
void write_pgm_mask(const Tensor& mask, const std::filesystem::path& path);

/// clip(x + alpha * mask, 0, 1).
Tensor apply_trigger(const Tensor& x, const TriggerSpec& t);

struct PoisonReport {
  double poison_fraction = 0.0;
  std::vector<std::size_t> poisoned_indices;
  TriggerSpec trigger;

  nlohmann::json to_json() const;
};

struct PoisonedDataset {
  Dataset data;
  PoisonReport report;
};

/// Triggers a uniformly random subset of round(fraction * n) items and
/// relabels them to the target class.
PoisonedDataset poison_dataset(const Dataset& d, const TriggerSpec& t, double fraction,
                               std::uint64_t seed);

}  // namespace nrt
