#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <variant>
#include <vector>

namespace utilgate {

enum class DType : std::uint8_t { float32 = 1, int32 = 2, uint8 = 3 };

const char* dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 4;
inline constexpr std::int32_t kIgnoreLabel = 255;

/// Dense row-major array of float32, int32 or uint8 with rank 1 to 4.
///
/// Construction validates the shape against the buffer length and rejects
/// NaN/Inf in float payloads. Equality is bit-exact over dtype, shape and
/// payload bytes, so 0.0f and -0.0f compare unequal.
class Tensor {
public:
  Tensor(Shape shape, std::vector<float> data);
  Tensor(Shape shape, std::vector<std::int32_t> data);
  Tensor(Shape shape, std::vector<std::uint8_t> data);

  static Tensor zeros(DType dtype, Shape shape);

  DType dtype() const noexcept;
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept;
  std::size_t dim(std::size_t axis) const;

  std::span<const float> floats() const;
  std::span<float> floats();
  std::span<const std::int32_t> ints() const;
  std::span<std::int32_t> ints();
  std::span<const std::uint8_t> bytes() const;
  std::span<std::uint8_t> bytes();

  // Element as double regardless of dtype.
  double value(std::size_t flat_index) const;

  bool operator==(const Tensor& other) const;

private:
  Shape shape_;
  std::variant<std::vector<float>, std::vector<std::int32_t>, std::vector<std::uint8_t>> data_;
};

std::size_t element_count(const Shape& shape);

// UTCT wire format: 32-byte header followed by a little-endian row-major payload.
inline constexpr std::size_t kUtctHeaderSize = 32;

std::size_t write_tensor(const Tensor& tensor, std::ostream& sink);
Tensor read_tensor(std::istream& source);

void save_tensor(const Tensor& tensor, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

enum class Layout { classification, segmentation };

/// Logits as [N,K] (classification) or [K,H,W] (segmentation), K >= 2.
///
/// A "position" is one sample (classification) or one pixel (segmentation);
/// each position owns K logits, addressed through index().
class LogitsBatch {
public:
  LogitsBatch(Tensor tensor, Layout layout);

  // rank 2 -> classification, rank 3 -> segmentation
  static LogitsBatch infer(Tensor tensor);

  const Tensor& tensor() const noexcept { return tensor_; }
  Tensor& tensor() noexcept { return tensor_; }
  Layout layout() const noexcept { return layout_; }
  std::size_t class_count() const noexcept { return classes_; }
  std::size_t positions() const noexcept { return positions_; }

  // Flat index of the logit for class k at position p.
  std::size_t index(std::size_t position, std::size_t k) const noexcept {
    return layout_ == Layout::classification ? position * classes_ + k : k * positions_ + position;
  }
  float logit(std::size_t position, std::size_t k) const noexcept {
    return tensor_.floats()[index(position, k)];
  }

  // Shape of the matching label tensor: [N] or [H,W].
  Shape label_shape() const;

  bool operator==(const LogitsBatch& other) const = default;

private:
  Tensor tensor_;
  Layout layout_;
  std::size_t classes_ = 0;
  std::size_t positions_ = 0;
};

/// int32 class labels laid out like the positions of a LogitsBatch.
class LabelBatch {
public:
  explicit LabelBatch(Tensor tensor);

  const Tensor& tensor() const noexcept { return tensor_; }
  std::span<const std::int32_t> values() const { return tensor_.ints(); }
  std::size_t size() const noexcept { return tensor_.size(); }

  // Throws unless every value is in [0, K) or, when allow_ignore, equals 255.
  void validate(std::size_t class_count, bool allow_ignore) const;

  bool operator==(const LabelBatch& other) const = default;

private:
  Tensor tensor_;
};

void require_compatible(const LogitsBatch& logits, const LabelBatch& labels);

/// Index of the largest logit per position, lowest class index on ties.
LabelBatch argmax_classes(const LogitsBatch& logits);

/// Class with the largest value among the K logits at one position.
std::size_t argmax_at(const LogitsBatch& logits, std::size_t position);

/// Numerically stable softmax over the class axis.
LogitsBatch softmax(const LogitsBatch& logits);

} // namespace utilgate
