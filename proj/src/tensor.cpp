#include "utilgate/tensor.hpp"

#include "utilgate/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace utilgate {

namespace {

constexpr std::array<char, 4> kMagic{'U', 'T', 'C', 'T'};
constexpr std::uint8_t kVersion = 0x01;

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw ShapeError("tensor rank must be between 1 and 4, got " + std::to_string(shape.size()));
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be >= 1");
    if (d > 0xFFFFFFFFull) throw ShapeError("tensor dimension exceeds u32 range");
  }
}

void check_finite(std::span<const float> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw FormatError("non-finite float value at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
void check_count(const Shape& shape, const std::vector<T>& data) {
  check_shape(shape);
  if (element_count(shape) != data.size()) {
    throw ShapeError("shape describes " + std::to_string(element_count(shape)) +
                     " elements but buffer holds " + std::to_string(data.size()));
  }
}

void put_u32(std::uint8_t* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void put_u64(std::uint8_t* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32(const std::uint8_t* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

} // namespace

const char* dtype_name(DType dtype) {
  switch (dtype) {
  case DType::float32: return "float32";
  case DType::int32: return "int32";
  case DType::uint8: return "uint8";
  }
  return "unknown";
}

std::size_t dtype_size(DType dtype) { return dtype == DType::uint8 ? 1 : 4; }

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)) {
  check_count(shape_, data);
  check_finite(data);
  data_ = std::move(data);
}

Tensor::Tensor(Shape shape, std::vector<std::int32_t> data) : shape_(std::move(shape)) {
  check_count(shape_, data);
  data_ = std::move(data);
}

Tensor::Tensor(Shape shape, std::vector<std::uint8_t> data) : shape_(std::move(shape)) {
  check_count(shape_, data);
  data_ = std::move(data);
}

Tensor Tensor::zeros(DType dtype, Shape shape) {
  check_shape(shape);
  const auto n = element_count(shape);
  switch (dtype) {
  case DType::float32: return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
  case DType::int32: return Tensor(std::move(shape), std::vector<std::int32_t>(n, 0));
  case DType::uint8: return Tensor(std::move(shape), std::vector<std::uint8_t>(n, 0));
  }
  throw InvalidArgument("unknown dtype");
}

DType Tensor::dtype() const noexcept {
  switch (data_.index()) {
  case 0: return DType::float32;
  case 1: return DType::int32;
  default: return DType::uint8;
  }
}

std::size_t Tensor::size() const noexcept { return element_count(shape_); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range");
  return shape_[axis];
}

std::span<const float> Tensor::floats() const {
  if (const auto* v = std::get_if<std::vector<float>>(&data_)) return *v;
  throw ShapeError(std::string("expected float32 tensor, got ") + dtype_name(dtype()));
}

std::span<float> Tensor::floats() {
  if (auto* v = std::get_if<std::vector<float>>(&data_)) return *v;
  throw ShapeError(std::string("expected float32 tensor, got ") + dtype_name(dtype()));
}

std::span<const std::int32_t> Tensor::ints() const {
  if (const auto* v = std::get_if<std::vector<std::int32_t>>(&data_)) return *v;
  throw ShapeError(std::string("expected int32 tensor, got ") + dtype_name(dtype()));
}

std::span<std::int32_t> Tensor::ints() {
  if (auto* v = std::get_if<std::vector<std::int32_t>>(&data_)) return *v;
  throw ShapeError(std::string("expected int32 tensor, got ") + dtype_name(dtype()));
}

std::span<const std::uint8_t> Tensor::bytes() const {
  if (const auto* v = std::get_if<std::vector<std::uint8_t>>(&data_)) return *v;
  throw ShapeError(std::string("expected uint8 tensor, got ") + dtype_name(dtype()));
}

std::span<std::uint8_t> Tensor::bytes() {
  if (auto* v = std::get_if<std::vector<std::uint8_t>>(&data_)) return *v;
  throw ShapeError(std::string("expected uint8 tensor, got ") + dtype_name(dtype()));
}

double Tensor::value(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); }, data_);
}

bool Tensor::operator==(const Tensor& other) const {
  if (shape_ != other.shape_ || data_.index() != other.data_.index()) return false;
  return std::visit(
      [&other](const auto& lhs) {
        using V = std::decay_t<decltype(lhs)>;
        const auto& rhs = std::get<V>(other.data_);
        return lhs.size() == rhs.size() &&
               (lhs.empty() ||
                std::memcmp(lhs.data(), rhs.data(), lhs.size() * sizeof(typename V::value_type)) == 0);
      },
      data_);
}

std::size_t write_tensor(const Tensor& tensor, std::ostream& sink) {
  std::array<std::uint8_t, kUtctHeaderSize> header{};
  std::memcpy(header.data(), kMagic.data(), 4);
  header[4] = kVersion;
  header[5] = static_cast<std::uint8_t>(tensor.dtype());
  header[6] = static_cast<std::uint8_t>(tensor.rank());
  header[7] = 0;
  for (std::size_t axis = 0; axis < kMaxRank; ++axis) {
    const auto d = axis < tensor.rank() ? tensor.shape()[axis] : 1;
    put_u32(header.data() + 8 + 4 * axis, static_cast<std::uint32_t>(d));
  }
  const std::uint64_t payload = tensor.size() * dtype_size(tensor.dtype());
  put_u64(header.data() + 24, payload);

  std::vector<std::uint8_t> body(payload);
  switch (tensor.dtype()) {
  case DType::float32: {
    auto v = tensor.floats();
    for (std::size_t i = 0; i < v.size(); ++i) put_u32(body.data() + 4 * i, std::bit_cast<std::uint32_t>(v[i]));
    break;
  }
  case DType::int32: {
    auto v = tensor.ints();
    for (std::size_t i = 0; i < v.size(); ++i) put_u32(body.data() + 4 * i, static_cast<std::uint32_t>(v[i]));
    break;
  }
  case DType::uint8: {
    auto v = tensor.bytes();
    std::copy(v.begin(), v.end(), body.begin());
    break;
  }
  }

  sink.write(reinterpret_cast<const char*>(header.data()), header.size());
  sink.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!sink) throw FormatError("failed writing UTCT tensor");
  return header.size() + body.size();
}

Tensor read_tensor(std::istream& source) {
  std::array<std::uint8_t, kUtctHeaderSize> header{};
  source.read(reinterpret_cast<char*>(header.data()), header.size());
  if (source.gcount() != static_cast<std::streamsize>(header.size())) {
    throw FormatError("truncated UTCT header");
  }
  if (std::memcmp(header.data(), kMagic.data(), 4) != 0) throw FormatError("bad magic, expected UTCT");
  if (header[4] != kVersion) throw FormatError("unsupported UTCT version " + std::to_string(header[4]));
  const auto code = header[5];
  if (code < 1 || code > 3) throw FormatError("unknown dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const std::size_t rank = header[6];
  if (rank < 1 || rank > kMaxRank) throw FormatError("invalid rank " + std::to_string(rank));
  if (header[7] != 0) throw FormatError("reserved header byte must be zero");

  Shape shape;
  for (std::size_t axis = 0; axis < kMaxRank; ++axis) {
    const auto d = get_u32(header.data() + 8 + 4 * axis);
    if (axis < rank) {
      if (d == 0) throw FormatError("zero-sized dimension in header");
      shape.push_back(d);
    } else if (d != 1) {
      throw FormatError("unused trailing dimension must be 1");
    }
  }
  const auto payload = get_u64(header.data() + 24);
  const auto n = element_count(shape);
  if (payload != n * dtype_size(dtype)) {
    throw FormatError("payload byte count " + std::to_string(payload) + " inconsistent with shape (" +
                      std::to_string(n * dtype_size(dtype)) + " expected)");
  }

  std::vector<std::uint8_t> body(payload);
  source.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(payload));
  if (static_cast<std::uint64_t>(source.gcount()) != payload) {
    throw FormatError("truncated payload: expected " + std::to_string(payload) + " bytes, got " +
                      std::to_string(source.gcount()));
  }

  switch (dtype) {
  case DType::float32: {
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(get_u32(body.data() + 4 * i));
    return Tensor(std::move(shape), std::move(v));
  }
  case DType::int32: {
    std::vector<std::int32_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int32_t>(get_u32(body.data() + 4 * i));
    return Tensor(std::move(shape), std::move(v));
  }
  case DType::uint8: return Tensor(std::move(shape), std::move(body));
  }
  throw FormatError("unreachable dtype");
}

void save_tensor(const Tensor& tensor, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(tensor, out);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return read_tensor(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

LogitsBatch::LogitsBatch(Tensor tensor, Layout layout) : tensor_(std::move(tensor)), layout_(layout) {
  if (tensor_.dtype() != DType::float32) throw ShapeError("logits must be float32");
  if (layout_ == Layout::classification) {
    if (tensor_.rank() != 2) throw ShapeError("classification logits must be rank 2 [N,K]");
    classes_ = tensor_.dim(1);
    positions_ = tensor_.dim(0);
  } else {
    if (tensor_.rank() != 3) throw ShapeError("segmentation logits must be rank 3 [K,H,W]");
    classes_ = tensor_.dim(0);
    positions_ = tensor_.dim(1) * tensor_.dim(2);
  }
  if (classes_ < 2) throw ShapeError("logits need at least 2 classes");
}

LogitsBatch LogitsBatch::infer(Tensor tensor) {
  switch (tensor.rank()) {
  case 2: return LogitsBatch(std::move(tensor), Layout::classification);
  case 3: return LogitsBatch(std::move(tensor), Layout::segmentation);
  default: throw ShapeError("logits must be rank 2 [N,K] or rank 3 [K,H,W]");
  }
}

Shape LogitsBatch::label_shape() const {
  if (layout_ == Layout::classification) return {tensor_.dim(0)};
  return {tensor_.dim(1), tensor_.dim(2)};
}

LabelBatch::LabelBatch(Tensor tensor) : tensor_(std::move(tensor)) {
  if (tensor_.dtype() != DType::int32) throw ShapeError("labels must be int32");
}

void LabelBatch::validate(std::size_t class_count, bool allow_ignore) const {
  auto v = values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto y = v[i];
    if (y >= 0 && static_cast<std::size_t>(y) < class_count) continue;
    if (allow_ignore && y == kIgnoreLabel) continue;
    throw InvalidArgument("label " + std::to_string(y) + " at flat index " + std::to_string(i) +
                          " outside [0," + std::to_string(class_count) + ")");
  }
}

void require_compatible(const LogitsBatch& logits, const LabelBatch& labels) {
  if (labels.tensor().shape() != logits.label_shape()) {
    throw ShapeError("label shape does not match logits layout");
  }
  labels.validate(logits.class_count(), logits.layout() == Layout::segmentation);
}

std::size_t argmax_at(const LogitsBatch& logits, std::size_t position) {
  std::size_t best = 0;
  float best_value = logits.logit(position, 0);
  for (std::size_t k = 1; k < logits.class_count(); ++k) {
    const float v = logits.logit(position, k);
    if (v > best_value) {
      best_value = v;
      best = k;
    }
  }
  return best;
}

LabelBatch argmax_classes(const LogitsBatch& logits) {
  std::vector<std::int32_t> out(logits.positions());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = static_cast<std::int32_t>(argmax_at(logits, p));
  return LabelBatch(Tensor(logits.label_shape(), std::move(out)));
}

LogitsBatch softmax(const LogitsBatch& logits) {
  std::vector<float> out(logits.tensor().size());
  const auto K = logits.class_count();
  for (std::size_t p = 0; p < logits.positions(); ++p) {
    double peak = logits.logit(p, 0);
    for (std::size_t k = 1; k < K; ++k) peak = std::max(peak, static_cast<double>(logits.logit(p, k)));
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += std::exp(logits.logit(p, k) - peak);
    for (std::size_t k = 0; k < K; ++k) {
      out[logits.index(p, k)] = static_cast<float>(std::exp(logits.logit(p, k) - peak) / total);
    }
  }
  return LogitsBatch(Tensor(logits.tensor().shape(), std::move(out)), logits.layout());
}

} // namespace utilgate
