#include "ccrl/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace ccrl {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape_));
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape_));
  if (shape_numel(shape_) != data_.size())
    throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
}

template <class T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range for shape " + shape_str(shape_));
  return shape_[axis];
}

template <class T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
  return data_[0];
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
}

template <class T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

namespace {

template <class V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw FormatError("truncated tensor blob");
  return v;
}

template <class T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::f32 : DType::f64;
}

}  // namespace

template <class T>
void write_blob(std::ostream& os, const Tensor<T>& t) {
  os.write("CCRT", 4);
  put<std::uint32_t>(os, kBlobVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(os, d);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw IoError("failed writing tensor blob");
}

template <class T>
Tensor<T> read_blob(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CCRT", 4) != 0) throw FormatError("bad tensor blob magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kBlobVersion) throw FormatError("unsupported tensor blob version " + std::to_string(version));
  const auto rank = get<std::uint32_t>(is);
  if (rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = static_cast<std::size_t>(get<std::uint64_t>(is));
    if (d == 0) throw FormatError("zero dimension in tensor blob");
  }
  const auto code = get<std::uint8_t>(is);
  const std::size_t n = shape_numel(shape);
  std::vector<T> values(n);
  if (code == static_cast<std::uint8_t>(DType::f32)) {
    std::vector<float> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float)));
    std::copy(raw.begin(), raw.end(), values.begin());
  } else if (code == static_cast<std::uint8_t>(DType::f64)) {
    std::vector<double> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(double)));
    std::copy(raw.begin(), raw.end(), values.begin());
  } else {
    throw FormatError("unknown tensor dtype code " + std::to_string(code));
  }
  if (!is) throw FormatError("truncated tensor blob payload");
  return Tensor<T>(std::move(shape), std::move(values));
}

template <class T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_blob(os, t);
}

template <class T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_blob<T>(is);
}

template void write_blob(std::ostream&, const Tensor<float>&);
template void write_blob(std::ostream&, const Tensor<double>&);
template Tensor<float> read_blob<float>(std::istream&);
template Tensor<double> read_blob<double>(std::istream&);
template void save_tensor(const std::string&, const Tensor<float>&);
template void save_tensor(const std::string&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const std::string&);
template Tensor<double> load_tensor<double>(const std::string&);

}  // namespace ccrl
