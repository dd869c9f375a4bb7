#include "ccrl/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include "ccrl/errors.hpp"

namespace ccrl {

namespace {

constexpr char kMagic[4] = {'C', 'C', 'R', 'L'};
constexpr std::uint32_t kVersion = 1;

template <class U>
void put_le(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(static_cast<std::uint64_t>(v) >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof b);
}

template <class U>
U get_le(std::istream& is, const std::string& path) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof b)) throw FormatError(path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<U>(v);
}

}  // namespace

template <class T>
void Checkpoint::put(const std::string& name, const Tensor<T>& t) {
  if (name.empty() || name.size() > 0xFFFF) throw FormatError("checkpoint record name length out of range");
  std::ostringstream os;
  write_blob(os, t);
  if (!blobs_.contains(name)) order_.push_back(name);
  blobs_[name] = std::move(os).str();
}

template <class T>
Tensor<T> Checkpoint::get(const std::string& name) const {
  const auto it = blobs_.find(name);
  if (it == blobs_.end()) throw FormatError("checkpoint has no record '" + name + "'");
  std::istringstream is(it->second);
  return read_blob<T>(is);
}

double Checkpoint::get_scalar(const std::string& name) const {
  const auto t = get<double>(name);
  if (t.size() != 1) throw FormatError("checkpoint record '" + name + "' is not a scalar");
  return t[0];
}

void Checkpoint::save(const std::filesystem::path& path) const {
  // Write-then-rename so an interrupted save never leaves a torn file.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write " + tmp);
    os.write(kMagic, 4);
    put_le<std::uint32_t>(os, kVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(order_.size()));
    for (const auto& name : order_) {
      put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      const auto& blob = blobs_.at(name);
      os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    if (!os) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  const auto p = path.string();
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4)) throw FormatError(p + ": not a checkpoint");
  const auto version = get_le<std::uint32_t>(is, p);
  if (version != kVersion) throw FormatError(p + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(is, p);
  Checkpoint ck;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = get_le<std::uint16_t>(is, p);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError(p + ": truncated record name");
    const auto start = is.tellg();
    read_blob<double>(is);  // validates and finds the extent
    const auto end = is.tellg();
    std::string blob(static_cast<std::size_t>(end - start), '\0');
    is.seekg(start);
    is.read(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (ck.blobs_.contains(name)) throw FormatError(p + ": duplicate record '" + name + "'");
    ck.order_.push_back(name);
    ck.blobs_[name] = std::move(blob);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(p + ": trailing bytes after last record");
  return ck;
}

template void Checkpoint::put(const std::string&, const Tensor<float>&);
template void Checkpoint::put(const std::string&, const Tensor<double>&);
template Tensor<float> Checkpoint::get(const std::string&) const;
template Tensor<double> Checkpoint::get(const std::string&) const;

}  // namespace ccrl
