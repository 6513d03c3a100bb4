#include "apgl/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace apgl {
namespace {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

template <typename T>
void append_raw(std::vector<std::uint8_t>& out, const T& value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <typename T>
  T read() {
    T value;
    take(&value, sizeof(T));
    return value;
  }

  void take(void* dst, std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw Error("container truncated at byte " + std::to_string(pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t product(const std::vector<std::uint64_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

std::size_t ArrayEntry::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data);
}

void Container::put(const std::string& name, ArrayEntry entry) {
  if (name.empty() || name.size() > 0xFFFF) throw Error("invalid container entry name");
  if (entry.dims.size() > 0xFF) throw Error("rank too large for entry " + name);
  if (product(entry.dims) != entry.size()) {
    throw Error("entry " + name + ": data length does not match dims");
  }
  if (!entries_.contains(name)) order_.push_back(name);
  entries_[name] = std::move(entry);
}

void Container::put_f64(const std::string& name, std::vector<std::uint64_t> dims,
                        std::vector<double> data) {
  put(name, {std::move(dims), std::move(data)});
}
void Container::put_f32(const std::string& name, std::vector<std::uint64_t> dims,
                        std::vector<float> data) {
  put(name, {std::move(dims), std::move(data)});
}
void Container::put_u32(const std::string& name, std::vector<std::uint64_t> dims,
                        std::vector<std::uint32_t> data) {
  put(name, {std::move(dims), std::move(data)});
}
void Container::put_u64(const std::string& name, std::vector<std::uint64_t> dims,
                        std::vector<std::uint64_t> data) {
  put(name, {std::move(dims), std::move(data)});
}

void Container::put_matrix(const std::string& name, const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  put_f64(name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
          std::move(data));
}

void Container::put_scalar(const std::string& name, double value) { put_f64(name, {1}, {value}); }

void Container::put_count(const std::string& name, std::uint64_t value) {
  put_u64(name, {1}, {value});
}

bool Container::contains(const std::string& name) const { return entries_.contains(name); }

const ArrayEntry& Container::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("container has no entry '" + name + "'");
  return it->second;
}

namespace {
template <typename T>
const std::vector<T>& typed(const ArrayEntry& e, const std::string& name) {
  const auto* v = std::get_if<std::vector<T>>(&e.data);
  if (v == nullptr) throw Error("container entry '" + name + "' has unexpected dtype");
  return *v;
}
}  // namespace

const std::vector<double>& Container::f64(const std::string& name) const {
  return typed<double>(at(name), name);
}
const std::vector<std::uint32_t>& Container::u32(const std::string& name) const {
  return typed<std::uint32_t>(at(name), name);
}
const std::vector<std::uint64_t>& Container::u64(const std::string& name) const {
  return typed<std::uint64_t>(at(name), name);
}

Matrix Container::matrix(const std::string& name) const {
  const auto& e = at(name);
  if (e.dims.size() != 2) throw Error("container entry '" + name + "' is not a matrix");
  const auto& v = f64(name);
  Matrix m(static_cast<Eigen::Index>(e.dims[0]), static_cast<Eigen::Index>(e.dims[1]));
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

double Container::scalar(const std::string& name) const {
  const auto& v = f64(name);
  if (v.size() != 1) throw Error("container entry '" + name + "' is not a scalar");
  return v[0];
}

std::uint64_t Container::count(const std::string& name) const {
  const auto& v = u64(name);
  if (v.size() != 1) throw Error("container entry '" + name + "' is not a scalar");
  return v[0];
}

std::vector<std::uint8_t> Container::serialize() const {
  std::vector<std::uint8_t> out = {'A', 'P', 'G', 'L'};
  append_raw(out, kContainerVersion);
  for (const auto& name : order_) {
    const auto& e = entries_.at(name);
    append_raw(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    append_raw(out, static_cast<std::uint8_t>(e.dtype()));
    append_raw(out, static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) append_raw(out, d);
    std::visit(
        [&](const auto& v) {
          const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
          out.insert(out.end(), p, p + v.size() * sizeof(v[0]));
        },
        e.data);
  }
  return out;
}

Container Container::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.take(magic, 4);
  if (std::memcmp(magic, "APGL", 4) != 0) throw Error("bad container magic");
  const auto version = r.read<std::uint32_t>();
  if (version != kContainerVersion) {
    throw Error("unsupported container version " + std::to_string(version));
  }
  Container c;
  while (!r.done()) {
    const auto len = r.read<std::uint16_t>();
    std::string name(len, '\0');
    r.take(name.data(), len);
    const auto tag = r.read<std::uint8_t>();
    const auto rank = r.read<std::uint8_t>();
    ArrayEntry e;
    e.dims.resize(rank);
    for (auto& d : e.dims) d = r.read<std::uint64_t>();
    const std::size_t n = product(e.dims);
    auto fill = [&](auto vec) {
      vec.resize(n);
      r.take(vec.data(), n * sizeof(vec[0]));
      e.data = std::move(vec);
    };
    switch (static_cast<DType>(tag)) {
      case DType::F64: fill(std::vector<double>{}); break;
      case DType::F32: fill(std::vector<float>{}); break;
      case DType::U32: fill(std::vector<std::uint32_t>{}); break;
      case DType::U64: fill(std::vector<std::uint64_t>{}); break;
      default: throw Error("unknown dtype tag " + std::to_string(tag) + " for entry " + name);
    }
    c.put(name, std::move(e));
  }
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace apgl
