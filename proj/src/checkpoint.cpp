#include "cfd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cfd {

namespace {

constexpr char kMagic[8] = {'C', 'F', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint8_t kVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& what)
      : bytes_(bytes), what_(what) {}

  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
      v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_ + static_cast<std::size_t>(i)]);
    pos_ += 8;
    return v;
  }

  std::uint8_t u8() {
    need(1, "u8");
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string str(std::size_t len) {
    need(len, "string");
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void raw(char* dst, std::size_t len, const char* field) {
    need(len, field);
    std::memcpy(dst, bytes_.data() + pos_, len);
    pos_ += len;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(what_ + ": " + msg + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* field) {
    if (bytes_.size() - pos_ < n)
      throw std::runtime_error(what_ + ": truncated while reading " + field +
                               " at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path dir = path.parent_path().empty() ? "." : path.parent_path();
  fs::create_directories(dir);
  const fs::path tmp = dir / (path.filename().string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_container(const std::filesystem::path& path,
                     const std::vector<NamedArray>& arrays) {
  std::string out;
  out.append(kMagic, 8);
  out.push_back(static_cast<char>(kVersion));
  put_u64(out, arrays.size());
  for (const NamedArray& a : arrays) {
    if (numel(a.shape) != static_cast<std::int64_t>(a.values.size()))
      throw std::invalid_argument("container: array '" + a.name +
                                  "' shape does not match value count");
    put_u64(out, a.name.size());
    out.append(a.name);
    put_u64(out, a.shape.size());
    for (auto e : a.shape) put_u64(out, static_cast<std::uint64_t>(e));
    for (double v : a.values) put_f64(out, v);
  }
  write_file_atomic(path, out);
}

std::vector<NamedArray> read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  Reader r(bytes, path.string());

  char magic[8];
  r.raw(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path.string() + ": bad magic at byte 0");
  const std::uint8_t version = r.u8();
  if (version != kVersion)
    throw std::runtime_error(path.string() + ": unsupported version " +
                             std::to_string(version) + " at byte 8");

  const std::uint64_t count = r.u64();
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::uint64_t name_len = r.u64();
    if (name_len > r.remaining()) r.fail("name length " + std::to_string(name_len) + " exceeds file");
    a.name = r.str(name_len);
    const std::uint64_t rank = r.u64();
    if (rank > 16) r.fail("implausible rank " + std::to_string(rank));
    std::uint64_t n = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      const std::uint64_t e = r.u64();
      if (e == 0) r.fail("zero extent in array '" + a.name + "'");
      a.shape.push_back(static_cast<std::int64_t>(e));
      n *= e;
    }
    if (n * 8 > r.remaining())
      r.fail("array '" + a.name + "' claims " + std::to_string(n) +
             " values but file is too short");
    a.values.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) a.values.push_back(r.f64());
    arrays.push_back(std::move(a));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last array");
  return arrays;
}

const NamedArray* find_array(const std::vector<NamedArray>& arrays,
                             const std::string& name) {
  for (const NamedArray& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

}  // namespace cfd
