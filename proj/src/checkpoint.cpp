#include "mdpo/checkpoint.hpp"

#include "mdpo/error.hpp"
#include "mdpo/hash.hpp"
#include "mdpo/io.hpp"

#include <openssl/sha.h>

#include <bit>
#include <cstring>

namespace mdpo {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace {

constexpr char kMagic[8] = {'M', 'D', 'P', 'O', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw IntegrityError("checkpoint truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

std::string raw_digest(std::string_view body) {
  unsigned char md[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(body.data()), body.size(), md);
  return std::string(reinterpret_cast<const char*>(md), SHA256_DIGEST_LENGTH);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = ckpt.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, ckpt.params.size());
  for (const auto& t : ckpt.params.tensors()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) put<double>(out, t.value(r, c));
  }
  out += raw_digest(out);
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic + SHA256_DIGEST_LENGTH) throw IntegrityError("checkpoint truncated");
  const auto body = bytes.substr(0, bytes.size() - SHA256_DIGEST_LENGTH);
  if (raw_digest(body) != bytes.substr(body.size())) throw IntegrityError("checkpoint digest mismatch");

  Reader r(body);
  if (r.bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic))
    throw IntegrityError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IntegrityError("unknown checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  const auto meta_len = r.get<std::uint64_t>();
  try {
    ckpt.metadata = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata unreadable: ") + e.what());
  }
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name(r.bytes(r.get<std::uint32_t>()));
    const auto ndim = r.get<std::uint32_t>();
    if (ndim != 2) throw IntegrityError("unsupported tensor rank in " + name);
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    nn::Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index a = 0; a < m.rows(); ++a)
      for (Eigen::Index b = 0; b < m.cols(); ++b) m(a, b) = r.get<double>();
    ckpt.params.add(std::move(name), std::move(m));
  }
  if (r.pos() != body.size()) throw IntegrityError("trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

std::string checkpoint_hash(const Checkpoint& ckpt) { return sha256_hex(serialize_checkpoint(ckpt)); }

}  // namespace mdpo
