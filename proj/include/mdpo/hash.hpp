#pragma once

#include <string>
#include <string_view>

namespace mdpo {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes);
  std::string hex_digest();

 private:
  void* ctx_;
};

}  // namespace mdpo
