// SPDX-License-Identifier: Apache-2.0
#include "pbp/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>

#include "pbp/error.hpp"

namespace pbp {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }
  void update(const void* data, std::size_t n) {
    if (n && EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw Error("sha256: update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw Error("sha256: final failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
      s += kHex[md[i] >> 4];
      s += kHex[md[i] & 15];
    }
    return s;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_hex(std::string_view text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return h.hex();
}

std::string parameter_digest(const Network& net) {
  Sha256 h;
  for (const auto& p : net.parameters()) {
    h.update(p.name.data(), p.name.size());
    const unsigned char sep = 0;
    h.update(&sep, 1);
    for (auto d : p.value.shape()) {
      const auto dim = static_cast<std::uint64_t>(d);
      h.update(&dim, sizeof dim);
    }
    h.update(p.value.raw(), p.value.size() * sizeof(double));
  }
  return h.hex();
}

}  // namespace pbp
