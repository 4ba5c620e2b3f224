// digest.hpp
//
// FNV-1a based digests used to stamp configs, checkpoints and run outputs.

#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace vseg {

class Fnv1a {
 public:
  void update(const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    update(&bits, sizeof(bits));
  }
  void update(uint64_t v) { update(&v, sizeof(v)); }
  void update(int v) {
    int64_t wide = v;
    update(&wide, sizeof(wide));
  }

  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    uint64_t h = hash_;
    for (int i = 15; i >= 0; --i) {
      out[i] = digits[h & 0xf];
      h >>= 4;
    }
    return out;
  }

 private:
  uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string digest_string(const std::string& payload) {
  Fnv1a h;
  h.update(payload);
  return h.hex();
}

}  // namespace vseg
