// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_HASH_HPP
#define FLIM_HASH_HPP

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

namespace flim {

/// Incremental SHA-256 (OpenSSL EVP). digest_hex() finalizes.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size);
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::string digest_hex();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);

}  // namespace flim

#endif  // FLIM_HASH_HPP
