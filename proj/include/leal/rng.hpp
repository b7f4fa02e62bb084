#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace leal {

enum class StreamLabel : std::uint64_t { init = 1, shuffle = 2, sample = 3, synth = 4 };

std::string_view to_string(StreamLabel label);

/**
 * Counter-based random stream.
 *
 * The n-th draw is a pure function of (seed, label, path of forks, n), so values do
 * not depend on evaluation order or thread count. Use fork() to give each epoch,
 * batch or worker its own independent sub-stream.
 */
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamLabel label);

  std::uint64_t seed() const { return seed_; }
  StreamLabel label() const { return label_; }
  std::uint64_t counter() const { return counter_; }

  /// Independent child stream keyed by `tag`; does not advance this stream.
  RngStream fork(std::uint64_t tag) const;

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  /// Uniformly random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  RngStream(std::uint64_t seed, StreamLabel label, std::uint64_t key)
      : seed_(seed), label_(label), key_(key) {}

  std::uint64_t seed_;
  StreamLabel label_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace leal
