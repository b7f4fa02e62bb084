#include "leal/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace leal {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::string_view to_string(StreamLabel label) {
  switch (label) {
    case StreamLabel::init: return "init";
    case StreamLabel::shuffle: return "shuffle";
    case StreamLabel::sample: return "sample";
    case StreamLabel::synth: return "synth";
  }
  return "unknown";
}

RngStream::RngStream(std::uint64_t seed, StreamLabel label)
    : seed_(seed),
      label_(label),
      key_(mix64(mix64(seed + kGolden) ^ (static_cast<std::uint64_t>(label) * kGolden))) {}

RngStream RngStream::fork(std::uint64_t tag) const {
  return RngStream(seed_, label_, mix64(key_ ^ mix64(tag + 0x632BE59BD9B4E019ULL)));
}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RngStream::uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
  // Lemire's multiply-shift; bias is < n / 2^64, irrelevant at our sizes.
  const auto wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

std::vector<std::size_t> RngStream::permutation(std::size_t n) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = below(i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace leal
