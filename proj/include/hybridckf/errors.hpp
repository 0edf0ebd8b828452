#pragma once

#include <stdexcept>
#include <string>

namespace hybridckf {

// Factorization pivot hit zero or below; caller should repair via ensure_spd.
struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// No jitter level in the retry schedule produced a factorizable matrix.
struct StabilizationFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LengthMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularInnovation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filter state left the plausible pressure envelope.
struct Diverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric denominator (sum of |truth| or truth range) is zero.
struct DegenerateChannel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// More than the tolerated fraction of Monte Carlo runs raised.
struct TooManyFailures : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hybridckf
