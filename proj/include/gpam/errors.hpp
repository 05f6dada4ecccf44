#pragma once

#include <stdexcept>
#include <string>

namespace gpam {

// Base class for all library errors so callers can catch one type.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define GPAM_DEFINE_ERROR(NAME)                                  \
  struct NAME : Error {                                          \
    explicit NAME(const std::string& msg = #NAME) : Error(msg) {} \
  }

// ec-core
GPAM_DEFINE_ERROR(NonInvertible);
GPAM_DEFINE_ERROR(PointNotOnCurve);
GPAM_DEFINE_ERROR(DegenerateNonce);

// masking
GPAM_DEFINE_ERROR(ZeroMask);
GPAM_DEFINE_ERROR(InvalidMask);

// leakage-sim
GPAM_DEFINE_ERROR(ConfigOutOfRange);
GPAM_DEFINE_ERROR(IoFailure);
GPAM_DEFINE_ERROR(DuplicateKeyAcrossSplits);
GPAM_DEFINE_ERROR(CorruptShard);
GPAM_DEFINE_ERROR(UnknownVersion);

// tensor-ad / gpam-net
GPAM_DEFINE_ERROR(ShapeMismatch);
GPAM_DEFINE_ERROR(IndivisibleLength);
GPAM_DEFINE_ERROR(CyclicDag);
GPAM_DEFINE_ERROR(MissingDependency);
GPAM_DEFINE_ERROR(MissingLabel);

// train-metrics
GPAM_DEFINE_ERROR(EmptySet);
GPAM_DEFINE_ERROR(EmptyList);
GPAM_DEFINE_ERROR(PoolTooSmall);

// lattice-attack
GPAM_DEFINE_ERROR(TooFewPairs);
GPAM_DEFINE_ERROR(TooFewRecords);
GPAM_DEFINE_ERROR(RankDeficient);

// config / cli
GPAM_DEFINE_ERROR(ConfigError);

#undef GPAM_DEFINE_ERROR

}  // namespace gpam
