#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "enslat/tensor.hpp"

namespace enslat::fields {

// One scalar variable: T days x M members x H x W grid, physical units.
struct EnsembleDataset {
  std::int64_t n_days = 0;
  std::int64_t n_members = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  Tensor values;  // {T, M, H, W}
  std::string variable_name;
  std::vector<std::string> day_labels;  // size T; defaults to "0".."T-1"

  std::int64_t d_data() const { return height * width; }

  double at(std::int64_t t, std::int64_t m, std::int64_t r, std::int64_t c) const {
    return values[((t * n_members + m) * height + r) * width + c];
  }
  double& at(std::int64_t t, std::int64_t m, std::int64_t r, std::int64_t c) {
    return values[((t * n_members + m) * height + r) * width + c];
  }

  // All members of day t as a {M, H*W} matrix.
  Tensor day_members(std::int64_t t) const;

  // Member fields of the given day range flattened to a {days*M, H*W}
  // matrix, day-major then member order.
  Tensor member_rows(std::int64_t day_begin, std::int64_t day_end) const;

  void validate() const;  // shape consistency, finiteness, M >= 2
};

struct Standardizer {
  double mean = 0.0;
  double stddev = 1.0;  // population std, fitted on the training split only
};

struct DayRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;  // half-open
  std::int64_t size() const { return end - begin; }
};

struct SplitSpec {
  DayRange train;
  DayRange validation;
  DayRange test;

  // Ranges must be ordered, non-overlapping and inside [0, n_days).
  void validate(std::int64_t n_days) const;
};

// Global scalar moments over every value of the training split.
// Throws on an empty training split or zero variance.
Standardizer fit_standardizer(const EnsembleDataset& ds, const SplitSpec& split);

EnsembleDataset standardize(const EnsembleDataset& ds, const Standardizer& s);
EnsembleDataset destandardize(const EnsembleDataset& ds, const Standardizer& s);

// Standardize a plain {rows, d} matrix of fields.
Tensor standardize_rows(const Tensor& rows, const Standardizer& s);
Tensor destandardize_rows(const Tensor& rows, const Standardizer& s);

// --- EFF on-disk format ------------------------------------------------------
// Little-endian: magic "ENSF", u32 version = 1, u32 T, M, H, W, u32 name
// length + UTF-8 variable name, then T*M*H*W float32 values in
// [day][member][row][col] order. Day labels travel in an optional JSON
// sidecar "<path>.meta.json".

enum class EffErrorCode { BadMagic, VersionMismatch, TruncatedPayload, NonFiniteValue, IoFailure };

struct EffError : std::runtime_error {
  EffErrorCode code;
  EffError(EffErrorCode c, const std::string& what) : std::runtime_error(what), code(c) {}
};

void write_eff(const EnsembleDataset& ds, const std::string& path);
EnsembleDataset read_eff(const std::string& path);

}  // namespace enslat::fields
