#include "enslat/fields.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace enslat::fields {

Tensor EnsembleDataset::day_members(std::int64_t t) const {
  const std::int64_t d = d_data();
  Tensor out = Tensor::zeros({n_members, d});
  const double* src = values.data() + t * n_members * d;
  std::memcpy(out.data(), src, static_cast<std::size_t>(n_members * d) * sizeof(double));
  return out;
}

Tensor EnsembleDataset::member_rows(std::int64_t day_begin, std::int64_t day_end) const {
  const std::int64_t d = d_data();
  const std::int64_t rows = (day_end - day_begin) * n_members;
  Tensor out = Tensor::zeros({rows, d});
  const double* src = values.data() + day_begin * n_members * d;
  std::memcpy(out.data(), src, static_cast<std::size_t>(rows * d) * sizeof(double));
  return out;
}

void EnsembleDataset::validate() const {
  if (n_days < 1 || n_members < 2 || height < 1 || width < 1) {
    throw std::invalid_argument("EnsembleDataset: need T >= 1, M >= 2 and a non-empty grid");
  }
  if (values.numel() != n_days * n_members * height * width) {
    throw std::invalid_argument("EnsembleDataset: value count does not match dimensions");
  }
  if (!values.all_finite()) {
    throw std::invalid_argument("EnsembleDataset: non-finite values");
  }
  if (!day_labels.empty() && static_cast<std::int64_t>(day_labels.size()) != n_days) {
    throw std::invalid_argument("EnsembleDataset: day label count != n_days");
  }
}

void SplitSpec::validate(std::int64_t n_days) const {
  const DayRange* ranges[] = {&train, &validation, &test};
  std::int64_t prev_end = 0;
  for (const DayRange* r : ranges) {
    if (r->begin < prev_end || r->end < r->begin || r->end > n_days) {
      throw std::invalid_argument("SplitSpec: ranges must be ordered, disjoint and within [0, T)");
    }
    prev_end = r->end;
  }
}

Standardizer fit_standardizer(const EnsembleDataset& ds, const SplitSpec& split) {
  split.validate(ds.n_days);
  if (split.train.size() < 1) throw std::invalid_argument("fit_standardizer: empty training split");

  const std::int64_t d = ds.d_data();
  const std::int64_t count = split.train.size() * ds.n_members * d;
  const double* begin = ds.values.data() + split.train.begin * ds.n_members * d;
  std::span<const double> xs(begin, static_cast<std::size_t>(count));

  const double mean = exact_mean(xs);
  std::vector<double> sq(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double c = xs[i] - mean;
    sq[i] = c * c;
  }
  const double var = exact_mean(sq);  // population denominator
  if (var <= 0.0) {
    throw std::invalid_argument("fit_standardizer: zero variance in training split");
  }
  return {mean, std::sqrt(var)};
}

namespace {

EnsembleDataset map_values(const EnsembleDataset& ds, double scale, double offset) {
  EnsembleDataset out = ds;
  for (double& x : out.values.values()) x = x * scale + offset;
  return out;
}

}  // namespace

EnsembleDataset standardize(const EnsembleDataset& ds, const Standardizer& s) {
  return map_values(ds, 1.0 / s.stddev, -s.mean / s.stddev);
}

EnsembleDataset destandardize(const EnsembleDataset& ds, const Standardizer& s) {
  return map_values(ds, s.stddev, s.mean);
}

Tensor standardize_rows(const Tensor& rows, const Standardizer& s) {
  Tensor out = rows;
  for (double& x : out.values()) x = (x - s.mean) / s.stddev;
  return out;
}

Tensor destandardize_rows(const Tensor& rows, const Standardizer& s) {
  Tensor out = rows;
  for (double& x : out.values()) x = x * s.stddev + s.mean;
  return out;
}

// --- EFF I/O -----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'N', 'S', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

bool get_f32(std::istream& is, float& f) {
  std::uint32_t v;
  if (!get_u32(is, v)) return false;
  std::memcpy(&f, &v, 4);
  return true;
}

std::string meta_path(const std::string& path) { return path + ".meta.json"; }

}  // namespace

void write_eff(const EnsembleDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw EffError(EffErrorCode::IoFailure, "write_eff: cannot open " + path);

  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(ds.n_days));
  put_u32(os, static_cast<std::uint32_t>(ds.n_members));
  put_u32(os, static_cast<std::uint32_t>(ds.height));
  put_u32(os, static_cast<std::uint32_t>(ds.width));
  put_u32(os, static_cast<std::uint32_t>(ds.variable_name.size()));
  os.write(ds.variable_name.data(), static_cast<std::streamsize>(ds.variable_name.size()));

  for (double x : ds.values.values()) {
    const float f = static_cast<float>(x);
    if (!std::isfinite(f)) {
      throw EffError(EffErrorCode::NonFiniteValue,
                     "write_eff: value not representable as finite float32");
    }
    put_f32(os, f);
  }
  if (!os) throw EffError(EffErrorCode::IoFailure, "write_eff: write failure on " + path);
  os.close();

  if (!ds.day_labels.empty()) {
    nlohmann::json meta;
    meta["day_labels"] = ds.day_labels;
    std::ofstream ms(meta_path(path), std::ios::trunc);
    if (!ms) throw EffError(EffErrorCode::IoFailure, "write_eff: cannot open sidecar");
    ms << meta.dump(2) << "\n";
  }
}

EnsembleDataset read_eff(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw EffError(EffErrorCode::IoFailure, "read_eff: cannot open " + path);

  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw EffError(EffErrorCode::BadMagic, "read_eff: bad magic in " + path);
  }
  std::uint32_t version = 0, t = 0, m = 0, h = 0, w = 0, name_len = 0;
  if (!get_u32(is, version)) {
    throw EffError(EffErrorCode::TruncatedPayload, "read_eff: truncated header");
  }
  if (version != kVersion) {
    throw EffError(EffErrorCode::VersionMismatch,
                   "read_eff: unsupported version " + std::to_string(version));
  }
  if (!get_u32(is, t) || !get_u32(is, m) || !get_u32(is, h) || !get_u32(is, w) ||
      !get_u32(is, name_len)) {
    throw EffError(EffErrorCode::TruncatedPayload, "read_eff: truncated header");
  }
  std::string name(name_len, '\0');
  if (name_len > 0 && !is.read(name.data(), name_len)) {
    throw EffError(EffErrorCode::TruncatedPayload, "read_eff: truncated variable name");
  }

  const std::uint64_t count = static_cast<std::uint64_t>(t) * m * h * w;
  if (count > (1ULL << 32)) {
    throw EffError(EffErrorCode::TruncatedPayload, "read_eff: implausible dimensions");
  }
  std::vector<double> values(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < values.size(); ++i) {
    float f;
    if (!get_f32(is, f)) {
      throw EffError(EffErrorCode::TruncatedPayload,
                     "read_eff: payload shorter than declared T*M*H*W");
    }
    if (!std::isfinite(f)) {
      throw EffError(EffErrorCode::NonFiniteValue, "read_eff: non-finite value in payload");
    }
    values[i] = static_cast<double>(f);
  }

  EnsembleDataset ds;
  ds.n_days = t;
  ds.n_members = m;
  ds.height = h;
  ds.width = w;
  ds.variable_name = name;
  ds.values = Tensor({ds.n_days, ds.n_members, ds.height, ds.width}, std::move(values));

  const std::string mp = meta_path(path);
  if (std::filesystem::exists(mp)) {
    std::ifstream ms(mp);
    nlohmann::json meta = nlohmann::json::parse(ms, nullptr, true);
    if (meta.contains("day_labels")) {
      ds.day_labels = meta["day_labels"].get<std::vector<std::string>>();
    }
  }
  if (ds.day_labels.empty()) {
    ds.day_labels.reserve(static_cast<std::size_t>(ds.n_days));
    for (std::int64_t i = 0; i < ds.n_days; ++i) ds.day_labels.push_back(std::to_string(i));
  }
  ds.validate();
  return ds;
}

}  // namespace enslat::fields
