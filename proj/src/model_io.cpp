#include "enslat/model_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace enslat::model_io {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("model blob truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("model blob truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

void put_tensor(std::ostream& os, const Tensor& t) {
  for (double x : t.values()) put_f64(os, x);
}

void get_tensor(std::istream& is, Tensor& t) {
  for (double& x : t.values()) x = get_f64(is);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open model file for writing: " + path);
  return os;
}

std::ifstream open_in(const std::string& path, const char* magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open model file: " + path);
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw std::runtime_error("model file " + path + " is not of the expected kind");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) throw std::runtime_error("unsupported model blob version");
  return is;
}

}  // namespace

void save_pca(const std::string& path, const pca::PcaModel& model, const fields::Standardizer& s) {
  std::ofstream os = open_out(path);
  os.write("ENSP", 4);
  put_u32(os, kVersion);
  put_f64(os, s.mean);
  put_f64(os, s.stddev);
  put_u32(os, static_cast<std::uint32_t>(model.d_data()));
  put_u32(os, static_cast<std::uint32_t>(model.d_latent()));
  put_f64(os, model.total_variance);
  put_tensor(os, model.feature_mean);
  put_tensor(os, model.components);
  put_tensor(os, model.singular_values);
  if (!os) throw std::runtime_error("write failure on " + path);
}

LoadedPca load_pca(const std::string& path) {
  std::ifstream is = open_in(path, "ENSP");
  LoadedPca out;
  out.standardizer.mean = get_f64(is);
  out.standardizer.stddev = get_f64(is);
  const std::int64_t d = get_u32(is);
  const std::int64_t k = get_u32(is);
  out.model.total_variance = get_f64(is);
  out.model.feature_mean = Tensor::zeros({d});
  out.model.components = Tensor::zeros({k, d});
  out.model.singular_values = Tensor::zeros({k});
  get_tensor(is, out.model.feature_mean);
  get_tensor(is, out.model.components);
  get_tensor(is, out.model.singular_values);
  return out;
}

void save_ae(const std::string& path, const ae::AeModel& model, const fields::Standardizer& s) {
  std::ofstream os = open_out(path);
  os.write("ENSA", 4);
  put_u32(os, kVersion);
  put_f64(os, s.mean);
  put_f64(os, s.stddev);
  put_u32(os, static_cast<std::uint32_t>(model.cfg.d_data));
  put_u32(os, static_cast<std::uint32_t>(model.cfg.d_latent));
  put_u32(os, static_cast<std::uint32_t>(model.cfg.width));
  put_f64(os, model.cfg.slope);
  for (const Tensor* w : model.weights()) put_tensor(os, *w);
  if (!os) throw std::runtime_error("write failure on " + path);
}

LoadedAe load_ae(const std::string& path) {
  std::ifstream is = open_in(path, "ENSA");
  LoadedAe out;
  out.standardizer.mean = get_f64(is);
  out.standardizer.stddev = get_f64(is);
  ae::AeConfig cfg;
  cfg.d_data = get_u32(is);
  cfg.d_latent = get_u32(is);
  cfg.width = get_u32(is);
  cfg.slope = get_f64(is);
  out.model = ae::AeModel::init(cfg, 0);
  for (Tensor* w : out.model.weights()) get_tensor(is, *w);
  return out;
}

void save_ivae(const std::string& path, const ivae::IvaeModel& model,
               const fields::Standardizer& s) {
  std::ofstream os = open_out(path);
  os.write("ENSV", 4);
  put_u32(os, kVersion);
  put_f64(os, s.mean);
  put_f64(os, s.stddev);
  put_u32(os, static_cast<std::uint32_t>(model.cfg.d_data));
  put_u32(os, static_cast<std::uint32_t>(model.cfg.d_latent));
  put_u32(os, static_cast<std::uint32_t>(model.cfg.width));
  put_f64(os, model.cfg.slope);
  put_f64(os, model.cfg.log_sigma_clamp);
  for (const Tensor* w : model.weights()) put_tensor(os, *w);
  if (!os) throw std::runtime_error("write failure on " + path);
}

LoadedIvae load_ivae(const std::string& path) {
  std::ifstream is = open_in(path, "ENSV");
  LoadedIvae out;
  out.standardizer.mean = get_f64(is);
  out.standardizer.stddev = get_f64(is);
  ivae::IvaeConfig cfg;
  cfg.d_data = get_u32(is);
  cfg.d_latent = get_u32(is);
  cfg.width = get_u32(is);
  cfg.slope = get_f64(is);
  cfg.log_sigma_clamp = get_f64(is);
  out.model = ivae::IvaeModel::init(cfg, 0);
  for (Tensor* w : out.model.weights()) get_tensor(is, *w);
  return out;
}

std::string peek_kind(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open model file: " + path);
  char buf[4];
  if (!is.read(buf, 4)) throw std::runtime_error("model blob truncated");
  return std::string(buf, 4);
}

}  // namespace enslat::model_io
