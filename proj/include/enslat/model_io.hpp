#pragma once

#include <string>

#include "enslat/dense_ae.hpp"
#include "enslat/fields.hpp"
#include "enslat/ivae.hpp"
#include "enslat/pca.hpp"

namespace enslat::model_io {

// Binary model blobs: 4-byte type magic, u32 version, the standardizer the
// model was trained with, architecture header, float64 payload. Everything
// little-endian. Keeping the standardizer inside the blob means a model can
// never be applied with the wrong normalization.

void save_pca(const std::string& path, const pca::PcaModel& model, const fields::Standardizer& s);
void save_ae(const std::string& path, const ae::AeModel& model, const fields::Standardizer& s);
void save_ivae(const std::string& path, const ivae::IvaeModel& model, const fields::Standardizer& s);

struct LoadedPca {
  pca::PcaModel model;
  fields::Standardizer standardizer;
};
struct LoadedAe {
  ae::AeModel model;
  fields::Standardizer standardizer;
};
struct LoadedIvae {
  ivae::IvaeModel model;
  fields::Standardizer standardizer;
};

LoadedPca load_pca(const std::string& path);
LoadedAe load_ae(const std::string& path);
LoadedIvae load_ivae(const std::string& path);

// Type magic of a model file ("ENSP", "ENSA", "ENSV").
std::string peek_kind(const std::string& path);

}  // namespace enslat::model_io
