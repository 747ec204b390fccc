#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hca/tensor.hpp"

namespace hca {

enum class DatasetKind { Proxy, Target };
std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from(const std::string& s);

struct ImageGeometry {
  std::int64_t channels = 1;
  std::int64_t height = 32;
  std::int64_t width = 32;
};

struct Sample {
  std::string sample_id;
  std::string patient_id;
  Tensor image;                // c x h x w
  std::vector<double> labels;  // 15 binary (proxy) or 2 real (target)
};

struct ScoreRange {
  double lo = 0.0;
  double hi = 1.0;
};

struct Dataset {
  DatasetKind kind = DatasetKind::Proxy;
  std::vector<Sample> samples;
  // Target only: declared ranges for geographic_extend and opacity.
  std::vector<ScoreRange> score_ranges;
};

std::int64_t label_arity(DatasetKind kind);

// ---- Tensor file format ----------------------------------------------------
// magic "HCAT", version 0x01, dtype 0x01 (64-bit real), ndim byte, ndim
// little-endian u64 extents, row-major little-endian f64 payload. Round trips
// are bitwise exact.

void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

// ---- Manifest --------------------------------------------------------------
// CSV, header sample_id,patient_id,tensor_path,label_0,...,label_{A-1},kind;
// the kind field fixes the label arity (proxy -> 15, target -> 2). Relative
// tensor paths resolve against the manifest's directory. A dataset_meta.json
// next to the manifest supplies declared score ranges when present.

Dataset load_manifest(const std::filesystem::path& path);

// Writes manifest.csv, tensors/<sample_id>.t64 and dataset_meta.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                  const std::string& meta_json);

// ---- Synthetic generators --------------------------------------------------
// Images carry 0-3 soft elliptical opacity blobs over background noise. Proxy
// labels are fixed threshold predicates of the blob attributes (count, area,
// intensity, quadrant occupancy, ...); target scores are range-scaled blob
// area coverage (geographic extend) and area-weighted mean blob intensity
// (opacity). Pure functions of (seed, parameters).

Dataset synth_proxy(std::uint64_t seed, int n_samples, const ImageGeometry& geometry = {});

// noise_sd is the label noise standard deviation as a fraction of each
// attribute's declared range; scores are clamped back into range.
Dataset synth_target(std::uint64_t seed, int n_samples, const ImageGeometry& geometry = {},
                     double noise_sd = 0.0);

// Generator parameters echoed as dataset_meta.json content.
std::string dataset_meta_json(const Dataset& ds, std::uint64_t seed, int n_samples,
                              const ImageGeometry& geometry, double noise_sd);

}  // namespace hca
