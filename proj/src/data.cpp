#include "hca/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hca {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::Proxy ? "proxy" : "target";
}

DatasetKind dataset_kind_from(const std::string& s) {
  if (s == "proxy") return DatasetKind::Proxy;
  if (s == "target") return DatasetKind::Target;
  throw DataError("unknown dataset kind '" + s + "'");
}

std::int64_t label_arity(DatasetKind kind) {
  return kind == DatasetKind::Proxy ? 15 : 2;
}

// ---- Tensor file format ----------------------------------------------------

namespace {

constexpr char kMagic[4] = {'H', 'C', 'A', 'T'};
constexpr unsigned char kVersion = 0x01;
constexpr unsigned char kDtypeF64 = 0x01;

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

[[noreturn]] void format_fail(const fs::path& path, std::size_t offset, const std::string& what) {
  throw FormatError(path.string() + ": " + what + " (offset " + std::to_string(offset) + ")");
}

}  // namespace

void save_tensor(const Tensor& t, const fs::path& path) {
  check_contract(t.defined(), "save_tensor: undefined tensor");
  std::string buf;
  buf.append(kMagic, 4);
  buf.push_back(static_cast<char>(kVersion));
  buf.push_back(static_cast<char>(kDtypeF64));
  buf.push_back(static_cast<char>(t.rank()));
  for (std::int64_t e : t.shape()) put_u64_le(buf, static_cast<std::uint64_t>(e));
  for (double v : t.data()) put_u64_le(buf, std::bit_cast<std::uint64_t>(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("short write to '" + path.string() + "'");
}

Tensor load_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const std::size_t size = buf.size();

  if (size < 7) format_fail(path, size, "truncated header: expected at least 7 bytes, got " +
                                            std::to_string(size));
  if (std::memcmp(p, kMagic, 4) != 0) format_fail(path, 0, "bad magic bytes");
  if (p[4] != kVersion)
    format_fail(path, 4, "unsupported version " + std::to_string(p[4]));
  if (p[5] != kDtypeF64)
    format_fail(path, 5, "unsupported dtype " + std::to_string(p[5]));
  const std::size_t ndim = p[6];

  std::size_t off = 7;
  if (size < off + 8 * ndim)
    format_fail(path, size, "truncated extents: expected " + std::to_string(off + 8 * ndim) +
                                " bytes, got " + std::to_string(size));
  Shape shape;
  std::uint64_t numel = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint64_t e = get_u64_le(p + off);
    if (e == 0) format_fail(path, off, "zero extent");
    shape.push_back(static_cast<std::int64_t>(e));
    numel *= e;
    off += 8;
  }

  const std::size_t expected = off + 8 * numel;
  if (size != expected)
    format_fail(path, off, "payload length mismatch: expected " + std::to_string(expected) +
                               " bytes total, got " + std::to_string(size));
  std::vector<double> values(numel);
  for (std::uint64_t i = 0; i < numel; ++i) {
    values[i] = std::bit_cast<double>(get_u64_le(p + off));
    off += 8;
  }
  return Tensor::from(std::move(shape), std::move(values));
}

// ---- Manifest --------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");

  std::string header;
  if (!std::getline(in, header)) throw DataError("manifest '" + path.string() + "': empty file");
  const auto head_fields = split_csv_line(header);
  check_data(head_fields.size() >= 5 && head_fields[0] == "sample_id" &&
                 head_fields[1] == "patient_id" && head_fields[2] == "tensor_path" &&
                 head_fields.back() == "kind",
             "manifest '" + path.string() + "': bad header");
  const std::size_t arity = head_fields.size() - 4;

  Dataset ds;
  std::set<std::string> seen_ids;
  const fs::path base = path.parent_path();
  std::string line;
  int row = 1;
  bool kind_set = false;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    check_data(fields.size() == head_fields.size(),
               "manifest row " + std::to_string(row) + ": expected " +
                   std::to_string(head_fields.size()) + " fields, got " +
                   std::to_string(fields.size()));
    const DatasetKind kind = dataset_kind_from(fields.back());
    if (!kind_set) {
      ds.kind = kind;
      kind_set = true;
      check_data(static_cast<std::int64_t>(arity) == label_arity(kind),
                 "manifest row " + std::to_string(row) + ": kind '" + to_string(kind) +
                     "' implies " + std::to_string(label_arity(kind)) + " labels, header has " +
                     std::to_string(arity));
    } else {
      check_data(kind == ds.kind, "manifest row " + std::to_string(row) + ": mixed kinds");
    }

    Sample s;
    s.sample_id = fields[0];
    s.patient_id = fields[1];
    check_data(seen_ids.insert(s.sample_id).second,
               "manifest row " + std::to_string(row) + ": duplicate sample_id '" +
                   s.sample_id + "'");
    const fs::path tensor_path =
        fs::path(fields[2]).is_absolute() ? fs::path(fields[2]) : base / fields[2];
    check_data(fs::exists(tensor_path), "manifest row " + std::to_string(row) +
                                            ": missing tensor file '" + tensor_path.string() +
                                            "'");
    s.image = load_tensor(tensor_path);
    check_data(s.image.rank() == 3, "manifest row " + std::to_string(row) +
                                        ": image tensor must be c x h x w");
    for (std::size_t i = 0; i < arity; ++i) {
      double v = 0.0;
      try {
        v = std::stod(fields[3 + i]);
      } catch (const std::exception&) {
        throw DataError("manifest row " + std::to_string(row) + ": bad label '" +
                        fields[3 + i] + "'");
      }
      if (ds.kind == DatasetKind::Proxy)
        check_data(v == 0.0 || v == 1.0, "manifest row " + std::to_string(row) +
                                             ": proxy label must be binary, got " +
                                             fields[3 + i]);
      s.labels.push_back(v);
    }
    ds.samples.push_back(std::move(s));
  }
  check_data(!ds.samples.empty(), "manifest '" + path.string() + "': no samples");

  for (std::size_t i = 1; i < ds.samples.size(); ++i)
    check_data(ds.samples[i].image.shape() == ds.samples[0].image.shape(),
               "manifest: images do not share geometry");

  if (ds.kind == DatasetKind::Target) {
    const fs::path meta = base / "dataset_meta.json";
    if (fs::exists(meta)) {
      std::ifstream mf(meta);
      json j = json::parse(mf, nullptr, true);
      if (j.contains("score_ranges")) {
        for (const char* name : {"geographic_extend", "opacity"}) {
          auto r = j["score_ranges"][name];
          ds.score_ranges.push_back({r[0].get<double>(), r[1].get<double>()});
        }
      }
    }
    if (ds.score_ranges.empty()) {
      // No declared metadata: fall back to observed spans.
      for (int a = 0; a < 2; ++a) {
        ScoreRange r{ds.samples[0].labels[a], ds.samples[0].labels[a]};
        for (const Sample& s : ds.samples) {
          r.lo = std::min(r.lo, s.labels[a]);
          r.hi = std::max(r.hi, s.labels[a]);
        }
        ds.score_ranges.push_back(r);
      }
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir, const std::string& meta_json) {
  fs::create_directories(dir / "tensors");
  std::ostringstream manifest;
  manifest << "sample_id,patient_id,tensor_path";
  for (std::int64_t i = 0; i < label_arity(ds.kind); ++i) manifest << ",label_" << i;
  manifest << ",kind\n";
  for (const Sample& s : ds.samples) {
    const std::string rel = "tensors/" + s.sample_id + ".t64";
    save_tensor(s.image, dir / rel);
    manifest << s.sample_id << "," << s.patient_id << "," << rel;
    for (double v : s.labels) manifest << "," << format_double(v);
    manifest << "," << to_string(ds.kind) << "\n";
  }
  {
    std::ofstream out(dir / "manifest.csv", std::ios::trunc);
    check_data(static_cast<bool>(out), "cannot write manifest under '" + dir.string() + "'");
    out << manifest.str();
  }
  {
    std::ofstream out(dir / "dataset_meta.json", std::ios::trunc);
    out << meta_json << "\n";
  }
}

// ---- Synthetic generators --------------------------------------------------

namespace {

struct Blob {
  double cx, cy;      // center, pixel coordinates
  double rx, ry;      // semi-axes
  double angle;       // radians
  double amplitude;   // peak intensity
};

// Streak distractors: thin bright segments that imitate non-pathological
// structure. They show up in the pixels but never in the labels, so score
// estimation has to tell coherent blob regions from linear clutter.
struct Streak {
  double x0, y0, x1, y1;
  double width;
  double amplitude;
};

struct BlobScene {
  std::vector<Blob> blobs;
  std::vector<Streak> streaks;
  double coverage = 0.0;   // rasterized union area / image area
  double mean_amp = 0.0;   // mean peak amplitude over covered pixels
  double max_amp = 0.0;
  double max_area = 0.0;
  double total_mass = 0.0;            // sum amplitude * analytic area
  double max_eccentricity = 0.0;
  double min_center_dist = 1e9;
  bool quadrant[4] = {false, false, false, false};
};

constexpr double kGeographicExtendMax = 8.0;
constexpr double kOpacityMax = 6.0;
constexpr double kCoverageScale = 0.30;  // coverage mapped onto [0, 8]

BlobScene draw_scene(std::mt19937_64& rng, const ImageGeometry& geo) {
  std::uniform_int_distribution<int> count_dist(0, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  BlobScene scene;
  const int k = count_dist(rng);
  const double h = static_cast<double>(geo.height), w = static_cast<double>(geo.width);
  for (int i = 0; i < k; ++i) {
    Blob b;
    b.cx = 0.12 * w + 0.76 * w * unit(rng);
    b.cy = 0.12 * h + 0.76 * h * unit(rng);
    b.rx = 2.5 + 4.5 * unit(rng);
    b.ry = 2.5 + 4.5 * unit(rng);
    b.angle = 3.14159265358979323846 * unit(rng);
    b.amplitude = 0.3 + 0.7 * unit(rng);
    scene.blobs.push_back(b);
  }
  std::uniform_int_distribution<int> streak_dist(1, 4);
  const int n_streaks = streak_dist(rng);
  for (int i = 0; i < n_streaks; ++i) {
    Streak s;
    s.x0 = w * unit(rng);
    s.y0 = h * unit(rng);
    const double angle = 2.0 * 3.14159265358979323846 * unit(rng);
    const double len = 10.0 + 18.0 * unit(rng);
    s.x1 = s.x0 + len * std::cos(angle);
    s.y1 = s.y0 + len * std::sin(angle);
    s.width = 0.8 + 0.8 * unit(rng);
    s.amplitude = 0.15 + 0.3 * unit(rng);
    scene.streaks.push_back(s);
  }
  for (const Blob& b : scene.blobs) {
    const double area = 3.14159265358979323846 * b.rx * b.ry;
    scene.total_mass += b.amplitude * area;
    scene.max_amp = std::max(scene.max_amp, b.amplitude);
    scene.max_area = std::max(scene.max_area, area);
    scene.max_eccentricity =
        std::max(scene.max_eccentricity, std::max(b.rx, b.ry) / std::min(b.rx, b.ry));
    const int qx = b.cx < w / 2 ? 0 : 1;
    const int qy = b.cy < h / 2 ? 0 : 1;
    scene.quadrant[2 * qy + qx] = true;
  }
  // Coverage and mean intensity come from the rasterized union of the hard
  // ellipse masks, so the scores match what the rendered pixels show even
  // when blobs overlap.
  std::int64_t covered = 0;
  double intensity_sum = 0.0;
  for (std::int64_t y = 0; y < geo.height; ++y)
    for (std::int64_t x = 0; x < geo.width; ++x) {
      double peak = 0.0;
      for (const Blob& b : scene.blobs) {
        const double dx = static_cast<double>(x) - b.cx;
        const double dy = static_cast<double>(y) - b.cy;
        const double ca = std::cos(b.angle), sa = std::sin(b.angle);
        const double ax = (dx * ca + dy * sa) / b.rx;
        const double ay = (-dx * sa + dy * ca) / b.ry;
        if (ax * ax + ay * ay <= 1.0) peak = std::max(peak, b.amplitude);
      }
      if (peak > 0.0) {
        ++covered;
        intensity_sum += peak;
      }
    }
  scene.coverage = static_cast<double>(covered) / (h * w);
  scene.mean_amp = covered > 0 ? intensity_sum / static_cast<double>(covered) : 0.0;
  for (std::size_t i = 0; i < scene.blobs.size(); ++i)
    for (std::size_t j = i + 1; j < scene.blobs.size(); ++j) {
      const double dx = scene.blobs[i].cx - scene.blobs[j].cx;
      const double dy = scene.blobs[i].cy - scene.blobs[j].cy;
      scene.min_center_dist = std::min(scene.min_center_dist, std::sqrt(dx * dx + dy * dy));
    }
  return scene;
}

Tensor render_scene(const BlobScene& scene, const ImageGeometry& geo, std::mt19937_64& rng) {
  Tensor image = Tensor::zeros({geo.channels, geo.height, geo.width});
  auto iv = image.mutable_data();
  std::normal_distribution<double> noise(0.0, 0.02);
  for (std::int64_t y = 0; y < geo.height; ++y) {
    for (std::int64_t x = 0; x < geo.width; ++x) {
      double v = 0.0;
      for (const Blob& b : scene.blobs) {
        const double dx = static_cast<double>(x) - b.cx;
        const double dy = static_cast<double>(y) - b.cy;
        const double ca = std::cos(b.angle), sa = std::sin(b.angle);
        const double ax = (dx * ca + dy * sa) / b.rx;
        const double ay = (-dx * sa + dy * ca) / b.ry;
        const double q = ax * ax + ay * ay;
        // Soft ellipse edge.
        const double s = 1.0 / (1.0 + std::exp((q - 1.0) / 0.15));
        v = std::max(v, b.amplitude * s);
      }
      for (const Streak& s : scene.streaks) {
        const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
        const double len_sq = vx * vx + vy * vy;
        double t = ((static_cast<double>(x) - s.x0) * vx +
                    (static_cast<double>(y) - s.y0) * vy) /
                   len_sq;
        t = std::clamp(t, 0.0, 1.0);
        const double dx = static_cast<double>(x) - (s.x0 + t * vx);
        const double dy = static_cast<double>(y) - (s.y0 + t * vy);
        const double dist = std::sqrt(dx * dx + dy * dy);
        const double soft = 1.0 / (1.0 + std::exp((dist - s.width) / 0.3));
        v = std::max(v, s.amplitude * soft);
      }
      const double pixel = v + noise(rng);
      for (std::int64_t c = 0; c < geo.channels; ++c)
        iv[static_cast<std::size_t>((c * geo.height + y) * geo.width + x)] = pixel;
    }
  }
  return image;
}

// Threshold predicates over the blob attributes; calibrated so every class
// prevalence stays inside [0.1, 0.9] under the generator defaults.
std::vector<double> proxy_labels(const BlobScene& s) {
  const std::size_t k = s.blobs.size();
  std::vector<double> y(15, 0.0);
  y[0] = k >= 1;
  y[1] = k >= 2;
  y[2] = k >= 3;
  y[3] = s.coverage > 0.085;
  y[4] = s.max_amp > 0.65;
  y[5] = s.quadrant[0];
  y[6] = s.quadrant[1];
  y[7] = s.quadrant[2];
  y[8] = s.quadrant[3];
  y[9] = s.mean_amp > 0.6;
  y[10] = s.max_area > 80.0;
  y[11] = s.max_eccentricity > 1.55;
  y[12] = k >= 2 && s.min_center_dist < 13.0;
  y[13] = s.total_mass > 55.0;
  y[14] = s.coverage > 0.13 && s.max_amp > 0.5;  // severe-case class
  return y;
}

std::string sample_name(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-s%05d", prefix, index);
  return buf;
}

}  // namespace

Dataset synth_proxy(std::uint64_t seed, int n_samples, const ImageGeometry& geometry) {
  check_param(n_samples >= 1, "synth_proxy: n_samples must be >= 1");
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.kind = DatasetKind::Proxy;
  std::uniform_int_distribution<int> group_dist(1, 3);
  int patient = 0, remaining_in_group = 0;
  for (int i = 0; i < n_samples; ++i) {
    if (remaining_in_group == 0) {
      remaining_in_group = group_dist(rng);
      ++patient;
    }
    --remaining_in_group;
    BlobScene scene = draw_scene(rng, geometry);
    Sample s;
    s.sample_id = sample_name("proxy", i);
    char pbuf[32];
    std::snprintf(pbuf, sizeof pbuf, "proxy-p%05d", patient);
    s.patient_id = pbuf;
    s.image = render_scene(scene, geometry, rng);
    s.labels = proxy_labels(scene);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset synth_target(std::uint64_t seed, int n_samples, const ImageGeometry& geometry,
                     double noise_sd) {
  check_param(n_samples >= 1, "synth_target: n_samples must be >= 1");
  check_param(noise_sd >= 0.0, "synth_target: noise_sd must be >= 0");
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.kind = DatasetKind::Target;
  ds.score_ranges = {{0.0, kGeographicExtendMax}, {0.0, kOpacityMax}};
  std::normal_distribution<double> label_noise(0.0, 1.0);
  for (int i = 0; i < n_samples; ++i) {
    BlobScene scene = draw_scene(rng, geometry);
    Sample s;
    s.sample_id = sample_name("target", i);
    char pbuf[32];
    std::snprintf(pbuf, sizeof pbuf, "target-p%05d", i);
    s.patient_id = pbuf;  // one patient per sample, mirroring the cohort
    s.image = render_scene(scene, geometry, rng);
    double ge = kGeographicExtendMax * std::min(1.0, scene.coverage / kCoverageScale);
    double op = kOpacityMax * std::min(1.0, scene.mean_amp);
    if (noise_sd > 0.0) {
      ge += noise_sd * kGeographicExtendMax * label_noise(rng);
      op += noise_sd * kOpacityMax * label_noise(rng);
      ge = std::clamp(ge, 0.0, kGeographicExtendMax);
      op = std::clamp(op, 0.0, kOpacityMax);
    }
    s.labels = {ge, op};
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::string dataset_meta_json(const Dataset& ds, std::uint64_t seed, int n_samples,
                              const ImageGeometry& geometry, double noise_sd) {
  json j;
  j["kind"] = to_string(ds.kind);
  j["generator"] = "blobs-v1";
  j["seed"] = seed;
  j["n_samples"] = n_samples;
  j["geometry"] = {geometry.channels, geometry.height, geometry.width};
  if (ds.kind == DatasetKind::Target) {
    j["noise_sd"] = noise_sd;
    j["score_ranges"]["geographic_extend"] = {ds.score_ranges[0].lo, ds.score_ranges[0].hi};
    j["score_ranges"]["opacity"] = {ds.score_ranges[1].lo, ds.score_ranges[1].hi};
  }
  return j.dump(2);
}

}  // namespace hca
