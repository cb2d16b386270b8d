#include "cytocap/embeddings.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "binary_io.hpp"
#include "cytocap/errors.hpp"
#include "cytocap/random.hpp"

namespace cytocap {

namespace detail {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace detail

namespace {

std::vector<float> random_unit(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> n;
  std::vector<double> v(dim);
  double norm = 0;
  while (norm < 1e-12) {
    norm = 0;
    for (auto& x : v) {
      x = n(rng);
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Appends centroids to `placed` until it holds `total`, each separated from all
// others by at least the angle whose cosine is max_cos.
void place_centroids(std::vector<std::vector<float>>& placed, std::size_t total, std::size_t dim, double max_cos,
                     Rng& rng, std::size_t max_attempts) {
  std::size_t attempts = 0;
  while (placed.size() < total) {
    if (attempts++ >= max_attempts) {
      throw PreconditionError("could not place " + std::to_string(total) + " centroids in dim " +
                              std::to_string(dim) + " at the requested separation after " +
                              std::to_string(max_attempts) + " attempts");
    }
    auto c = random_unit(rng, dim);
    bool ok = true;
    for (const auto& p : placed) {
      if (dot(c, p) > max_cos + 1e-9) {
        ok = false;
        break;
      }
    }
    if (ok) placed.push_back(std::move(c));
  }
}

}  // namespace

std::vector<AreaProfile> synth_areas(std::size_t num_areas, std::size_t dim, double min_angle_deg,
                                     std::uint64_t seed, std::size_t max_attempts) {
  if (num_areas < 2) throw PreconditionError("synth_areas needs at least 2 areas");
  if (dim < 1) throw PreconditionError("synth_areas needs dim >= 1");
  if (min_angle_deg < 0 || min_angle_deg > 180) throw PreconditionError("min angle must be in [0, 180] degrees");
  const double max_cos = std::cos(min_angle_deg * std::numbers::pi / 180.0);
  Rng rng(derive_seed(seed, 0xA7EA));
  std::vector<std::vector<float>> placed;
  place_centroids(placed, num_areas, dim, max_cos, rng, max_attempts);
  std::vector<AreaProfile> out;
  for (std::size_t i = 0; i < num_areas; ++i) out.push_back({area(i), std::move(placed[i]), 0.0});
  return out;
}

std::vector<EmbeddingRecord> synth_embeddings(const std::vector<AreaProfile>& profiles, std::size_t n_per_area,
                                              double sigma, std::uint64_t seed) {
  if (!(sigma >= 0)) throw PreconditionError("sigma must be >= 0");
  std::vector<EmbeddingRecord> out;
  out.reserve(profiles.size() * n_per_area);
  for (std::size_t a = 0; a < profiles.size(); ++a) {
    Rng rng(derive_seed(seed, a));
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto& p = profiles[a];
    for (std::size_t n = 0; n < n_per_area; ++n) {
      EmbeddingRecord r;
      r.patch_id = "p" + std::to_string(index_of(p.area)) + "-" + std::to_string(n);
      r.vector.resize(p.centroid.size());
      for (std::size_t i = 0; i < p.centroid.size(); ++i) {
        r.vector[i] = sigma == 0 ? p.centroid[i] : static_cast<float>(p.centroid[i] + sigma * noise(rng));
      }
      r.true_area = p.area;
      out.push_back(std::move(r));
    }
  }
  return out;
}

ClassifierStandIn::ClassifierStandIn(std::vector<std::vector<float>> centroids, std::vector<AreaId> class_to_area)
    : centroids_(std::move(centroids)), class_to_area_(std::move(class_to_area)) {
  if (centroids_.empty()) throw PreconditionError("classifier needs at least one centroid");
  if (centroids_.size() != class_to_area_.size()) {
    throw PreconditionError("classifier centroid count does not match class mapping");
  }
  for (const auto& c : centroids_) {
    if (c.size() != centroids_[0].size()) throw ShapeError("classifier centroids differ in dimension");
  }
  for (AreaId a : class_to_area_) {
    if (a == AreaId::None) throw PreconditionError("classifier classes must map to a target area or Unknown");
  }
}

ClassifierStandIn ClassifierStandIn::from_profiles(const std::vector<AreaProfile>& targets, std::size_t num_classes,
                                                   double min_angle_deg, std::uint64_t seed) {
  if (num_classes < targets.size()) throw PreconditionError("num_classes must be >= number of target areas");
  std::vector<std::vector<float>> centroids;
  std::vector<AreaId> mapping;
  for (const auto& p : targets) {
    centroids.push_back(p.centroid);
    mapping.push_back(p.area);
  }
  if (targets.empty()) throw PreconditionError("classifier needs target profiles");
  Rng rng(derive_seed(seed, 0xC1A55));
  place_centroids(centroids, num_classes, targets[0].centroid.size(),
                  std::cos(min_angle_deg * std::numbers::pi / 180.0), rng, 200000);
  mapping.resize(num_classes, AreaId::Unknown);
  return ClassifierStandIn(std::move(centroids), std::move(mapping));
}

std::size_t ClassifierStandIn::num_targets() const {
  std::size_t n = 0;
  for (AreaId a : class_to_area_) n += is_target(a);
  return n;
}

std::size_t ClassifierStandIn::nearest_class(std::span<const float> v) const {
  if (v.size() != dim()) {
    throw ShapeError("embedding dim " + std::to_string(v.size()) + " does not match classifier dim " +
                     std::to_string(dim()));
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids_.size(); ++c) {
    double d = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double diff = static_cast<double>(v[i]) - centroids_[c][i];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

AreaId classify(const EmbeddingRecord& record, const ClassifierStandIn& classifier) {
  return classifier.class_to_area()[classifier.nearest_class(record.vector)];
}

void assign_weak_labels(std::vector<EmbeddingRecord>& records, const ClassifierStandIn& classifier) {
  for (auto& r : records) r.weak_label = classify(r, classifier);
}

std::vector<std::uint8_t> encode_embeddings(const std::vector<EmbeddingRecord>& records) {
  detail::ByteWriter w;
  const std::size_t dim = records.empty() ? 0 : records[0].vector.size();
  w.tag("CCEM");
  w.put<std::uint16_t>(kCcemVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
  for (const auto& r : records) {
    if (r.vector.size() != dim) throw ShapeError("records differ in embedding dimension");
    w.str16(r.patch_id);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(r.weak_label));
    w.floats(r.vector);
  }
  return std::move(w.buffer());
}

std::vector<EmbeddingRecord> decode_embeddings(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4, "magic") != "CCEM") throw FormatError("bad magic, expected CCEM", 0);
  const auto version_at = r.offset();
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCcemVersion) throw FormatError("unsupported CCEM version " + std::to_string(version), version_at);
  const auto count = r.get<std::uint32_t>("record count");
  const auto dim = r.get<std::uint32_t>("dimension");
  std::vector<EmbeddingRecord> out;
  out.reserve(std::min<std::size_t>(count, r.remaining() / (4 + 4 * std::max<std::size_t>(dim, 1)) + 1));
  for (std::uint32_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.patch_id = r.str16("patch id");
    const auto label_at = r.offset();
    const auto code = r.get<std::uint16_t>("label code");
    rec.weak_label = static_cast<AreaId>(code);
    if (code >= 0xF000 && !(rec.weak_label == AreaId::Unknown || rec.weak_label == AreaId::None)) {
      throw FormatError("invalid label code " + std::to_string(code), label_at);
    }
    rec.vector.resize(dim);
    r.floats(rec.vector, "embedding vector");
    out.push_back(std::move(rec));
  }
  if (!r.done()) throw FormatError("trailing bytes after last record", r.offset());
  return out;
}

void save_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path) {
  detail::write_file_bytes(path.string(), encode_embeddings(records));
}

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(detail::read_file_bytes(path.string()));
}

}  // namespace cytocap
