#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cytocap/lexicon.hpp"

namespace cytocap {

struct AreaProfile {
  AreaId area;
  std::vector<float> centroid;  // unit norm
  double noise_sigma = 0.0;
};

struct EmbeddingRecord {
  std::string patch_id;
  std::vector<float> vector;
  AreaId true_area = AreaId::None;   // generator truth; not persisted
  AreaId weak_label = AreaId::None;  // classifier output (None = unset)

  bool operator==(const EmbeddingRecord&) const = default;
};

// Rejection-sampled unit centroids with every pairwise angle >= min_angle_deg.
// Throws PreconditionError when no placement is found within max_attempts.
std::vector<AreaProfile> synth_areas(std::size_t num_areas, std::size_t dim, double min_angle_deg,
                                     std::uint64_t seed, std::size_t max_attempts = 200000);

// centroid + N(0, sigma^2 I); patch ids are "p<area>-<n>", area-major order.
std::vector<EmbeddingRecord> synth_embeddings(const std::vector<AreaProfile>& profiles, std::size_t n_per_area,
                                              double sigma, std::uint64_t seed);

// Nearest-centroid stand-in for the area classifier: `num_classes` centroids of
// which the first `num_targets` map to target areas, the rest to Unknown.
class ClassifierStandIn {
 public:
  ClassifierStandIn(std::vector<std::vector<float>> centroids, std::vector<AreaId> class_to_area);

  // Target centroids are the given profiles (area order); the remaining
  // classes are additional sampled centroids respecting the same separation.
  static ClassifierStandIn from_profiles(const std::vector<AreaProfile>& targets, std::size_t num_classes,
                                         double min_angle_deg, std::uint64_t seed);

  std::size_t num_classes() const noexcept { return centroids_.size(); }
  std::size_t num_targets() const;
  std::size_t dim() const noexcept { return centroids_.empty() ? 0 : centroids_[0].size(); }
  const std::vector<std::vector<float>>& centroids() const noexcept { return centroids_; }
  const std::vector<AreaId>& class_to_area() const noexcept { return class_to_area_; }

  // Index of the nearest centroid (squared Euclidean); ties to the lowest id.
  std::size_t nearest_class(std::span<const float> v) const;

 private:
  std::vector<std::vector<float>> centroids_;
  std::vector<AreaId> class_to_area_;
};

AreaId classify(const EmbeddingRecord& record, const ClassifierStandIn& classifier);
void assign_weak_labels(std::vector<EmbeddingRecord>& records, const ClassifierStandIn& classifier);

// "CCEM" container: magic, u16 version, u32 count, u32 dim, then per record
// u16 id length + id bytes, u16 label code, dim little-endian f32.
inline constexpr std::uint16_t kCcemVersion = 1;
void save_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path);
std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_embeddings(const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> decode_embeddings(std::span<const std::uint8_t> bytes);

}  // namespace cytocap
