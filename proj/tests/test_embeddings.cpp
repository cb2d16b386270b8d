#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "cytocap/embeddings.hpp"
#include "cytocap/errors.hpp"
#include "doctest.h"

using namespace cytocap;

namespace {

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("synth_areas separation") {
  const auto profiles = synth_areas(16, 64, 60.0, 5);
  REQUIRE(profiles.size() == 16);
  const double max_cos = std::cos(60.0 * std::numbers::pi / 180.0);
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    CHECK(profiles[i].area == area(i));
    CHECK(profiles[i].centroid.size() == 64);
    CHECK(dot(profiles[i].centroid, profiles[i].centroid) == doctest::Approx(1.0).epsilon(1e-5));
    for (std::size_t j = i + 1; j < profiles.size(); ++j) {
      CHECK(dot(profiles[i].centroid, profiles[j].centroid) <= max_cos + 1e-6);
    }
  }
  CHECK(synth_areas(16, 64, 60.0, 5)[3].centroid == profiles[3].centroid);
  CHECK(synth_areas(16, 64, 60.0, 6)[3].centroid != profiles[3].centroid);
}

TEST_CASE("synth_areas infeasible") {
  // at most 6 unit vectors in the plane are 60 degrees apart
  CHECK_THROWS_AS(synth_areas(7, 2, 61.0, 1, 2000), PreconditionError);
}

TEST_CASE("synth_embeddings") {
  const auto profiles = synth_areas(3, 32, 60.0, 2);
  SUBCASE("sigma zero gives centroids") {
    const auto recs = synth_embeddings(profiles, 4, 0.0, 9);
    REQUIRE(recs.size() == 12);
    CHECK(recs[5].patch_id == "p1-1");
    CHECK(recs[5].vector == profiles[1].centroid);
    CHECK(recs[5].true_area == area(1));
    CHECK(recs[5].weak_label == AreaId::None);
  }
  SUBCASE("noise scale") {
    const double sigma = 0.1;
    const auto recs = synth_embeddings(profiles, 500, sigma, 9);
    double ss = 0;
    std::size_t n = 0;
    for (const auto& r : recs) {
      const auto& c = profiles[index_of(r.true_area)].centroid;
      for (std::size_t i = 0; i < c.size(); ++i) {
        const double d = r.vector[i] - c[i];
        ss += d * d;
        ++n;
      }
    }
    CHECK(std::sqrt(ss / static_cast<double>(n)) == doctest::Approx(sigma).epsilon(0.02));
  }
  CHECK(synth_embeddings(profiles, 3, 0.1, 4) == synth_embeddings(profiles, 3, 0.1, 4));
  CHECK_THROWS_AS(synth_embeddings(profiles, 3, -1.0, 4), PreconditionError);
}

TEST_CASE("classifier nearest centroid") {
  ClassifierStandIn clf({{0, 0}, {2, 0}, {0, 2}}, {area(0), area(1), AreaId::Unknown});
  CHECK(clf.num_classes() == 3);
  CHECK(clf.num_targets() == 2);
  CHECK(clf.nearest_class(std::vector<float>{1.8f, 0.1f}) == 1);
  CHECK(clf.nearest_class(std::vector<float>{1.0f, 0.0f}) == 0);  // tie
  CHECK(clf.nearest_class(std::vector<float>{1.0f, 1.0f}) == 0);  // three-way tie
  EmbeddingRecord r{"x", {0.2f, 1.9f}, AreaId::None, AreaId::None};
  CHECK(classify(r, clf) == AreaId::Unknown);
  CHECK_THROWS_AS(clf.nearest_class(std::vector<float>{1.0f}), ShapeError);
  CHECK_THROWS_AS(ClassifierStandIn({{0, 0}}, {AreaId::None}), PreconditionError);
  CHECK_THROWS_AS(ClassifierStandIn({{0, 0}, {1}}, {area(0), area(1)}), ShapeError);
}

TEST_CASE("classifier recovers generator areas") {
  const auto profiles = synth_areas(8, 64, 60.0, 1);
  const auto clf = ClassifierStandIn::from_profiles(profiles, 20, 60.0, 3);
  CHECK(clf.num_classes() == 20);
  CHECK(clf.num_targets() == 8);
  const double max_cos = std::cos(60.0 * std::numbers::pi / 180.0);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = i + 1; j < 20; ++j) CHECK(dot(clf.centroids()[i], clf.centroids()[j]) <= max_cos + 1e-6);
  auto recs = synth_embeddings(profiles, 200, 0.1, 8);
  assign_weak_labels(recs, clf);
  std::size_t agree = 0;
  for (const auto& r : recs) agree += r.weak_label == r.true_area;
  CHECK(agree >= recs.size() * 99 / 100);
}

TEST_CASE("CCEM roundtrip") {
  auto recs = synth_embeddings(synth_areas(2, 5, 60.0, 1), 3, 0.2, 2);
  recs[0].weak_label = area(1);
  recs[1].weak_label = AreaId::Unknown;
  const auto bytes = encode_embeddings(recs);
  CHECK(bytes.size() == 4 + 2 + 4 + 4 + 6 * (2 + 4 + 2 + 5 * 4));
  auto back = decode_embeddings(bytes);
  for (auto& r : recs) r.true_area = AreaId::None;
  CHECK(back == recs);

  const auto path = std::filesystem::temp_directory_path() / "cytocap_roundtrip.ccem";
  save_embeddings(recs, path);
  CHECK(load_embeddings(path) == recs);
  std::filesystem::remove(path);
  CHECK(decode_embeddings(encode_embeddings({})).empty());
}

TEST_CASE("CCEM independent writer fixture") {
  const auto recs = load_embeddings(std::filesystem::path(CYTOCAP_FIXTURES_DIR) / "ccem" / "sample.ccem");
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].patch_id == "p0-0");
  CHECK(recs[0].weak_label == area(0));
  CHECK(recs[0].vector == std::vector<float>{0.5f, -1.25f, 3.0f});
  CHECK(recs[1].patch_id == "p2-17");
  CHECK(recs[1].weak_label == area(2));
  CHECK(recs[1].vector == std::vector<float>{1e-3f, 0.0f, -7.5f});
  CHECK(recs[2].weak_label == AreaId::Unknown);
  CHECK(encode_embeddings(recs) == read_all(std::filesystem::path(CYTOCAP_FIXTURES_DIR) / "ccem" / "sample.ccem"));
}

TEST_CASE("CCEM malformed input") {
  auto recs = synth_embeddings(synth_areas(2, 3, 60.0, 1), 2, 0.2, 2);
  const auto good = encode_embeddings(recs);
  for (std::size_t len = 0; len < good.size(); ++len) {
    const std::vector<std::uint8_t> cut(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(len));
    CHECK_THROWS_AS(decode_embeddings(cut), FormatError);
  }
  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_embeddings(bad_magic), FormatError);

  auto bad_version = good;
  bad_version[4] = 9;
  try {
    decode_embeddings(bad_version);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == 4);
  }

  auto trailing = good;
  trailing.push_back(0);
  try {
    decode_embeddings(trailing);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == good.size());
  }

  auto bad_label = good;
  const std::size_t label_at = 14 + 2 + recs[0].patch_id.size();
  bad_label[label_at] = 0x00;
  bad_label[label_at + 1] = 0xF1;
  try {
    decode_embeddings(bad_label);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == label_at);
  }
}
