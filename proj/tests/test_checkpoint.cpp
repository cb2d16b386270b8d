#include <algorithm>
#include <cstring>
#include <filesystem>

#include "cytocap/checkpoint.hpp"
#include "cytocap/errors.hpp"
#include "cytocap/hash.hpp"
#include "cytocap/training.hpp"
#include "doctest.h"

using namespace cytocap;

namespace {

Checkpoint small_checkpoint() {
  Vocab vocab = build_vocab({"layer four is thin", "area one shows layer two"});
  LmConfig lc;
  lc.vocab_size = vocab.size();
  lc.hidden_dim = 8;
  lc.num_blocks = 4;
  lc.num_heads = 2;
  lc.max_seq_len = 16;
  lc.seed = 4;
  AdapterConfig ac;
  ac.embedding_dim = 3;
  ac.proj_hidden_dim = 6;
  ac.num_vision_tokens = 2;
  ac.insert_every = 2;
  ac.ffn_mult = 2;
  ac.seed = 5;
  return initial_checkpoint(vocab, init_lm(lc), ac);
}

SequenceExample example() {
  return {"e0", {0.3f, -0.2f, 0.9f}, {0, 5, 6, 7}, {5, 6, 7, 1}, {0, 1, 1, 1}};
}

bool same_values(const Checkpoint& a, const Checkpoint& b) {
  return encode_lm_weights(a.lm) == encode_lm_weights(b.lm) &&
         adapter_weight_hash(a.adapter) == adapter_weight_hash(b.adapter) && a.vocab.tokens() == b.vocab.tokens() &&
         a.train_state == b.train_state && a.optimizer.step == b.optimizer.step;
}

std::uint32_t u32_at(const std::vector<std::uint8_t>& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

}  // namespace

TEST_CASE("checkpoint roundtrip") {
  Checkpoint ckpt = small_checkpoint();
  const auto ex = example();
  const SequenceExample* batch[] = {&ex};
  TrainConfig tc;
  train_step(ckpt, batch, tc);
  ckpt.train_state["epoch"] = 1;
  const auto bytes = encode_checkpoint(ckpt);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(same_values(ckpt, back));
  CHECK(back.lm.config == ckpt.lm.config);
  CHECK(back.adapter.config == ckpt.adapter.config);
  CHECK(back.optimizer.step == 1);
  CHECK(back.optimizer.m.size() == ckpt.optimizer.m.size());
  for (const auto& [name, m] : ckpt.optimizer.m) CHECK(std::ranges::equal(back.optimizer.m.at(name).values(), m.values()));
  CHECK(encode_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "cytocap_ckpt.cclm";
  save_checkpoint(ckpt, path);
  CHECK(same_values(load_checkpoint(path), ckpt));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint layout walked independently") {
  const auto bytes = encode_checkpoint(small_checkpoint());
  REQUIRE(bytes.size() > 10);
  CHECK(std::memcmp(bytes.data(), "CCLM", 4) == 0);
  CHECK((bytes[4] | (bytes[5] << 8)) == kCclmVersion);
  std::size_t at = 6;
  const std::uint32_t header_len = u32_at(bytes, at);
  at += 4 + header_len;
  std::vector<std::string> tags;
  while (at < bytes.size()) {
    tags.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(at), bytes.begin() + static_cast<std::ptrdiff_t>(at + 4));
    std::uint64_t len = 0;
    for (int i = 7; i >= 0; --i) len = (len << 8) | bytes[at + 4 + static_cast<std::size_t>(i)];
    at += 12 + len;
  }
  CHECK(at == bytes.size());
  CHECK(tags == std::vector<std::string>{"VOCB", "LMWT", "ADPT"});
}

TEST_CASE("training touches only the adapter section") {
  Checkpoint ckpt = small_checkpoint();
  const auto before = read_sections(encode_checkpoint(ckpt));
  const std::string lm_hash = lm_weight_hash(ckpt.lm);
  const auto ex = example();
  const SequenceExample* batch[] = {&ex};
  for (int i = 0; i < 3; ++i) train_step(ckpt, batch, TrainConfig{});
  const auto after = read_sections(encode_checkpoint(ckpt));
  REQUIRE(before.size() == 3);
  REQUIRE(after.size() == 3);
  CHECK(before[0] == after[0]);
  CHECK(before[1] == after[1]);
  CHECK(before[2].second != after[2].second);
  CHECK(lm_weight_hash(ckpt.lm) == lm_hash);
  CHECK(lm_hash == sha256_hex(std::span<const unsigned char>(before[1].second)));
}

TEST_CASE("checkpoint malformed input") {
  const auto good = encode_checkpoint(small_checkpoint());
  // every truncation point inside the header and the first sections, then a stride
  for (std::size_t len = 0; len < good.size(); len += (len < 400 ? 1 : 97)) {
    const std::vector<std::uint8_t> cut(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(len));
    CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);
  }
  auto bad = good;
  bad[1] = 'X';
  try {
    decode_checkpoint(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == 0);
  }
  bad = good;
  bad[4] = 7;
  try {
    decode_checkpoint(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == 4);
  }
  auto trailing = good;
  trailing.insert(trailing.end(), {'X', 'Y'});
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
  CHECK_THROWS_AS(load_checkpoint(std::filesystem::temp_directory_path() / "cytocap_missing.cclm"), Error);
}
