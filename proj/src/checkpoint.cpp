#include "cytocap/checkpoint.hpp"

#include "binary_io.hpp"
#include "cytocap/errors.hpp"
#include "cytocap/hash.hpp"

namespace cytocap {

using nlohmann::json;

json to_json(const LmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"hidden_dim", c.hidden_dim}, {"num_blocks", c.num_blocks},
          {"num_heads", c.num_heads},   {"max_seq_len", c.max_seq_len}, {"mlp_ratio", c.mlp_ratio},
          {"seed", c.seed}};
}

json to_json(const AdapterConfig& c) {
  return {{"embedding_dim", c.embedding_dim}, {"num_vision_tokens", c.num_vision_tokens},
          {"insert_every", c.insert_every},   {"proj_hidden_dim", c.proj_hidden_dim},
          {"num_heads", c.num_heads},         {"ffn_mult", c.ffn_mult},
          {"gate_init", c.gate_init},         {"seed", c.seed}};
}

LmConfig lm_config_from_json(const json& j) {
  LmConfig c;
  c.vocab_size = j.at("vocab_size");
  c.hidden_dim = j.at("hidden_dim");
  c.num_blocks = j.at("num_blocks");
  c.num_heads = j.at("num_heads");
  c.max_seq_len = j.at("max_seq_len");
  c.mlp_ratio = j.at("mlp_ratio");
  c.seed = j.at("seed");
  return c;
}

AdapterConfig adapter_config_from_json(const json& j) {
  AdapterConfig c;
  c.embedding_dim = j.at("embedding_dim");
  c.num_vision_tokens = j.at("num_vision_tokens");
  c.insert_every = j.at("insert_every");
  c.proj_hidden_dim = j.at("proj_hidden_dim");
  c.num_heads = j.at("num_heads");
  c.ffn_mult = j.at("ffn_mult");
  c.gate_init = j.at("gate_init");
  c.seed = j.at("seed");
  return c;
}

namespace {

void write_tensor(detail::ByteWriter& w, const std::string& name, const Tensor<float>& t) {
  w.str16(name);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.floats(t.values());
}

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

NamedTensor read_tensor(detail::ByteReader& r) {
  NamedTensor out;
  out.name = r.str16("tensor name");
  const auto rank_at = r.offset();
  const auto rank = r.get<std::uint8_t>("tensor rank");
  if (rank == 0 || rank > 4) throw FormatError("invalid tensor rank " + std::to_string(rank), rank_at);
  Shape shape;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const auto d_at = r.offset();
    const auto d = r.get<std::uint32_t>("tensor dimension");
    if (d == 0) throw FormatError("zero tensor dimension", d_at);
    shape.push_back(d);
  }
  r.need(shape_size(shape) * sizeof(float), "tensor data");
  out.value = Tensor<float>(shape);
  r.floats(out.value.values(), "tensor data");
  return out;
}

template <typename Weights>
void fill_params(Weights& w, std::map<std::string, Tensor<float>>& tensors, const char* section) {
  w.for_each_param([&](Param<float>& p) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw FormatError(std::string(section) + " section lacks tensor " + p.name, 0);
    if (it->second.shape() != p.value.shape()) {
      throw FormatError(std::string(section) + " tensor " + p.name + " has shape " + shape_str(it->second.shape()) +
                            ", expected " + shape_str(p.value.shape()),
                        0);
    }
    p.value = std::move(it->second);
    tensors.erase(it);
  });
  if (!tensors.empty()) {
    throw FormatError(std::string(section) + " section has unexpected tensor " + tensors.begin()->first, 0);
  }
}

template <typename Weights>
std::vector<std::uint8_t> encode_params(const Weights& w) {
  detail::ByteWriter out;
  std::uint32_t count = 0;
  w.for_each_param([&](const Param<float>&) { ++count; });
  out.put<std::uint32_t>(count);
  w.for_each_param([&](const Param<float>& p) { write_tensor(out, p.name, p.value); });
  return std::move(out.buffer());
}

std::vector<std::uint8_t> encode_adapter_section(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  auto params = encode_params(ckpt.adapter);
  w.bytes(params.data(), params.size());
  w.put<std::uint64_t>(ckpt.optimizer.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.optimizer.m.size()));
  for (const auto& [name, t] : ckpt.optimizer.m) {
    auto v = ckpt.optimizer.v.find(name);
    if (v == ckpt.optimizer.v.end()) throw StateError("optimizer state lacks second moment for " + name);
    write_tensor(w, name, t);
    write_tensor(w, name, v->second);
  }
  w.str32(ckpt.train_state.dump());
  return std::move(w.buffer());
}

std::map<std::string, Tensor<float>> read_tensor_list(detail::ByteReader& r) {
  std::map<std::string, Tensor<float>> out;
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    auto t = read_tensor(r);
    if (!out.emplace(t.name, std::move(t.value)).second) throw FormatError("duplicate tensor " + t.name, at);
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_lm_weights(const LmWeights<float>& lm) { return encode_params(lm); }

std::string lm_weight_hash(const LmWeights<float>& lm) {
  const auto bytes = encode_lm_weights(lm);
  return sha256_hex(std::span<const unsigned char>(bytes));
}

std::string adapter_weight_hash(const AdapterWeights<float>& adapter) {
  const auto bytes = encode_params(adapter);
  return sha256_hex(std::span<const unsigned char>(bytes));
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.tag("CCLM");
  w.put<std::uint16_t>(kCclmVersion);
  const json header = {{"lm", to_json(ckpt.lm.config)}, {"adapter", to_json(ckpt.adapter.config)}};
  w.str32(header.dump());
  auto section = [&](std::string_view tag, const std::vector<std::uint8_t>& payload) {
    w.tag(tag);
    w.put<std::uint64_t>(payload.size());
    w.bytes(payload.data(), payload.size());
  };
  const std::string vocab = ckpt.vocab.to_json();
  section("VOCB", std::vector<std::uint8_t>(vocab.begin(), vocab.end()));
  section("LMWT", encode_lm_weights(ckpt.lm));
  section("ADPT", encode_adapter_section(ckpt));
  return std::move(w.buffer());
}

namespace {

struct RawSection {
  std::string tag;
  std::span<const std::uint8_t> payload;
  std::size_t offset;
};

std::vector<RawSection> split_sections(std::span<const std::uint8_t> bytes, json* header) {
  detail::ByteReader r(bytes);
  if (r.raw(4, "magic") != "CCLM") throw FormatError("bad magic, expected CCLM", 0);
  const auto version_at = r.offset();
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCclmVersion) throw FormatError("unsupported CCLM version " + std::to_string(version), version_at);
  const auto header_at = r.offset();
  const std::string header_text = r.str32("header");
  if (header) {
    try {
      *header = json::parse(header_text);
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed header JSON: ") + e.what(), header_at);
    }
  }
  std::vector<RawSection> out;
  while (!r.done()) {
    const std::string tag = r.raw(4, "section tag");
    const auto len = r.get<std::uint64_t>("section length");
    const auto at = r.offset();
    if (len > r.remaining()) throw FormatError("truncated section " + tag, at);
    out.push_back({tag, r.span(static_cast<std::size_t>(len), "section payload"), at});
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::vector<std::uint8_t>>> read_sections(std::span<const std::uint8_t> bytes) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> out;
  for (const auto& s : split_sections(bytes, nullptr)) out.emplace_back(s.tag, std::vector(s.payload.begin(), s.payload.end()));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  json header;
  auto sections = split_sections(bytes, &header);
  Checkpoint ckpt;
  LmConfig lm_config;
  AdapterConfig adapter_config;
  try {
    lm_config = lm_config_from_json(header.at("lm"));
    adapter_config = adapter_config_from_json(header.at("adapter"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("header lacks model configuration: ") + e.what(), 10);
  }
  bool have_vocab = false, have_lm = false, have_adapter = false;
  for (const auto& s : sections) {
    detail::ByteReader r(s.payload, s.offset);
    if (s.tag == "VOCB") {
      ckpt.vocab = Vocab::from_json(std::string(s.payload.begin(), s.payload.end()));
      have_vocab = true;
    } else if (s.tag == "LMWT") {
      ckpt.lm = init_lm(lm_config);
      auto tensors = read_tensor_list(r);
      fill_params(ckpt.lm, tensors, "LMWT");
      have_lm = true;
    } else if (s.tag == "ADPT") {
      ckpt.adapter = init_adapter(adapter_config, lm_config);
      auto tensors = read_tensor_list(r);
      fill_params(ckpt.adapter, tensors, "ADPT");
      ckpt.optimizer.step = r.get<std::uint64_t>("optimizer step");
      const auto n = r.get<std::uint32_t>("moment count");
      for (std::uint32_t i = 0; i < n; ++i) {
        auto m = read_tensor(r);
        auto v = read_tensor(r);
        ckpt.optimizer.m.emplace(m.name, std::move(m.value));
        ckpt.optimizer.v.emplace(v.name, std::move(v.value));
      }
      const auto state_at = r.offset();
      try {
        ckpt.train_state = json::parse(r.str32("train state"));
      } catch (const json::exception& e) {
        throw FormatError(std::string("malformed train state: ") + e.what(), state_at);
      }
      have_adapter = true;
    }
    if (s.tag == "LMWT" || s.tag == "ADPT") {
      if (!r.done()) throw FormatError("trailing bytes in section " + s.tag, r.offset());
    }
  }
  if (!have_vocab || !have_lm || !have_adapter) {
    throw FormatError("checkpoint lacks a required section (VOCB, LMWT, ADPT)", bytes.size());
  }
  if (ckpt.vocab.size() != lm_config.vocab_size) {
    throw FormatError("vocabulary size does not match LM configuration", 0);
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  detail::write_file_bytes(path.string(), encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file_bytes(path.string()));
}

}  // namespace cytocap
