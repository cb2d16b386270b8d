#include "cytocap/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cytocap/captions.hpp"
#include "cytocap/checkpoint.hpp"
#include "cytocap/corpus.hpp"
#include "cytocap/dataset.hpp"
#include "cytocap/embeddings.hpp"
#include "cytocap/errors.hpp"
#include "cytocap/evaluation.hpp"
#include "cytocap/qa_bench.hpp"
#include "cytocap/random.hpp"
#include "cytocap/text.hpp"
#include "cytocap/training.hpp"

namespace cytocap {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Salt : std::uint64_t {
  kSaltAreas = 1,
  kSaltTargets,
  kSaltOthers,
  kSaltPairs,
  kSaltSplit,
  kSaltLm,
  kSaltAdapter,
  kSaltTrain,
  kSaltEval,
  kSaltQaGen,
  kSaltQaShuffle,
  kSaltAnswerer,
  kSaltLlm,
  kSaltPretrain,
};

std::uint64_t seed_for(const RunConfig& c, Salt salt) { return derive_seed(c.u64("run.seed"), salt); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void log(const char* stage, const std::string& msg) { std::fprintf(stderr, "[%s] %s\n", stage, msg.c_str()); }

fs::path out_path(const RunConfig& c, const char* name) { return c.path("run.out") / name; }

void ensure_out_dir(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.path("run.out"), ec);
  if (ec) throw ValidationError("cannot create output directory '" + c.str("run.out") + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_jsonl(const fs::path& path, const json& header, const std::vector<std::string>& lines) {
  std::string out = json{{"_header", header}}.dump() + "\n";
  for (const auto& l : lines) out += l + "\n";
  write_text(path, out);
}

void require_file(const fs::path& path, const std::string& what, const std::string& hint) {
  if (!fs::is_regular_file(path)) {
    throw ValidationError(what + " not found at '" + path.string() + "'" + (hint.empty() ? "" : "; " + hint));
  }
}

void require_output(const RunConfig& c, const char* name, const char* producer) {
  require_file(out_path(c, name), name, std::string("run `cytocap ") + producer + "` first");
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

json read_checked_json(const fs::path& path, const RunConfig& c, const std::string& stage) {
  json j = read_json(path);
  check_header(j.value("_header", json()), c, stage, path);
  return j;
}

std::vector<std::string> read_checked_jsonl(const fs::path& path, const RunConfig& c, const std::string& stage) {
  std::istringstream in(read_text(path));
  std::string first;
  std::getline(in, first);
  json header;
  try {
    header = json::parse(first).value("_header", json());
  } catch (const json::parse_error&) {
  }
  check_header(header, c, stage, path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);)
    if (!text::trim(l).empty()) lines.push_back(l);
  return lines;
}

LabelLexicon lexicon_for(const RunConfig& c) {
  const std::size_t n = c.size("run.areas");
  if (n < 1 || n > LabelLexicon::standard().size()) {
    throw ValidationError("run.areas must be between 1 and " + std::to_string(LabelLexicon::standard().size()));
  }
  return LabelLexicon::first_n(n);
}

std::vector<std::string> read_seed_ids(const fs::path& path) {
  std::vector<std::string> ids;
  std::istringstream in(read_text(path));
  for (std::string l; std::getline(in, l);) {
    l = text::trim(l);
    if (!l.empty() && l[0] != '#') ids.push_back(l);
  }
  return ids;
}

std::vector<Statement> load_statements(const RunConfig& c) {
  const auto path = out_path(c, files::kStatements);
  std::vector<Statement> out;
  for (const auto& l : read_checked_jsonl(path, c, "distill")) {
    try {
      out.push_back(statement_from_json(l, LabelLexicon::standard()));
    } catch (const Error& e) {
      throw ValidationError("'" + path.string() + "': " + e.what());
    }
  }
  return out;
}

// Pool restricted to the configured areas; statements naming any other area
// of the full lexicon are dropped.
StatementPool load_pool(const RunConfig& c, const LabelLexicon& lex) {
  const auto full = filter_foreign_mentions(build_pool(load_statements(c)), LabelLexicon::standard());
  StatementPool pool;
  for (const auto& e : lex.areas()) {
    const auto it = full.find(e.id);
    pool[e.id] = it == full.end() ? std::vector<Statement>{} : it->second;
  }
  return pool;
}

std::vector<EmbeddingRecord> load_checked_embeddings(const RunConfig& c) {
  read_checked_json(out_path(c, files::kEmbeddingsMeta), c, "synth");
  try {
    return load_embeddings(out_path(c, files::kEmbeddings));
  } catch (const FormatError& e) {
    throw ValidationError(std::string("embeddings file is corrupt: ") + e.what());
  }
}

std::vector<WeakPair> load_pairs(const RunConfig& c, const char* name, const LabelLexicon& lex,
                                 const std::vector<EmbeddingRecord>& records) {
  std::map<std::string, const EmbeddingRecord*> by_id;
  for (const auto& r : records) by_id[r.patch_id] = &r;
  const auto path = out_path(c, name);
  std::vector<WeakPair> out;
  for (const auto& l : read_checked_jsonl(path, c, "pair")) {
    WeakPair p = pair_from_json(l, lex);
    const auto it = by_id.find(p.patch_id);
    if (it == by_id.end()) throw ValidationError("'" + path.string() + "' references unknown patch " + p.patch_id);
    p.embedding = it->second->vector;
    out.push_back(std::move(p));
  }
  return out;
}

LmConfig lm_config(const RunConfig& c, std::size_t vocab_size) {
  LmConfig lc;
  lc.vocab_size = vocab_size;
  lc.hidden_dim = c.size("model.hidden_dim");
  lc.num_blocks = c.size("model.blocks");
  lc.num_heads = c.size("model.heads");
  lc.max_seq_len = c.size("model.max_seq_len");
  lc.mlp_ratio = c.size("model.mlp_ratio");
  lc.seed = seed_for(c, kSaltLm);
  return lc;
}

AdapterConfig adapter_config(const RunConfig& c) {
  AdapterConfig ac;
  ac.embedding_dim = c.size("synth.dim");
  ac.num_vision_tokens = c.size("model.vision_tokens");
  ac.insert_every = c.size("model.insert_every");
  ac.proj_hidden_dim = c.size("model.proj_hidden_dim");
  ac.num_heads = c.size("model.xattn_heads");
  ac.seed = seed_for(c, kSaltAdapter);
  return ac;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig tc;
  tc.epochs = c.size("train.epochs");
  tc.learning_rate = c.real("train.lr");
  tc.batch_size = c.size("train.batch_size");
  tc.clip_norm = c.real("train.clip_norm");
  tc.threads = c.size("train.threads");
  tc.seed = seed_for(c, kSaltTrain);
  return tc;
}

template <typename F>
auto as_stage_error(const char* stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const ValidationError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const RetryableError& e) {
    throw StageError(stage, e.item_id, e.what());
  } catch (const std::exception& e) {
    throw StageError(stage, "", e.what());
  }
}

json chunk_to_json(const Chunk& ch) {
  return {{"doc_id", ch.doc_id}, {"index", ch.index}, {"begin", ch.begin}, {"end", ch.end}, {"text", ch.text}};
}

Chunk chunk_from_json(const json& j) {
  Chunk ch;
  ch.doc_id = j.at("doc_id");
  ch.index = j.at("index");
  ch.begin = j.at("begin");
  ch.end = j.at("end");
  ch.text = j.at("text");
  return ch;
}

}  // namespace

std::uint64_t qa_option_seed(const RunConfig& c, const std::string& question_id) {
  return derive_seed(seed_for(c, kSaltQaShuffle), fnv1a(question_id));
}

std::unique_ptr<TextGenerator> make_client(const RunConfig& c) {
  const std::string& mode = c.str("llm.mode");
  if (mode == "stub") return make_stub_client();
  if (mode == "http") {
    HttpClientConfig hc;
    hc.endpoint = c.str("llm.endpoint");
    hc.model = c.str("llm.model");
    hc.timeout_s = c.real("llm.timeout_s");
    hc.max_retries = static_cast<int>(c.integer("llm.max_retries"));
    hc.api_key_env = c.str("llm.api_key_env");
    hc.max_in_flight = static_cast<int>(c.integer("llm.max_in_flight"));
    try {
      return std::make_unique<HttpClient>(hc);
    } catch (const Error& e) {
      throw ValidationError(std::string("llm client: ") + e.what());
    }
  }
  throw ValidationError("llm.mode must be 'stub' or 'http', got '" + mode + "'");
}

json cmd_distill(const RunConfig& c) {
  const auto lex = lexicon_for(c);
  const fs::path dir = c.path("corpus.dir");
  if (!fs::is_directory(dir)) throw ValidationError("corpus directory not found at '" + dir.string() + "'");
  require_file(c.path("corpus.citations"), "citation TSV", "");
  require_file(c.path("corpus.seeds"), "seed list", "");
  if (c.size("corpus.chunk_chars") <= c.size("corpus.overlap_chars")) {
    throw ValidationError("corpus.chunk_chars must exceed corpus.overlap_chars");
  }
  auto client = make_client(c);
  ensure_out_dir(c);

  return as_stage_error("distill", [&] {
    const auto ingested = ingest(dir);
    for (const auto& w : ingested.warnings) log("distill", "warning: " + w);
    CitationGraph graph;
    try {
      graph = CitationGraph::load_tsv(c.path("corpus.citations"));
    } catch (const FormatError& e) {
      throw ValidationError(std::string("citation TSV: ") + e.what());
    }
    for (const auto& d : ingested.documents) graph.add_node(d.doc_id);
    const auto expanded = expand_citations(read_seed_ids(c.path("corpus.seeds")), graph, c.size("corpus.depth"));
    const std::set<std::string> reachable(expanded.begin(), expanded.end());
    std::vector<Document> docs;
    for (const auto& d : ingested.documents)
      if (reachable.contains(d.doc_id)) docs.push_back(d);

    const auto keywords = keywords_from_lexicon(lex);
    const auto per_area = keyword_filter(docs, keywords);
    std::map<std::string, const Document*> by_id;
    for (const auto& d : docs) by_id[d.doc_id] = &d;

    std::map<std::string, std::vector<Chunk>> chunks;
    for (const auto& [a, ids] : per_area)
      for (const auto& id : ids)
        if (!chunks.contains(id))
          chunks[id] = chunk(*by_id.at(id), c.size("corpus.chunk_chars"), c.size("corpus.overlap_chars"));

    StubExtractor stub;
    LlmExtractor llm(*client, seed_for(c, kSaltLlm));
    StatementExtractor& extractor = c.str("llm.mode") == "stub" ? static_cast<StatementExtractor&>(stub) : llm;
    std::vector<Statement> raw;
    std::size_t n_chunk_jobs = 0;
    for (const auto& [a, ids] : per_area) {
      for (const auto& id : ids) {
        for (const auto& ch : chunks.at(id)) {
          auto s = extract_statements(ch, a, LabelLexicon::standard(), keywords.at(a), extractor);
          raw.insert(raw.end(), s.begin(), s.end());
          ++n_chunk_jobs;
        }
      }
    }
    const auto statements = dedup_statements(raw, LabelLexicon::standard());

    std::vector<std::string> lines;
    json per_area_counts = json::object();
    for (const auto& e : lex.areas()) per_area_counts[e.canonical] = 0;
    for (const auto& s : statements) {
      lines.push_back(statement_to_json(s, LabelLexicon::standard()));
      per_area_counts[lex.name(s.area)] = per_area_counts[lex.name(s.area)].get<std::size_t>() + 1;
    }
    const json header = output_header(c, "distill");
    write_jsonl(out_path(c, files::kStatements), header, lines);
    std::vector<std::string> chunk_lines;
    std::size_t n_chunks = 0;
    for (const auto& [id, list] : chunks) {
      for (const auto& ch : list) chunk_lines.push_back(chunk_to_json(ch).dump());
      n_chunks += list.size();
    }
    write_jsonl(out_path(c, files::kChunks), header, chunk_lines);

    std::vector<std::string> empty_areas;
    for (const auto& [name, n] : per_area_counts.items())
      if (n.get<std::size_t>() == 0) empty_areas.push_back(name);
    for (const auto& name : empty_areas) log("distill", "warning: no statements for area " + name);

    json summary = {{"_header", header},
                    {"documents_ingested", ingested.documents.size()},
                    {"ingest_warnings", ingested.warnings},
                    {"documents_reachable", docs.size()},
                    {"documents_matching", chunks.size()},
                    {"chunks", n_chunks},
                    {"area_chunk_extractions", n_chunk_jobs},
                    {"raw_statements", raw.size()},
                    {"statements", statements.size()},
                    {"statements_per_area", per_area_counts},
                    {"areas_without_statements", empty_areas}};
    write_json(out_path(c, files::kDistillLog), summary);
    log("distill", std::to_string(docs.size()) + " documents, " + std::to_string(n_chunks) + " chunks, " +
                       std::to_string(statements.size()) + " statements");
    return summary;
  });
}

json cmd_synth(const RunConfig& c) {
  const auto lex = lexicon_for(c);
  const std::size_t n_targets = lex.size();
  const std::size_t classes = c.size("synth.classes");
  if (classes <= n_targets) throw ValidationError("synth.classes must exceed run.areas so unknown patches exist");
  if (c.size("synth.dim") == 0) throw ValidationError("synth.dim must be positive");
  ensure_out_dir(c);

  return as_stage_error("synth", [&] {
    std::vector<AreaProfile> profiles;
    try {
      profiles = synth_areas(classes, c.size("synth.dim"), c.real("synth.min_angle_deg"), seed_for(c, kSaltAreas));
    } catch (const PreconditionError& e) {
      throw ValidationError(std::string("synth: ") + e.what());
    }
    const double sigma = c.real("synth.sigma");
    std::vector<AreaProfile> targets(profiles.begin(), profiles.begin() + static_cast<std::ptrdiff_t>(n_targets));
    std::vector<AreaProfile> others(profiles.begin() + static_cast<std::ptrdiff_t>(n_targets), profiles.end());
    auto records = synth_embeddings(targets, c.size("synth.patches_per_area"), sigma, seed_for(c, kSaltTargets));
    auto extra = synth_embeddings(others, c.size("synth.patches_per_other_class"), sigma, seed_for(c, kSaltOthers));
    records.insert(records.end(), extra.begin(), extra.end());

    std::vector<std::vector<float>> centroids;
    std::vector<AreaId> class_to_area;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
      centroids.push_back(profiles[i].centroid);
      class_to_area.push_back(i < n_targets ? area(i) : AreaId::Unknown);
    }
    const ClassifierStandIn classifier(centroids, class_to_area);
    assign_weak_labels(records, classifier);

    std::size_t agree = 0, unknown = 0;
    json histogram = json::object();
    for (const auto& r : records) {
      const AreaId truth = index_of(r.true_area) < n_targets ? r.true_area : AreaId::Unknown;
      agree += truth == r.weak_label;
      unknown += r.weak_label == AreaId::Unknown;
      const std::string name = lex.name(r.weak_label);
      histogram[name] = histogram.value(name, std::size_t{0}) + 1;
    }
    save_embeddings(records, out_path(c, files::kEmbeddings));
    const json meta = {{"_header", output_header(c, "synth")},
                       {"records", records.size()},
                       {"dim", c.size("synth.dim")},
                       {"classes", classes},
                       {"target_areas", n_targets},
                       {"weak_label_unknown", unknown},
                       {"weak_label_matches_generator", agree},
                       {"weak_label_histogram", histogram}};
    write_json(out_path(c, files::kEmbeddingsMeta), meta);
    log("synth", std::to_string(records.size()) + " embeddings, " + std::to_string(unknown) + " weakly unknown");
    return meta;
  });
}

json cmd_pair(const RunConfig& c) {
  const auto lex = lexicon_for(c);
  require_output(c, files::kStatements, "distill");
  require_output(c, files::kEmbeddings, "synth");
  require_output(c, files::kEmbeddingsMeta, "synth");
  if (c.size("pairs.ratio") == 0) throw ValidationError("pairs.ratio must be positive");
  const std::string& composer_kind = c.str("pairs.composer");
  if (composer_kind != "template" && composer_kind != "llm") {
    throw ValidationError("pairs.composer must be 'template' or 'llm'");
  }
  const auto pool = load_pool(c, lex);
  auto records = load_checked_embeddings(c);
  for (const auto& [a, list] : pool) {
    if (list.empty()) throw ValidationError("no statements for area " + lex.name(a) + "; check the distill output");
  }
  auto client = make_client(c);
  ensure_out_dir(c);

  return as_stage_error("pair", [&] {
    TemplateComposer tmpl;
    LlmComposer llm(*client, seed_for(c, kSaltLlm));
    CaptionComposer& composer = composer_kind == "template" ? static_cast<CaptionComposer&>(tmpl) : llm;
    PairStats stats;
    const auto pairs = build_pairs(records, pool, lex, {c.size("pairs.ratio")}, c.size("pairs.statements_per_caption"),
                                   seed_for(c, kSaltPairs), composer, &stats);
    Splits splits;
    try {
      splits = split(pairs, {c.size("split.train"), c.size("split.val"), c.size("split.test"), seed_for(c, kSaltSplit)});
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("split: ") + e.what());
    }
    const json header = output_header(c, "pair");
    json manifest = {{"_header", header},
                     {"ratio_audit",
                      {{"known", stats.known_out},
                       {"unknown", stats.unknown_out},
                       {"known_per_unknown", c.size("pairs.ratio")},
                       {"exact", stats.known_out == c.size("pairs.ratio") * stats.unknown_out}}},
                     {"input_records", {{"known", stats.known_in}, {"unknown", stats.unknown_in}, {"unset", stats.unset_in}}}};
    const std::pair<const char*, const std::vector<WeakPair>*> parts[] = {
        {files::kPairsTrain, &splits.train}, {files::kPairsVal, &splits.val}, {files::kPairsTest, &splits.test}};
    const char* names[] = {"train", "val", "test"};
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<std::string> lines;
      json labels = json::object();
      json ids = json::array();
      for (const auto& p : *parts[i].second) {
        lines.push_back(pair_to_json(p, lex));
        const std::string name = lex.name(p.weak_label);
        labels[name] = labels.value(name, std::size_t{0}) + 1;
        ids.push_back(p.patch_id);
      }
      write_jsonl(out_path(c, parts[i].first), header, lines);
      manifest["splits"][names[i]] = {{"size", parts[i].second->size()}, {"labels", labels}, {"patch_ids", ids}};
    }
    write_json(out_path(c, files::kSplitManifest), manifest);
    log("pair", std::to_string(pairs.size()) + " pairs (" + std::to_string(stats.known_out) + " known, " +
                    std::to_string(stats.unknown_out) + " unknown); splits " + std::to_string(splits.train.size()) +
                    "/" + std::to_string(splits.val.size()) + "/" + std::to_string(splits.test.size()));
    json summary = manifest;
    for (const char* n : names) summary["splits"][n].erase("patch_ids");
    return summary;
  });
}

json cmd_train(const RunConfig& c) {
  const auto lex = lexicon_for(c);
  require_output(c, files::kPairsTrain, "pair");
  require_output(c, files::kStatements, "distill");
  require_output(c, files::kEmbeddings, "synth");
  require_output(c, files::kEmbeddingsMeta, "synth");
  const auto tc = train_config(c);
  try {
    tc.validate();
  } catch (const Error& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  const auto pool = load_pool(c, lex);
  const auto records = load_checked_embeddings(c);
  auto pairs = load_pairs(c, files::kPairsTrain, lex, records);
  Vocab vocab = build_caption_vocab(pool, lex);
  const LmConfig lc = lm_config(c, vocab.size());
  const AdapterConfig ac = adapter_config(c);
  try {
    lc.validate();
    ac.validate(lc);
  } catch (const Error& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  ensure_out_dir(c);
  const std::string hash = c.stage_hash("train");
  const fs::path ckpt_path = out_path(c, files::kCheckpoint);

  return as_stage_error("train", [&] {
    tokenize_pairs(pairs, vocab, lc.max_seq_len);
    std::vector<SequenceExample> examples;
    for (const auto& p : pairs) examples.push_back(to_example(p));

    std::optional<Checkpoint> ckpt;
    if (fs::is_regular_file(ckpt_path)) {
      try {
        Checkpoint prev = load_checkpoint(ckpt_path);
        if (prev.train_state.value("config_hash", std::string()) == hash) {
          log("train", "resuming from epoch " + std::to_string(prev.train_state.value("epoch", std::size_t{0})));
          ckpt = std::move(prev);
        }
      } catch (const FormatError& e) {
        log("train", std::string("ignoring unreadable checkpoint: ") + e.what());
      }
    }
    json pretrain_log = nullptr;
    if (!ckpt) {
      auto lm = init_lm(lc);
      if (c.size("model.pretrain_steps") > 0) {
        std::vector<std::vector<TokenId>> seqs;
        for (const auto& p : pairs) {
          auto s = p.input_ids;
          s.push_back(Vocab::kEos);
          seqs.push_back(std::move(s));
        }
        PretrainConfig pc;
        pc.steps = c.size("model.pretrain_steps");
        pc.seed = seed_for(c, kSaltPretrain);
        const auto losses = pretrain_lm(lm, seqs, pc);
        pretrain_log = {{"steps", pc.steps}, {"first_loss", losses.front()}, {"last_loss", losses.back()}};
      }
      ckpt = initial_checkpoint(vocab, std::move(lm), ac);
      ckpt->train_state["config_hash"] = hash;
      ckpt->train_state["stage"] = "train";
      if (!pretrain_log.is_null()) ckpt->train_state["pretrain"] = pretrain_log;
    }
    const std::string lm_before = lm_weight_hash(ckpt->lm);
    TrainCallbacks cb;
    cb.on_epoch = [&](const Checkpoint& state) {
      save_checkpoint(state, ckpt_path);
      log("train", "epoch " + std::to_string(state.train_state["epoch"].get<std::size_t>()) + " loss " +
                       std::to_string(state.train_state["epoch_losses"].back().get<double>()));
    };
    Checkpoint done = train(std::move(*ckpt), examples, tc, cb);
    done.train_state["config_hash"] = hash;
    done.train_state["stage"] = "train";
    save_checkpoint(done, ckpt_path);
    const std::string lm_after = lm_weight_hash(done.lm);
    json gates = json::array();
    for (const auto& b : done.adapter.xattn) gates.push_back({{"attn", b.gate.value[0]}, {"ffn", b.ffn_gate.value[0]}});
    json summary = {{"_header", output_header(c, "train")},
                    {"examples", examples.size()},
                    {"vocab_size", vocab.size()},
                    {"epochs", done.train_state.value("epoch", std::size_t{0})},
                    {"steps", done.train_state.value("step", std::size_t{0})},
                    {"epoch_losses", done.train_state.value("epoch_losses", json::array())},
                    {"gates", gates},
                    {"lm_sha256_before", lm_before},
                    {"lm_sha256_after", lm_after},
                    {"lm_frozen", lm_before == lm_after},
                    {"adapter_sha256", adapter_weight_hash(done.adapter)},
                    {"pretrain", done.train_state.value("pretrain", json())}};
    write_json(out_path(c, files::kTrainLog), summary);
    if (lm_before != lm_after) throw StageError("train", "", "frozen LM weights changed during training");
    return summary;
  });
}

json cmd_eval(const RunConfig& c) {
  const auto lex = lexicon_for(c);
  require_file(out_path(c, files::kCheckpoint), "checkpoint", "run `cytocap train` first");
  require_output(c, files::kPairsTest, "pair");
  require_output(c, files::kStatements, "distill");
  require_output(c, files::kEmbeddings, "synth");
  require_output(c, files::kEmbeddingsMeta, "synth");
  const std::string& judge_kind = c.str("eval.judge");
  if (judge_kind != "oracle" && judge_kind != "llm") throw ValidationError("eval.judge must be 'oracle' or 'llm'");
  if (c.size("eval.options") < 2 || c.size("eval.options") > lex.size()) {
    throw ValidationError("eval.options must be between 2 and run.areas (" + std::to_string(lex.size()) + ")");
  }
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(out_path(c, files::kCheckpoint));
  } catch (const FormatError& e) {
    throw ValidationError(std::string("checkpoint is corrupt: ") + e.what());
  }
  check_header({{"stage", ckpt.train_state.value("stage", std::string())},
                {"config_hash", ckpt.train_state.value("config_hash", std::string())}},
               c, "train", out_path(c, files::kCheckpoint));
  const auto pool = load_pool(c, lex);
  const auto records = load_checked_embeddings(c);
  const auto pairs = load_pairs(c, files::kPairsTest, lex, records);
  auto client = make_client(c);
  ensure_out_dir(c);

  return as_stage_error("eval", [&] {
    EvalConfig ec;
    ec.max_new_tokens = c.size("eval.max_new_tokens");
    ec.bootstrap_iterations = c.size("eval.bootstrap_iterations");
    ec.level = c.real("eval.level");
    ec.seed = seed_for(c, kSaltEval);
    ec.num_options = c.size("eval.options");
    ec.statements_per_option = c.size("eval.statements_per_option");
    OracleJudge oracle;
    LlmJudge llm(*client, lex);
    Judge& judge = judge_kind == "oracle" ? static_cast<Judge&>(oracle) : llm;
    EvalReport report = evaluate(ckpt, pairs, pool, lex, ec, judge);
    const json header = output_header(c, "eval");
    report.provenance = {{"train_config_hash", ckpt.train_state["config_hash"]},
                         {"adapter_sha256", adapter_weight_hash(ckpt.adapter)},
                         {"test_pairs", pairs.size()}};
    json j = report_to_json(report, lex);
    j["_header"] = header;
    write_json(out_path(c, files::kEvalReport), j);
    write_text(out_path(c, files::kEvalMarkdown),
               "Config hash: `" + header["config_hash"].get<std::string>() + "`\n\n" + report_to_markdown(j));
    std::vector<std::string> caption_lines, item_lines;
    for (const auto& g : report.captions) {
      caption_lines.push_back(json{{"patch_id", g.patch_id},
                                   {"reference", lex.name(g.reference)},
                                   {"predicted", lex.name(g.predicted)},
                                   {"caption", g.text}}
                                  .dump());
    }
    for (const auto& it : report.items) item_lines.push_back(mc_item_to_json(it, lex, true));
    write_jsonl(out_path(c, files::kCaptions), header, caption_lines);
    write_jsonl(out_path(c, files::kMcItems), header, item_lines);
    log("eval", "in-scope " + std::to_string(report.consistency.in_scope_accuracy) + ", unknown " +
                    std::to_string(report.consistency.unknown_accuracy) + ", discriminability " +
                    std::to_string(report.discrim.accuracy));
    return j;
  });
}

json cmd_qa_gen(const RunConfig& c) {
  const auto lex = lexicon_for(c);
  require_output(c, files::kChunks, "distill");
  const std::string& gen_kind = c.str("qa.generator");
  if (gen_kind != "stub" && gen_kind != "llm") throw ValidationError("qa.generator must be 'stub' or 'llm'");
  const std::size_t n_options = c.size("qa.options");
  if (n_options < 2 || n_options > lex.size()) {
    throw ValidationError("qa.options must be between 2 and run.areas (" + std::to_string(lex.size()) + ")");
  }
  std::vector<Chunk> chunks;
  for (const auto& l : read_checked_jsonl(out_path(c, files::kChunks), c, "distill")) {
    try {
      chunks.push_back(chunk_from_json(json::parse(l)));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("chunks file: ") + e.what());
    }
  }
  auto client = make_client(c);
  ensure_out_dir(c);

  return as_stage_error("qa-gen", [&] {
    const std::uint64_t seed = seed_for(c, kSaltQaGen);
    StubQAGenerator stub(lex, seed, n_options);
    LlmQAGenerator llm(*client, seed, n_options);
    QAGenerator& gen = gen_kind == "stub" ? static_cast<QAGenerator&>(stub) : llm;
    const auto generated = generate_qa(chunks, gen);
    std::vector<QAItem> randomized;
    for (const auto& it : generated.items) {
      randomized.push_back(randomize_options(it, qa_option_seed(c, it.question_id)));
    }
    ArtifactRules rules;
    rules.positional_reference = c.flag("qa.filter_positional");
    rules.duplicate_options = c.flag("qa.filter_duplicates");
    rules.answer_in_stem = c.flag("qa.filter_answer_in_stem");
    const auto filtered = filter_artifacts(randomized, rules);
    const json header = output_header(c, "qa-gen");
    std::vector<std::string> kept, dropped;
    json reasons = json::object();
    for (const auto& it : filtered.kept) kept.push_back(qa_item_to_json(it));
    for (const auto& [it, why] : filtered.dropped) {
      json j = json::parse(qa_item_to_json(it));
      j["dropped_by"] = why;
      dropped.push_back(j.dump());
      reasons[why] = reasons.value(why, std::size_t{0}) + 1;
    }
    std::vector<std::size_t> positions(n_options, 0);
    for (const auto& it : filtered.kept) ++positions[it.correct_index];
    write_jsonl(out_path(c, files::kQaItems), header, kept);
    write_jsonl(out_path(c, files::kQaDropped), header, dropped);
    json summary = {{"_header", header},
                    {"chunks", chunks.size()},
                    {"generated", generated.items.size()},
                    {"malformed", generated.malformed},
                    {"failed_chunks", generated.failed_chunks},
                    {"kept", filtered.kept.size()},
                    {"dropped", filtered.dropped.size()},
                    {"dropped_by_rule", reasons},
                    {"answer_position_counts", positions}};
    write_json(out_path(c, files::kQaLog), summary);
    log("qa-gen", std::to_string(filtered.kept.size()) + " items kept, " + std::to_string(filtered.dropped.size()) +
                      " dropped");
    return summary;
  });
}

json cmd_qa_score(const RunConfig& c) {
  require_output(c, files::kQaItems, "qa-gen");
  require_file(c.path("qa.scoreboard_reference"), "published scoreboard", "");
  std::vector<std::string> answerer_names;
  std::istringstream list(c.str("qa.answerers"));
  for (std::string n; std::getline(list, n, ',');) {
    n = text::trim(n);
    if (n.empty()) continue;
    if (n != "answer-key" && n != "random" && n != "llm") {
      throw ValidationError("qa.answerers entries must be answer-key, random or llm; got '" + n + "'");
    }
    answerer_names.push_back(n);
  }
  if (answerer_names.empty()) throw ValidationError("qa.answerers is empty");
  std::vector<QAItem> items;
  for (const auto& l : read_checked_jsonl(out_path(c, files::kQaItems), c, "qa-gen")) {
    try {
      items.push_back(qa_item_from_json(l));
    } catch (const FormatError& e) {
      throw ValidationError(std::string("QA items: ") + e.what());
    }
  }
  if (items.empty()) throw ValidationError("no QA items to score");
  json published;
  try {
    published = load_published_scoreboard(c.path("qa.scoreboard_reference"));
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
  auto client = make_client(c);
  ensure_out_dir(c);

  return as_stage_error("qa-score", [&] {
    std::vector<ModelScore> scores;
    for (const auto& n : answerer_names) {
      PerfectAnswerer perfect;
      RandomAnswerer random(seed_for(c, kSaltAnswerer));
      LlmAnswerer llm(*client);
      Answerer& a = n == "answer-key" ? static_cast<Answerer&>(perfect)
                    : n == "random"   ? static_cast<Answerer&>(random)
                                      : llm;
      scores.push_back(score_model(items, a));
      log("qa-score", scores.back().model + ": " + std::to_string(scores.back().share_correct) + " over " +
                          std::to_string(scores.back().n_answered) + " items (" +
                          std::to_string(scores.back().n_failed) + " failed)");
    }
    json sb = scoreboard_json(scores, published);
    sb["_header"] = output_header(c, "qa-score");
    sb["items"] = items.size();
    write_json(out_path(c, files::kScoreboard), sb);
    write_text(out_path(c, files::kScoreboardMarkdown), "Config hash: `" + sb["_header"]["config_hash"].get<std::string>() +
                                                            "`\n\n" + scoreboard_markdown(sb));
    return sb;
  });
}

json cmd_report(const RunConfig& c) {
  struct Part {
    const char* file;
    const char* stage;
  };
  const Part parts[] = {{files::kDistillLog, "distill"}, {files::kEmbeddingsMeta, "synth"},
                        {files::kSplitManifest, "pair"},  {files::kTrainLog, "train"},
                        {files::kEvalReport, "eval"},     {files::kQaLog, "qa-gen"},
                        {files::kScoreboard, "qa-score"}};
  json collated = json::object();
  std::vector<std::string> missing;
  for (const auto& p : parts) {
    const fs::path path = out_path(c, p.file);
    if (!fs::is_regular_file(path)) {
      missing.push_back(p.stage);
      continue;
    }
    json j = read_checked_json(path, c, p.stage);
    if (std::string(p.stage) == "pair") {
      for (auto& [name, s] : j["splits"].items()) s.erase("patch_ids");
    }
    collated[p.stage] = j;
  }
  if (collated.empty()) throw ValidationError("no stage outputs found in '" + c.str("run.out") + "'");
  ensure_out_dir(c);

  json hashes = json::object();
  for (const auto& s : RunConfig::stages()) hashes[s] = c.stage_hash(s);
  json report = {{"config", c.to_json()}, {"stage_hashes", hashes}, {"stages", collated}, {"stages_not_run", missing}};
  write_json(out_path(c, files::kReport), report);

  std::ostringstream md;
  md << "# Run report\n\n";
  md << "## Configuration\n\n```toml\n" << c.to_text() << "```\n\n";
  md << "| Stage | Config hash | Output |\n|---|---|---|\n";
  for (const auto& s : RunConfig::stages()) {
    md << "| " << s << " | `" << hashes[s].get<std::string>() << "` | "
       << (collated.contains(s) ? "present" : "not run") << " |\n";
  }
  md << "\n";
  if (collated.contains("distill")) {
    const auto& d = collated["distill"];
    md << "## Corpus distillation\n\n"
       << "Documents ingested: " << d["documents_ingested"] << ", reachable via citations: "
       << d["documents_reachable"] << ", keyword matches: " << d["documents_matching"] << ", chunks: " << d["chunks"]
       << ". Statements after deduplication: " << d["statements"] << ".\n\n";
  }
  if (collated.contains("pair")) {
    const auto& p = collated["pair"];
    md << "## Weak pairs\n\n"
       << "Known/unknown pairs: " << p["ratio_audit"]["known"] << "/" << p["ratio_audit"]["unknown"]
       << " (exact ratio: " << (p["ratio_audit"]["exact"].get<bool>() ? "yes" : "no") << "). Splits: "
       << p["splits"]["train"]["size"] << " train, " << p["splits"]["val"]["size"] << " val, "
       << p["splits"]["test"]["size"] << " test.\n\n";
  }
  if (collated.contains("train")) {
    const auto& t = collated["train"];
    md << "## Training\n\n"
       << "Epoch losses: " << t["epoch_losses"].dump() << ". Frozen LM hash unchanged: "
       << (t["lm_frozen"].get<bool>() ? "yes" : "no") << ".\n\n";
  }
  if (collated.contains("eval")) md << "## Evaluation\n\n" << report_to_markdown(collated["eval"]) << "\n";
  if (collated.contains("qa-score")) md << "## QA benchmark\n\n" << scoreboard_markdown(collated["qa-score"]) << "\n";
  write_text(out_path(c, files::kReportMarkdown), md.str());
  log("report", "collated " + std::to_string(collated.size()) + " stage outputs");
  return {{"stages", collated.size()}, {"stages_not_run", missing}};
}

}  // namespace cytocap
