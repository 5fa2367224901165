// Command-line front end: one subcommand per pipeline stage, file handoff
// between stages, and a manifest next to every primary output.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ieb/ieb.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kCorpusFormat =
    "Corpus files are JSONL, one object per line: {\"id\", \"text\", \"label\": {\"kind\", \"verb\", \"noun\", "
    "\"wh_word\"} | null, \"split\", \"source\"}.";
constexpr const char* kEmbeddingFormat =
    "Embedding files are IEBV binaries: \"IEBV\" | u32 version | u32 count | u32 dim | count*dim f32 | count x (u32 "
    "length + id bytes), little-endian, unit-norm rows.";

// Collects everything a manifest records about one invocation.
class Run {
 public:
  Run(std::string subcommand, std::vector<std::string> argv) : subcommand_(std::move(subcommand)), argv_(std::move(argv)) {}

  template <typename T>
  void param(const std::string& name, const T& value) {
    params_[name] = value;
  }
  void seed(std::uint64_t s) { seed_ = s; }

  const std::string& input(const std::string& path) {
    inputs_[path] = ieb::digest_bytes(ieb::binio::read_file(path));
    return path;
  }

  void output(const std::string& path, const std::string& bytes) {
    ieb::binio::write_file(path, bytes);
    outputs_[path] = ieb::digest_bytes(bytes);
    if (primary_.empty()) primary_ = path;
  }

  void summary(const std::string& key, ordered_json value) { summary_[key] = std::move(value); }

  void write_manifest() const {
    if (primary_.empty()) return;
    ordered_json m;
    m["tool"] = "ieb";
    m["version"] = ieb::kVersion;
    m["subcommand"] = subcommand_;
    m["argv"] = argv_;
    m["params"] = params_;
    m["seed"] = seed_ ? ordered_json(*seed_) : ordered_json(nullptr);
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    if (!summary_.empty()) m["summary"] = summary_;
    ieb::binio::write_file(primary_ + ".manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  std::vector<std::string> argv_;
  ordered_json params_ = ordered_json::object();
  ordered_json inputs_ = ordered_json::object();
  ordered_json outputs_ = ordered_json::object();
  ordered_json summary_ = ordered_json::object();
  std::optional<std::uint64_t> seed_;
  std::string primary_;
};

std::string corpus_bytes(const ieb::Corpus& c) {
  std::ostringstream out;
  ieb::write_corpus(c, out);
  return out.str();
}

std::string jsonl(const std::vector<ordered_json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

std::optional<ieb::Split> split_filter(const std::string& name) {
  if (name == "all") return std::nullopt;
  auto s = ieb::parse_split(name);
  if (!s) throw ieb::Error(ieb::Errc::parse, "unknown split '" + name + "' (expected all, eft_train, eft_test, ift_train, ift_test, unassigned)");
  return s;
}

ieb::Corpus restrict(const ieb::Corpus& c, const std::string& split) {
  const auto s = split_filter(split);
  if (!s) return c;
  auto r = c.restricted_to(*s);
  if (r.empty()) throw ieb::Error(ieb::Errc::precondition, "split '" + split + "' has no instructions");
  return r;
}

ieb::EmbeddingMatrix load_embeddings(Run& run, const std::string& path) {
  auto r = ieb::read_embeddings(run.input(path));
  if (r.renormalized)
    std::cerr << "warning: " << path << ": renormalized " << r.renormalized_rows << " rows off unit norm\n";
  return std::move(r.matrix);
}

// Rows of m whose ids belong to the (optionally split-restricted) corpus, in corpus order.
ieb::EmbeddingMatrix rows_for(const ieb::EmbeddingMatrix& m, const ieb::Corpus& c) {
  std::vector<std::string> ids;
  for (const auto& ins : c.instructions()) ids.push_back(ins.id);
  return m.select(ids);
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& f : ieb::split_on(s, ',')) {
    const auto t = ieb::trim(f);
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
      throw ieb::Error(ieb::Errc::parse, "bad size '" + t + "' in '" + s + "'");
    out.push_back(std::stoul(t));
  }
  if (out.empty()) throw ieb::Error(ieb::Errc::parse, "empty size list");
  return out;
}

ieb::SplitRatios parse_ratios(const std::string& s) {
  const auto fields = ieb::split_on(s, ',');
  if (fields.size() != 4) throw ieb::Error(ieb::Errc::parse, "ratios need 4 comma-separated values, got '" + s + "'");
  ieb::SplitRatios r{};
  for (std::size_t i = 0; i < 4; ++i) {
    try {
      std::size_t used = 0;
      r[i] = std::stod(fields[i], &used);
      if (used != fields[i].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ieb::Error(ieb::Errc::parse, "bad ratio '" + fields[i] + "'");
    }
  }
  return r;
}

// Response texts keyed by id, from the optional "response" field of a corpus file.
std::map<std::string, std::string> load_responses(Run& run, const std::string& path) {
  std::ifstream in(run.input(path), std::ios::binary);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (ieb::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("response") && j["response"].is_string()) out[j.at("id").get<std::string>()] = j["response"];
    } catch (const nlohmann::json::exception& e) {
      throw ieb::Error(ieb::Errc::parse, path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct Options {
  // shared
  std::string corpus, embeddings, out, split = "all";
  std::uint64_t seed = 0;
  std::size_t restarts = 10;
  // label
  std::string in, lexicon, synonyms, word_vectors;
  double merge_threshold = 0.5;
  std::size_t min_count = 10;
  // split
  std::string ratios;
  // embed-fallback
  std::size_t dim = 256, ngram = 3;
  // pairs
  std::string mode = "triples";
  std::size_t n_same = 1500, n_random = 1500, per_anchor = 1;
  bool no_hard_negatives = false;
  // train
  std::string pairs, out_head, out_trace, activation = "identity";
  double tau = 0.05, lr = 0.0;
  std::size_t batch = 16, epochs = 1, dim_out = 0;
  bool bias = false;
  // project
  std::string head;
  // eval
  std::size_t k = 0;
  // tinybench
  std::string sizes = "10,50,100", scores, study_out;
  std::size_t runs = 100;
  // retrieve
  std::string queries, pool, pool_corpus, query_corpus, prompts_out;
  std::size_t topk = 2;
  // xcorr
  std::vector<std::string> sets;
  std::string exclude_self = "auto", out_json;
  // plot-pca
  std::string out_svg;
  // replay
  std::string manifest;
};

int dispatch(const std::string& cmd, const Options& o, Run& run);

int run_cli(const std::vector<std::string>& args);

int cmd_label(const Options& o, Run& run) {
  run.param("in", o.in);
  run.param("lexicon", o.lexicon);
  run.param("synonyms", o.synonyms);
  run.param("word_vectors", o.word_vectors);
  run.param("merge_threshold", o.merge_threshold);
  run.param("min_count", o.min_count);
  const auto corpus = ieb::load_corpus(run.input(o.in));
  const auto lex = ieb::load_lexicon(run.input(o.lexicon));
  auto labeled = ieb::label_corpus(corpus, lex);
  if (!o.synonyms.empty()) {
    ieb::MergePolicy policy;
    policy.direct_merge_threshold = o.merge_threshold;
    if (!o.word_vectors.empty()) policy.word_vectors = ieb::load_word_vectors(run.input(o.word_vectors));
    labeled = ieb::merge_categories(labeled, ieb::load_synonyms(run.input(o.synonyms)), policy);
  }
  const auto filtered = ieb::filter_rare_categories(labeled, o.min_count);
  run.output(o.out, corpus_bytes(filtered.corpus));
  run.summary("kept", filtered.corpus.size());
  run.summary("removed", filtered.removed_ids.size());
  run.summary("categories", filtered.corpus.category_index().size());
  return 0;
}

int cmd_split(const Options& o, Run& run) {
  run.param("corpus", o.corpus);
  run.param("ratios", o.ratios);
  run.seed(o.seed);
  const auto corpus = ieb::load_corpus(run.input(o.corpus));
  run.output(o.out, corpus_bytes(ieb::make_splits(corpus, parse_ratios(o.ratios), o.seed)));
  return 0;
}

int cmd_embed(const Options& o, Run& run) {
  run.param("corpus", o.corpus);
  run.param("dim", o.dim);
  run.param("ngram", o.ngram);
  run.seed(o.seed);
  const auto corpus = ieb::load_corpus(run.input(o.corpus));
  std::vector<std::string> ids, texts;
  for (const auto& ins : corpus.instructions()) {
    ids.push_back(ins.id);
    texts.push_back(ins.text);
  }
  const auto m = ieb::fallback_embed(ids, texts, {o.dim, o.ngram, o.seed});
  run.output(o.out, ieb::encode_embeddings(m));
  return 0;
}

int cmd_pairs(const Options& o, Run& run) {
  run.param("corpus", o.corpus);
  run.param("mode", o.mode);
  if (o.mode != "triples" && o.mode != "iis")
    throw ieb::Error(ieb::Errc::parse, "unknown pair mode '" + o.mode + "' (expected triples or iis)");
  run.seed(o.seed);
  const auto full = ieb::load_corpus(run.input(o.corpus));
  std::string split = o.split;
  if (split.empty()) split = o.mode == "iis" ? "ift_train" : "eft_train";
  run.param("split", split);
  const auto corpus = restrict(full, split);
  if (o.mode == "triples") {
    run.param("hard_negatives", !o.no_hard_negatives);
    run.param("per_anchor", o.per_anchor);
    auto sampled = ieb::sample_positive_pairs(corpus, ieb::derive_seed(o.seed, 1));
    for (const auto& w : sampled.warnings) std::cerr << "warning: " << w << "\n";
    auto pairs = o.no_hard_negatives ? sampled.pairs
                                     : ieb::attach_hard_negatives(sampled.pairs, corpus, ieb::derive_seed(o.seed, 2), o.per_anchor);
    std::vector<ordered_json> rows;
    std::size_t with_negative = 0;
    for (const auto& p : pairs) {
      with_negative += p.hard_negative_id ? 1 : 0;
      rows.push_back(ordered_json{{"anchor", p.anchor_id},
                                  {"positive", p.positive_id},
                                  {"hard_negative", p.hard_negative_id ? ordered_json(*p.hard_negative_id) : ordered_json(nullptr)}});
    }
    run.output(o.out, jsonl(rows));
    run.summary("pairs", pairs.size());
    run.summary("with_hard_negative", with_negative);
    run.summary("warnings", sampled.warnings.size());
    return 0;
  }
  {
    run.param("n_same", o.n_same);
    run.param("n_random", o.n_random);
    const auto pairs = ieb::build_iis_set(corpus, o.n_same, o.n_random, o.seed);
    std::vector<ordered_json> rows;
    std::size_t positives = 0;
    for (const auto& p : pairs) {
      rows.push_back(ordered_json{{"left", p.left_id}, {"right", p.right_id}, {"label", p.label}});
      positives += static_cast<std::size_t>(p.label);
    }
    run.output(o.out, jsonl(rows));
    run.summary("pairs", pairs.size());
    run.summary("label_1", positives);
    return 0;
  }
}

int cmd_train(const Options& o, Run& run) {
  ieb::TrainConfig cfg;
  cfg.temperature = o.tau;
  cfg.batch_size = o.batch;
  cfg.epochs = o.epochs;
  cfg.learning_rate = o.lr;
  cfg.seed = o.seed;
  cfg.use_hard_negatives = !o.no_hard_negatives;
  cfg.dim_out = o.dim_out;
  cfg.bias = o.bias;
  if (o.activation == "tanh")
    cfg.activation = ieb::Activation::tanh;
  else if (o.activation != "identity")
    throw ieb::Error(ieb::Errc::parse, "unknown activation '" + o.activation + "' (expected identity or tanh)");
  run.param("embeddings", o.embeddings);
  run.param("pairs", o.pairs);
  run.param("tau", o.tau);
  run.param("batch", o.batch);
  run.param("epochs", o.epochs);
  run.param("lr", o.lr);
  run.param("dim_out", o.dim_out);
  run.param("activation", o.activation);
  run.param("bias", o.bias);
  run.param("hard_negatives", cfg.use_hard_negatives);
  run.seed(o.seed);
  const auto m = load_embeddings(run, o.embeddings);
  const auto pairs = ieb::load_triples(run.input(o.pairs));
  if (!o.corpus.empty()) {
    run.param("corpus", o.corpus);
    const auto corpus = ieb::load_corpus(run.input(o.corpus));
    for (const auto& p : pairs)
      for (const std::string* id : {&p.anchor_id, &p.positive_id})
        if (!corpus.contains(*id)) throw ieb::Error(ieb::Errc::not_found, "pair id '" + *id + "' is not in the corpus");
  }
  const auto result = ieb::train_head(m, pairs, cfg);
  run.output(o.out_head, ieb::encode_head(result.head));
  if (!o.out_trace.empty()) run.output(o.out_trace, ieb::loss_trace_csv(result.loss_trace));
  run.summary("steps", result.loss_trace.size());
  if (!result.loss_trace.empty()) {
    run.summary("first_loss", result.loss_trace.front());
    run.summary("last_loss", result.loss_trace.back());
  }
  return 0;
}

int cmd_project(const Options& o, Run& run) {
  run.param("embeddings", o.embeddings);
  run.param("head", o.head);
  const auto m = load_embeddings(run, o.embeddings);
  const auto head = ieb::read_head(run.input(o.head));
  run.output(o.out, ieb::encode_embeddings(ieb::apply_head(head, m)));
  return 0;
}

int cmd_eval_ict(const Options& o, Run& run) {
  run.param("embeddings", o.embeddings);
  run.param("corpus", o.corpus);
  run.param("split", o.split);
  run.param("k", o.k);
  run.param("restarts", o.restarts);
  run.seed(o.seed);
  const auto m = load_embeddings(run, o.embeddings);
  const auto corpus = restrict(ieb::load_corpus(run.input(o.corpus)), o.split);
  const auto report =
      ieb::run_ict(m, corpus, o.seed, o.k == 0 ? std::nullopt : std::optional<std::size_t>(o.k), o.restarts);
  run.output(o.out, ieb::to_json(report).dump(2) + "\n");
  return 0;
}

int cmd_eval_iis(const Options& o, Run& run) {
  run.param("embeddings", o.embeddings);
  run.param("pairs", o.pairs);
  const auto m = load_embeddings(run, o.embeddings);
  const auto pairs = ieb::load_iis_pairs(run.input(o.pairs));
  ieb::MetricsReport report;
  report.n = pairs.size();
  report.iis_spearman = ieb::run_iis(m, pairs);
  run.output(o.out, ieb::to_json(report).dump(2) + "\n");
  return 0;
}

ieb::EmbeddingMatrix maybe_restrict(Run& run, const Options& o, const ieb::EmbeddingMatrix& m) {
  run.param("split", o.split);
  if (o.corpus.empty()) {
    if (o.split != "all") throw ieb::Error(ieb::Errc::precondition, "--split needs --corpus");
    return m;
  }
  run.param("corpus", o.corpus);
  return rows_for(m, restrict(ieb::load_corpus(run.input(o.corpus)), o.split));
}

int cmd_select(const Options& o, Run& run) {
  run.param("embeddings", o.embeddings);
  run.param("k", o.k);
  run.param("restarts", o.restarts);
  run.seed(o.seed);
  const auto m = maybe_restrict(run, o, load_embeddings(run, o.embeddings));
  const auto sel = ieb::select_for_tuning(m, o.k, o.seed, {o.restarts});
  run.output(o.out, ieb::id_list_csv(sel.chosen_ids));
  run.summary("selected", sel.chosen_ids.size());
  return 0;
}

int cmd_tinybench(const Options& o, Run& run) {
  run.param("embeddings", o.embeddings);
  run.param("sizes", o.sizes);
  run.param("restarts", o.restarts);
  run.seed(o.seed);
  const auto m = maybe_restrict(run, o, load_embeddings(run, o.embeddings));
  const auto sizes = parse_sizes(o.sizes);
  const auto chosen = ieb::tiny_benchmark(m, sizes, o.seed, {o.restarts});
  std::string csv = "size,id\n";
  for (std::size_t s : sizes)
    for (const auto& id : chosen.at(s)) csv += std::to_string(s) + "," + ieb::csv_escape(id) + "\n";
  run.output(o.out, csv);
  if (!o.scores.empty()) {
    if (o.study_out.empty()) throw ieb::Error(ieb::Errc::precondition, "--scores needs --study-out");
    run.param("scores", o.scores);
    run.param("runs", o.runs);
    const auto scores = ieb::load_scores(run.input(o.scores));
    ordered_json j;
    j["sizes"] = sizes;
    j["runs"] = o.runs;
    ordered_json errors;
    for (std::size_t s : sizes) errors[std::to_string(s)] = ieb::estimation_error(scores, chosen.at(s));
    j["single_run_error"] = errors;
    const auto study = ieb::tiny_benchmark_study(m, scores, sizes, o.runs, o.seed, {o.restarts});
    j["mean_error"] = {{"embedding", study.embedding_mean}, {"random", study.random_mean}};
    run.output(o.study_out, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_retrieve(const Options& o, Run& run) {
  run.param("queries", o.queries);
  run.param("pool", o.pool);
  run.param("topk", o.topk);
  const auto q = load_embeddings(run, o.queries);
  const auto p = load_embeddings(run, o.pool);
  const auto hits = ieb::retrieve_demonstrations(q, p, o.topk);
  std::vector<ordered_json> rows;
  for (std::size_t i = 0; i < q.rows(); ++i) rows.push_back(ordered_json{{"query", q.ids()[i]}, {"demos", hits[i]}});
  run.output(o.out, jsonl(rows));
  if (!o.prompts_out.empty()) {
    if (o.query_corpus.empty() || o.pool_corpus.empty())
      throw ieb::Error(ieb::Errc::precondition, "--prompts-out needs --query-corpus and --pool-corpus");
    run.param("query_corpus", o.query_corpus);
    run.param("pool_corpus", o.pool_corpus);
    const auto qc = ieb::load_corpus(run.input(o.query_corpus));
    const auto pc = ieb::load_corpus(run.input(o.pool_corpus));
    const auto responses = load_responses(run, o.pool_corpus);
    std::vector<ordered_json> prompts;
    for (std::size_t i = 0; i < q.rows(); ++i) {
      std::vector<ieb::Demonstration> demos;
      for (const auto& id : hits[i]) {
        auto it = responses.find(id);
        demos.push_back({pc.at(id).text, it == responses.end() ? std::string() : it->second});
      }
      prompts.push_back(ordered_json{{"query", q.ids()[i]}, {"prompt", ieb::assemble_icl_prompt(qc.at(q.ids()[i]), demos)}});
    }
    run.output(o.prompts_out, jsonl(prompts));
  }
  return 0;
}

int cmd_xcorr(const Options& o, Run& run) {
  run.param("sets", o.sets);
  run.param("exclude_self", o.exclude_self);
  std::optional<bool> flag;
  if (o.exclude_self == "on")
    flag = true;
  else if (o.exclude_self == "off")
    flag = false;
  else if (o.exclude_self != "auto")
    throw ieb::Error(ieb::Errc::parse, "--exclude-self must be auto, on or off");
  std::vector<ieb::NamedMatrix> sets;
  for (const auto& spec : o.sets) {
    const auto eq = spec.find('=');
    std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    const std::string canonical = fs::weakly_canonical(path).string();
    sets.push_back({name, canonical, load_embeddings(run, path)});
  }
  const auto c = ieb::correlation_matrix(sets, flag);
  run.output(o.out, ieb::correlation_csv(c));
  if (!o.out_json.empty()) run.output(o.out_json, ieb::to_json(c).dump(2) + "\n");
  return 0;
}

int cmd_plot_pca(const Options& o, Run& run) {
  run.param("embeddings", o.embeddings);
  auto m = load_embeddings(run, o.embeddings);
  std::vector<std::string> labels(m.rows());
  if (!o.corpus.empty()) {
    m = maybe_restrict(run, o, m);
    const auto corpus = ieb::load_corpus(o.corpus);
    labels.assign(m.rows(), "");
    for (std::size_t i = 0; i < m.rows(); ++i)
      if (const auto& l = corpus.at(m.ids()[i]).label) labels[i] = l->key();
  }
  const auto p = ieb::pca2d(m);
  run.output(o.out, ieb::pca_csv(p, labels));
  if (!o.out_svg.empty()) run.output(o.out_svg, ieb::pca_svg(p, labels));
  run.summary("explained", (p.eigenvalues[0] + p.eigenvalues[1]) / std::max(p.total_variance, 1e-300));
  return 0;
}

int cmd_replay(const Options& o) {
  const auto m = nlohmann::json::parse(ieb::binio::read_file(o.manifest), nullptr, false);
  if (m.is_discarded() || !m.contains("argv") || !m.contains("inputs"))
    throw ieb::Error(ieb::Errc::format, o.manifest + ": not a run manifest");
  if (m.value("version", "") != std::string(ieb::kVersion))
    std::cerr << "warning: manifest was written by version " << m.value("version", "?") << "\n";
  for (const auto& [path, digest] : m["inputs"].items()) {
    const auto now = ieb::digest_bytes(ieb::binio::read_file(path));
    if (now != digest.get<std::string>())
      throw ieb::Error(ieb::Errc::conflict, "input '" + path + "' changed since the manifest was written");
  }
  return run_cli(m["argv"].get<std::vector<std::string>>());
}

void add_threads(CLI::App* sub, unsigned& threads) {
  sub->add_option("--threads", threads, "Cap on worker threads (0: IEB_THREADS or hardware count)");
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Instruction embedding benchmark toolkit"};
  app.name("ieb");
  app.set_version_flag("--version", std::string(ieb::kVersion));
  app.require_subcommand(1);
  app.footer(std::string(kCorpusFormat) + "\n" + kEmbeddingFormat +
             "\nEvery output is accompanied by <output>.manifest.json (argv, parameters, input and output digests, "
             "seed).\nExit codes: 0 ok, 1 internal error, 2 usage or input error.");
  Options o;
  unsigned threads = 0;

  auto seed_opt = [&](CLI::App* s) { s->add_option("--seed", o.seed, "Random seed")->capture_default_str(); };
  auto restarts_opt = [&](CLI::App* s) { s->add_option("--restarts", o.restarts, "k-means restarts")->capture_default_str(); };

  auto* label = app.add_subcommand("label", "Label a corpus, merge synonym categories, drop rare categories");
  label->add_option("--in", o.in, "Input corpus (JSONL)")->required();
  label->add_option("--lexicon", o.lexicon, "Lexicon TSV: word<TAB>pos<TAB>lemma, pos in {verb,noun,other}")->required();
  label->add_option("--synonyms", o.synonyms, "Synonym TSV: pos<TAB>lemma,lemma,...; enables merging");
  label->add_option("--word-vectors", o.word_vectors, "Word vectors TSV: lemma<TAB>space-separated floats");
  label->add_option("--merge-threshold", o.merge_threshold, "Cosine threshold for vector-gated merges")->capture_default_str();
  label->add_option("--min-count", o.min_count, "Drop categories with fewer members")->capture_default_str();
  label->add_option("--out", o.out, "Output corpus (JSONL)")->required();
  label->footer(kCorpusFormat);

  auto* split = app.add_subcommand("split", "Assign eft_train/eft_test/ift_train/ift_test by category");
  split->add_option("--corpus", o.corpus, "Labeled corpus (JSONL)")->required();
  split->add_option("--ratios", o.ratios, "Four fractions summing to 1: eft_train,eft_test,ift_train,ift_test")->required();
  seed_opt(split);
  split->add_option("--out", o.out, "Output corpus (JSONL)")->required();
  split->footer(kCorpusFormat);

  auto* embed = app.add_subcommand("embed-fallback", "Embed a corpus with hashed character n-grams");
  embed->add_option("--corpus", o.corpus, "Corpus (JSONL)")->required();
  embed->add_option("--dim", o.dim, "Embedding dimension (>= 8)")->capture_default_str();
  embed->add_option("--ngram", o.ngram, "Character n-gram length")->capture_default_str();
  seed_opt(embed);
  embed->add_option("--out", o.out, "Output embeddings (IEBV)")->required();
  embed->footer(kEmbeddingFormat);

  auto* pairs = app.add_subcommand("pairs", "Build contrastive triples or the intention-similarity pair set");
  pairs->add_option("--corpus", o.corpus, "Labeled corpus (JSONL)")->required();
  pairs->add_option("--mode", o.mode, "triples or iis")->capture_default_str();
  o.split.clear();
  pairs->add_option("--split", o.split, "Split to draw from, or all (default: eft_train for triples, ift_train for iis)");
  pairs->add_option("--n-same", o.n_same, "iis: same-category pairs")->capture_default_str();
  pairs->add_option("--n-random", o.n_random, "iis: uniformly random pairs")->capture_default_str();
  pairs->add_option("--per-anchor", o.per_anchor, "triples: hard negatives per anchor")->capture_default_str();
  pairs->add_flag("--no-hard-negatives", o.no_hard_negatives, "triples: leave hard_negative null");
  seed_opt(pairs);
  pairs->add_option("--out", o.out, "Output pairs (JSONL)")->required();
  pairs->footer("Triples: {\"anchor\", \"positive\", \"hard_negative\": id|null}. IIS pairs: {\"left\", \"right\", \"label\": 0|1}.");

  auto* train = app.add_subcommand("train", "Train a projection head with the contrastive loss");
  train->add_option("--corpus", o.corpus, "Corpus used to validate pair ids (optional)");
  train->add_option("--embeddings", o.embeddings, "Base embeddings (IEBV)")->required();
  train->add_option("--pairs", o.pairs, "Triples (JSONL)")->required();
  train->add_option("--tau", o.tau, "Temperature")->capture_default_str();
  train->add_option("--batch", o.batch, "Pairs per batch")->capture_default_str();
  train->add_option("--epochs", o.epochs, "Passes over the pairs")->capture_default_str();
  train->add_option("--lr", o.lr, "Gradient-descent step size")->required();
  train->add_option("--dim-out", o.dim_out, "Head output dimension (0: same as input)")->capture_default_str();
  train->add_option("--activation", o.activation, "identity or tanh")->capture_default_str();
  train->add_flag("--bias", o.bias, "Add a bias vector to the head");
  train->add_flag("--no-hard-negatives", o.no_hard_negatives, "Ignore hard negatives in the pair file");
  seed_opt(train);
  train->add_option("--out-head", o.out_head, "Head checkpoint (IEBH)")->required();
  train->add_option("--out-trace", o.out_trace, "Loss trace CSV: step,loss");
  train->footer("Head checkpoints: \"IEBH\" | u32 version | u32 dim_out | u32 dim_in | u32 activation | u32 has_bias | "
                "f32 weights row-major | f32 bias, little-endian.");

  auto* project = app.add_subcommand("project", "Apply a trained head to embeddings");
  project->add_option("--embeddings", o.embeddings, "Input embeddings (IEBV)")->required();
  project->add_option("--head", o.head, "Head checkpoint (IEBH)")->required();
  project->add_option("--out", o.out, "Output embeddings (IEBV)")->required();

  auto* ict = app.add_subcommand("eval-ict", "Instruction clustering: k-means scored by ARI, CP, Homo, Silh");
  ict->add_option("--embeddings", o.embeddings, "Embeddings (IEBV)")->required();
  ict->add_option("--corpus", o.corpus, "Labeled corpus (JSONL)")->required();
  ict->add_option("--split", o.split, "Split to evaluate, or all");
  ict->add_option("--k", o.k, "Cluster count (0: number of categories)")->capture_default_str();
  restarts_opt(ict);
  seed_opt(ict);
  ict->add_option("--out", o.out, "Report (JSON)")->required();

  auto* iis = app.add_subcommand("eval-iis", "Spearman correlation of pair cosines with pair labels");
  iis->add_option("--embeddings", o.embeddings, "Embeddings (IEBV)")->required();
  iis->add_option("--pairs", o.pairs, "IIS pairs (JSONL)")->required();
  iis->add_option("--out", o.out, "Report (JSON)")->required();

  auto* select = app.add_subcommand("select", "Pick the instruction nearest each k-means center");
  select->add_option("--embeddings", o.embeddings, "Embeddings (IEBV)")->required();
  select->add_option("--corpus", o.corpus, "Corpus to restrict rows with --split");
  select->add_option("--split", o.split, "Split to select from, or all");
  select->add_option("--k", o.k, "Number of clusters")->required();
  restarts_opt(select);
  seed_opt(select);
  select->add_option("--out", o.out, "Chosen ids (CSV with header id)")->required();

  auto* tiny = app.add_subcommand("tinybench", "Tiny benchmarks by cluster centers, with an optional error study");
  tiny->add_option("--embeddings", o.embeddings, "Embeddings (IEBV)")->required();
  tiny->add_option("--corpus", o.corpus, "Corpus to restrict rows with --split");
  tiny->add_option("--split", o.split, "Split to select from, or all");
  tiny->add_option("--sizes", o.sizes, "Comma-separated subset sizes")->capture_default_str();
  tiny->add_option("--scores", o.scores, "Per-instruction scores CSV: id,score");
  tiny->add_option("--runs", o.runs, "Study runs")->capture_default_str();
  tiny->add_option("--study-out", o.study_out, "Study report (JSON)");
  restarts_opt(tiny);
  seed_opt(tiny);
  tiny->add_option("--out", o.out, "Chosen ids (CSV: size,id)")->required();

  auto* retrieve = app.add_subcommand("retrieve", "Top-k demonstrations by cosine, with optional ICL prompts");
  retrieve->add_option("--queries", o.queries, "Query embeddings (IEBV)")->required();
  retrieve->add_option("--pool", o.pool, "Pool embeddings (IEBV)")->required();
  retrieve->add_option("--topk", o.topk, "Demonstrations per query")->capture_default_str();
  retrieve->add_option("--query-corpus", o.query_corpus, "Query corpus (JSONL) for prompts");
  retrieve->add_option("--pool-corpus", o.pool_corpus, "Pool corpus (JSONL, optional \"response\" field) for prompts");
  retrieve->add_option("--prompts-out", o.prompts_out, "Prompts (JSONL: {\"query\", \"prompt\"})");
  retrieve->add_option("--out", o.out, "Hits (JSONL: {\"query\", \"demos\": [ids]})")->required();

  auto* xcorr = app.add_subcommand("xcorr", "Cross-dataset task correlation matrix");
  xcorr->add_option("--set", o.sets, "Dataset as name=path.iebv or path.iebv (repeatable)")->required();
  xcorr->add_option("--exclude-self", o.exclude_self, "auto (same file only), on or off")->capture_default_str();
  xcorr->add_option("--out", o.out, "Matrix (CSV)")->required();
  xcorr->add_option("--out-json", o.out_json, "Matrix (JSON: {\"datasets\", \"matrix\"})");

  auto* pca = app.add_subcommand("plot-pca", "Two-dimensional PCA coordinates and scatter plot");
  pca->add_option("--embeddings", o.embeddings, "Embeddings (IEBV)")->required();
  pca->add_option("--corpus", o.corpus, "Corpus for category labels");
  pca->add_option("--split", o.split, "Split to plot, or all");
  pca->add_option("--out", o.out, "Coordinates (CSV: id,x,y,label)")->required();
  pca->add_option("--out-svg", o.out_svg, "Scatter plot (SVG)");

  auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  replay->add_option("--manifest", o.manifest, "Manifest (JSON)")->required();

  for (auto* s : app.get_subcommands({})) add_threads(s, threads);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }
  if (threads > 0) ieb::set_max_threads(threads);

  CLI::App* chosen = app.get_subcommands().front();
  const std::string cmd = chosen->get_name();
  if (cmd == "replay") return cmd_replay(o);
  if (o.split.empty() && cmd != "pairs") o.split = "all";
  Run run(cmd, args);
  const int rc = dispatch(cmd, o, run);
  run.write_manifest();
  return rc;
}

int dispatch(const std::string& cmd, const Options& o, Run& run) {
  if (cmd == "label") return cmd_label(o, run);
  if (cmd == "split") return cmd_split(o, run);
  if (cmd == "embed-fallback") return cmd_embed(o, run);
  if (cmd == "pairs") return cmd_pairs(o, run);
  if (cmd == "train") return cmd_train(o, run);
  if (cmd == "project") return cmd_project(o, run);
  if (cmd == "eval-ict") return cmd_eval_ict(o, run);
  if (cmd == "eval-iis") return cmd_eval_iis(o, run);
  if (cmd == "select") return cmd_select(o, run);
  if (cmd == "tinybench") return cmd_tinybench(o, run);
  if (cmd == "retrieve") return cmd_retrieve(o, run);
  if (cmd == "xcorr") return cmd_xcorr(o, run);
  if (cmd == "plot-pca") return cmd_plot_pca(o, run);
  throw ieb::Error(ieb::Errc::parse, "unknown subcommand '" + cmd + "'");
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run_cli(args);
  } catch (const ieb::Error& e) {
    std::cerr << "error: " << ieb::to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
