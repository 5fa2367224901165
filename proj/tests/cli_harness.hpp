#ifndef IEB_TESTS_CLI_HARNESS_HPP
#define IEB_TESTS_CLI_HARNESS_HPP

// Runs the ieb binary as a child process and drives the full pipeline over
// synthetic inputs.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ieb/ieb.hpp"
#include "synthetic.hpp"

namespace harness {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out, err;
};

inline std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// stdout and stderr are captured through files in `dir`.
inline Outcome run(const fs::path& dir, const std::vector<std::string>& args) {
  std::string cmd = quote(IEB_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  const fs::path out = dir / ".stdout", err = dir / ".stderr";
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  o.err = slurp(err);
  fs::remove(out);
  fs::remove(err);
  return o;
}

// Blob embeddings and a matching one-category-per-blob corpus.
inline void write_blob_fixture(const fs::path& dir, const synth::Blobs& b) {
  ieb::write_embeddings(b.matrix, (dir / "blobs.iebv").string());
  ieb::save_corpus(synth::blob_corpus(b), (dir / "blobs.jsonl").string());
}

// Pipeline inputs: unlabeled "<Verb> a <noun> about <filler>." instructions
// and per-instruction scores.
inline std::set<std::string> write_pipeline_inputs(const fs::path& dir) {
  ieb::Rng rng(9);
  std::vector<std::string> vocab;
  for (int i = 0; i < 60; ++i) vocab.push_back(synth::pseudo_word(rng));
  std::vector<ieb::Instruction> raw;
  std::string scores = "id,score\n";
  for (const auto& v : synth::verbs())
    for (const auto& n : synth::nouns())
      for (int i = 0; i < 12; ++i) {
        ieb::Instruction ins;
        ins.id = v + "_" + n + "_" + std::to_string(i);
        ins.text = std::string(1, static_cast<char>(v[0] - 'a' + 'A')) + v.substr(1) + " a " + n + " about the " +
                   vocab[rng.uniform_index(vocab.size())] + " " + vocab[rng.uniform_index(vocab.size())] + ".";
        raw.push_back(ins);
        scores += ins.id + "," + std::to_string(0.05 * static_cast<double>(v.size()) + 0.1 * rng.uniform01()) + "\n";
      }
  ieb::save_corpus(ieb::Corpus(std::move(raw)), (dir / "raw.jsonl").string());
  ieb::binio::write_file((dir / "scores.csv").string(), scores);
  return {"raw.jsonl", "scores.csv"};
}

// Every subcommand in sequence. Returns the first failing step, or an empty
// string when all succeed.
inline std::string run_pipeline(const fs::path& dir) {
  const auto p = [&](const std::string& name) { return (dir / name).string(); };
  const std::vector<std::vector<std::string>> steps = {
      {"label", "--in", p("raw.jsonl"), "--lexicon", std::string(IEB_DATA_DIR) + "/lexicon.tsv", "--synonyms",
       std::string(IEB_DATA_DIR) + "/synonyms.tsv", "--min-count", "5", "--out", p("labeled.jsonl")},
      {"split", "--corpus", p("labeled.jsonl"), "--ratios", "0.5,0.2,0.2,0.1", "--seed", "3", "--out", p("split.jsonl")},
      {"embed-fallback", "--corpus", p("split.jsonl"), "--dim", "128", "--seed", "3", "--out", p("base.iebv")},
      {"embed-fallback", "--corpus", p("split.jsonl"), "--dim", "128", "--ngram", "4", "--seed", "4", "--out",
       p("alt.iebv")},
      {"pairs", "--corpus", p("split.jsonl"), "--mode", "triples", "--seed", "3", "--out", p("triples.jsonl")},
      {"pairs", "--corpus", p("split.jsonl"), "--mode", "iis", "--n-same", "40", "--n-random", "40", "--seed", "3",
       "--out", p("iis.jsonl")},
      {"train", "--embeddings", p("base.iebv"), "--pairs", p("triples.jsonl"), "--corpus", p("split.jsonl"), "--lr",
       "0.5", "--dim-out", "32", "--epochs", "2", "--seed", "3", "--out-head", p("head.iebh"), "--out-trace",
       p("trace.csv")},
      {"project", "--embeddings", p("base.iebv"), "--head", p("head.iebh"), "--out", p("proj.iebv")},
      {"eval-ict", "--embeddings", p("proj.iebv"), "--corpus", p("split.jsonl"), "--split", "eft_test", "--seed", "3",
       "--out", p("ict.json")},
      {"eval-iis", "--embeddings", p("proj.iebv"), "--pairs", p("iis.jsonl"), "--out", p("iis_report.json")},
      {"select", "--embeddings", p("proj.iebv"), "--k", "10", "--seed", "3", "--out", p("selected.csv")},
      {"tinybench", "--embeddings", p("proj.iebv"), "--sizes", "5,20", "--scores", p("scores.csv"), "--runs", "5",
       "--restarts", "2", "--seed", "3", "--study-out", p("study.json"), "--out", p("tiny.csv")},
      {"retrieve", "--queries", p("proj.iebv"), "--pool", p("proj.iebv"), "--topk", "2", "--query-corpus",
       p("split.jsonl"), "--pool-corpus", p("split.jsonl"), "--prompts-out", p("prompts.jsonl"), "--out",
       p("demos.jsonl")},
      {"xcorr", "--set", "base=" + p("base.iebv"), "--set", "alt=" + p("alt.iebv"), "--out", p("xcorr.csv"),
       "--out-json", p("xcorr.json")},
      {"plot-pca", "--embeddings", p("proj.iebv"), "--corpus", p("split.jsonl"), "--out", p("pca.csv"), "--out-svg",
       p("pca.svg")},
  };
  for (const auto& s : steps) {
    const auto o = run(dir, s);
    if (o.code != 0) return s[0] + " exited " + std::to_string(o.code) + ": " + o.err;
  }
  return "";
}

// Digest of every regular file in `dir` not listed in `skip`.
inline std::map<std::string, std::string> digests(const fs::path& dir, const std::set<std::string>& skip = {}) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (!e.is_regular_file() || skip.count(name)) continue;
    out[name] = ieb::digest_bytes(slurp(e.path()));
  }
  return out;
}

inline void remove_except(const fs::path& dir, const std::set<std::string>& keep) {
  for (const auto& e : fs::directory_iterator(dir))
    if (!keep.count(e.path().filename().string())) fs::remove_all(e.path());
}

}  // namespace harness

#endif  // IEB_TESTS_CLI_HARNESS_HPP
