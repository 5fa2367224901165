#ifndef IEB_CORPUS_HPP
#define IEB_CORPUS_HPP

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ieb/common.hpp"

namespace ieb {

enum class Split { eft_train, eft_test, ift_train, ift_test, unassigned };

inline constexpr std::array<Split, 4> kAssignableSplits = {Split::eft_train, Split::eft_test,
                                                           Split::ift_train, Split::ift_test};

inline const char* to_string(Split s) {
  switch (s) {
    case Split::eft_train: return "eft_train";
    case Split::eft_test: return "eft_test";
    case Split::ift_train: return "ift_train";
    case Split::ift_test: return "ift_test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

inline std::optional<Split> parse_split(std::string_view s) {
  for (Split v : {Split::eft_train, Split::eft_test, Split::ift_train, Split::ift_test, Split::unassigned})
    if (s == to_string(v)) return v;
  return std::nullopt;
}

enum class LabelKind {
  verb_noun,
  wh_knowledge,
  what_math,
  yesno_knowledge,
  yesno_task,
  verb_knowledge,
  verb_only,
  verb_math,
  noun_knowledge,
};

inline constexpr std::array<LabelKind, 9> kAllLabelKinds = {
    LabelKind::verb_noun,      LabelKind::wh_knowledge, LabelKind::what_math,
    LabelKind::yesno_knowledge, LabelKind::yesno_task,  LabelKind::verb_knowledge,
    LabelKind::verb_only,      LabelKind::verb_math,    LabelKind::noun_knowledge};

inline const char* to_string(LabelKind k) {
  switch (k) {
    case LabelKind::verb_noun: return "verb_noun";
    case LabelKind::wh_knowledge: return "wh_knowledge";
    case LabelKind::what_math: return "what_math";
    case LabelKind::yesno_knowledge: return "yesno_knowledge";
    case LabelKind::yesno_task: return "yesno_task";
    case LabelKind::verb_knowledge: return "verb_knowledge";
    case LabelKind::verb_only: return "verb_only";
    case LabelKind::verb_math: return "verb_math";
    case LabelKind::noun_knowledge: return "noun_knowledge";
  }
  return "verb_noun";
}

inline std::optional<LabelKind> parse_label_kind(std::string_view s) {
  for (LabelKind k : kAllLabelKinds)
    if (s == to_string(k)) return k;
  return std::nullopt;
}

inline bool is_wh_word(std::string_view w) {
  return w == "what" || w == "when" || w == "where" || w == "who" || w == "why" || w == "how";
}

/// Task category of an instruction.
struct TaskLabel {
  LabelKind kind = LabelKind::verb_noun;
  std::optional<std::string> verb;
  std::optional<std::string> noun;
  std::optional<std::string> wh_word;

  static TaskLabel verb_noun(std::string v, std::string n) {
    return {LabelKind::verb_noun, std::move(v), std::move(n), std::nullopt};
  }
  static TaskLabel with_verb(LabelKind k, std::string v) { return {k, std::move(v), std::nullopt, std::nullopt}; }
  static TaskLabel with_wh(LabelKind k, std::string wh) { return {k, std::nullopt, std::nullopt, std::move(wh)}; }
  static TaskLabel bare(LabelKind k) { return {k, std::nullopt, std::nullopt, std::nullopt}; }
  static TaskLabel noun_knowledge(std::string n) {
    return {LabelKind::noun_knowledge, std::nullopt, std::move(n), std::nullopt};
  }

  // Canonical "kind|verb|noun|wh_word" key; absent fields are empty.
  std::string key() const {
    std::string k = to_string(kind);
    k += '|';
    k += verb.value_or("");
    k += '|';
    k += noun.value_or("");
    k += '|';
    k += wh_word.value_or("");
    return k;
  }

  // Checks the per-kind field requirements.
  bool valid() const {
    switch (kind) {
      case LabelKind::verb_noun: return verb && noun;
      case LabelKind::wh_knowledge:
      case LabelKind::what_math: return wh_word && is_wh_word(*wh_word);
      case LabelKind::verb_only:
      case LabelKind::verb_knowledge:
      case LabelKind::verb_math: return verb && !noun;
      case LabelKind::noun_knowledge: return noun && !verb;
      case LabelKind::yesno_knowledge:
      case LabelKind::yesno_task: return true;
    }
    return false;
  }

  friend bool operator==(const TaskLabel&, const TaskLabel&) = default;
};

struct Instruction {
  std::string id;
  std::string text;
  std::optional<TaskLabel> label;
  Split split = Split::unassigned;
  std::string source;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

/// Ordered instruction collection with a category index keyed by label key.
///
/// Immutable after construction; operations that change membership or labels
/// return a new Corpus so the index can never drift from the labels.
class Corpus {
 public:
  Corpus() = default;

  explicit Corpus(std::vector<Instruction> instructions) : instructions_(std::move(instructions)) {
    std::unordered_set<std::string> seen;
    for (const auto& ins : instructions_) {
      if (trim(ins.text).empty())
        throw Error(Errc::precondition, "instruction '" + ins.id + "' has empty text");
      if (!seen.insert(ins.id).second) throw Error(Errc::conflict, "duplicate instruction id '" + ins.id + "'");
      if (ins.label) {
        if (!ins.label->valid())
          throw Error(Errc::precondition, "instruction '" + ins.id + "' has an invalid label " + ins.label->key());
        index_[ins.label->key()].push_back(ins.id);
      }
    }
    for (std::size_t i = 0; i < instructions_.size(); ++i) position_.emplace(instructions_[i].id, i);
  }

  const std::vector<Instruction>& instructions() const { return instructions_; }
  const std::map<std::string, std::vector<std::string>>& category_index() const { return index_; }
  std::size_t size() const { return instructions_.size(); }
  bool empty() const { return instructions_.empty(); }

  const Instruction& at(std::string_view id) const {
    auto it = position_.find(std::string(id));
    if (it == position_.end()) throw Error(Errc::not_found, "unknown instruction id '" + std::string(id) + "'");
    return instructions_[it->second];
  }
  bool contains(std::string_view id) const { return position_.count(std::string(id)) > 0; }
  std::size_t position(std::string_view id) const {
    auto it = position_.find(std::string(id));
    if (it == position_.end()) throw Error(Errc::not_found, "unknown instruction id '" + std::string(id) + "'");
    return it->second;
  }

  Corpus restricted_to(Split split) const {
    std::vector<Instruction> out;
    for (const auto& ins : instructions_)
      if (ins.split == split) out.push_back(ins);
    return Corpus(std::move(out));
  }

  friend bool operator==(const Corpus& a, const Corpus& b) { return a.instructions_ == b.instructions_; }

 private:
  std::vector<Instruction> instructions_;
  std::map<std::string, std::vector<std::string>> index_;
  std::map<std::string, std::size_t> position_;
};

// ---------------------------------------------------------------------------
// JSONL persistence

inline nlohmann::ordered_json to_json(const TaskLabel& label) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(label.kind);
  const auto opt = [](const std::optional<std::string>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  j["verb"] = opt(label.verb);
  j["noun"] = opt(label.noun);
  j["wh_word"] = opt(label.wh_word);
  return j;
}

inline nlohmann::ordered_json to_json(const Instruction& ins) {
  nlohmann::ordered_json j;
  j["id"] = ins.id;
  j["text"] = ins.text;
  j["label"] = ins.label ? to_json(*ins.label) : nlohmann::ordered_json(nullptr);
  j["split"] = to_string(ins.split);
  j["source"] = ins.source;
  return j;
}

namespace detail {

inline std::optional<std::string> optional_string(const nlohmann::json& j, const char* field, std::size_t line) {
  if (!j.contains(field) || j.at(field).is_null()) return std::nullopt;
  if (!j.at(field).is_string())
    throw Error(Errc::parse, "line " + std::to_string(line) + ": field '" + field + "' must be a string or null");
  return j.at(field).get<std::string>();
}

inline Instruction instruction_from_json(const nlohmann::json& j, std::size_t line) {
  const auto fail = [line](const std::string& what) {
    return Error(Errc::parse, "line " + std::to_string(line) + ": " + what);
  };
  if (!j.is_object()) throw fail("record is not a JSON object");
  Instruction ins;
  if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string field 'id'");
  if (!j.contains("text") || !j["text"].is_string()) throw fail("missing string field 'text'");
  ins.id = j["id"].get<std::string>();
  ins.text = j["text"].get<std::string>();
  if (trim(ins.text).empty()) throw fail("field 'text' is empty");
  if (j.contains("label") && !j["label"].is_null()) {
    const auto& l = j["label"];
    if (!l.is_object() || !l.contains("kind") || !l["kind"].is_string()) throw fail("label needs a string 'kind'");
    auto kind = parse_label_kind(l["kind"].get<std::string>());
    if (!kind) throw fail("unknown label kind '" + l["kind"].get<std::string>() + "'");
    TaskLabel label{*kind, optional_string(l, "verb", line), optional_string(l, "noun", line),
                    optional_string(l, "wh_word", line)};
    if (!label.valid()) throw fail("label fields inconsistent with kind: " + label.key());
    ins.label = std::move(label);
  }
  if (auto s = optional_string(j, "split", line)) {
    auto split = parse_split(*s);
    if (!split) throw fail("unknown split '" + *s + "'");
    ins.split = *split;
  }
  ins.source = optional_string(j, "source", line).value_or("");
  return ins;
}

}  // namespace detail

inline Corpus parse_corpus(std::istream& in) {
  std::vector<Instruction> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    Instruction ins = detail::instruction_from_json(j, line_no);
    if (!seen.insert(ins.id).second)
      throw Error(Errc::conflict, "line " + std::to_string(line_no) + ": duplicate id '" + ins.id + "'");
    records.push_back(std::move(ins));
  }
  return Corpus(std::move(records));
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open corpus file '" + path + "'");
  try {
    return parse_corpus(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

inline void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& ins : corpus.instructions()) out << to_json(ins).dump() << '\n';
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write corpus file '" + path + "'");
  write_corpus(corpus, out);
  out.flush();
  if (!out) throw Error(Errc::io, "write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Split assignment

/// Fractions of instructions for eft_train, eft_test, ift_train, ift_test.
using SplitRatios = std::array<double, 4>;

/// Assigns every instruction to one of the four splits.
///
/// Whole categories are dealt, in seeded random order, into eft_train, then
/// eft_test, then the IFT pool, each bucket filling until its cumulative share
/// of instructions is reached. IFT instructions are then shuffled and divided
/// between ift_train and ift_test, so IFT categories may straddle both.
inline Corpus make_splits(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw Error(Errc::precondition, "split ratios must be finite and >= 0");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw Error(Errc::precondition, "split ratios must sum to 1 (got " + std::to_string(total) + ")");
  for (const auto& ins : corpus.instructions())
    if (!ins.label) throw Error(Errc::precondition, "instruction '" + ins.id + "' is unlabeled; label before splitting");

  Rng rng(seed);
  std::vector<std::string> categories;
  for (const auto& [key, ids] : corpus.category_index()) categories.push_back(key);
  rng.shuffle(categories);

  // Bucket 0: eft_train, 1: eft_test, 2: IFT pool.
  const std::array<double, 3> weights = {ratios[0], ratios[1], ratios[2] + ratios[3]};
  int last_nonzero = 0;
  for (int b = 0; b < 3; ++b)
    if (weights[b] > 0.0) last_nonzero = b;
  const double n = static_cast<double>(corpus.size());

  std::map<std::string, int> bucket_of;
  double filled = 0.0;
  for (const auto& key : categories) {
    int bucket = last_nonzero;
    double cumulative = 0.0;
    for (int b = 0; b < 3; ++b) {
      cumulative += weights[b];
      if (weights[b] > 0.0 && filled < cumulative * n - 1e-9) {
        bucket = b;
        break;
      }
    }
    bucket_of[key] = bucket;
    filled += static_cast<double>(corpus.category_index().at(key).size());
  }

  std::vector<Instruction> out = corpus.instructions();
  std::vector<std::size_t> ift_members;
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (bucket_of.at(out[i].label->key())) {
      case 0: out[i].split = Split::eft_train; break;
      case 1: out[i].split = Split::eft_test; break;
      default: ift_members.push_back(i); break;
    }
  }
  rng.shuffle(ift_members);
  const double ift_weight = ratios[2] + ratios[3];
  const std::size_t n_ift_train =
      ift_weight > 0.0 ? static_cast<std::size_t>(std::llround(static_cast<double>(ift_members.size()) * ratios[2] / ift_weight))
                       : 0;
  for (std::size_t j = 0; j < ift_members.size(); ++j)
    out[ift_members[j]].split = j < n_ift_train ? Split::ift_train : Split::ift_test;
  return Corpus(std::move(out));
}

}  // namespace ieb

#endif  // IEB_CORPUS_HPP
