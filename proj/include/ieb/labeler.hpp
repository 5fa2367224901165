#ifndef IEB_LABELER_HPP
#define IEB_LABELER_HPP

#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ieb/common.hpp"
#include "ieb/corpus.hpp"
#include "ieb/embstore.hpp"

namespace ieb {

enum class Pos { verb, noun, other };

inline const char* to_string(Pos p) {
  switch (p) {
    case Pos::verb: return "verb";
    case Pos::noun: return "noun";
    case Pos::other: return "other";
  }
  return "other";
}

inline std::optional<Pos> parse_pos(std::string_view s) {
  if (s == "verb") return Pos::verb;
  if (s == "noun") return Pos::noun;
  if (s == "other") return Pos::other;
  return std::nullopt;
}

struct LexiconEntry {
  std::string surface;
  std::set<Pos> pos_tags;
  std::string lemma;
};

/// Surface form -> (part of speech -> lemma). Doubles as the exception table
/// for the lemmatizers: irregular forms are listed with their base lemma.
class Lexicon {
 public:
  void add(const LexiconEntry& e) {
    if (e.lemma.empty()) throw Error(Errc::parse, "lexicon entry '" + e.surface + "' has an empty lemma");
    if (e.surface != to_lower_ascii(e.surface))
      throw Error(Errc::parse, "lexicon surface '" + e.surface + "' is not lowercase");
    for (Pos p : e.pos_tags) entries_[e.surface][p] = e.lemma;
  }

  bool known(std::string_view surface) const { return entries_.count(std::string(surface)) > 0; }

  bool has(std::string_view surface, Pos pos) const {
    auto it = entries_.find(std::string(surface));
    return it != entries_.end() && it->second.count(pos) > 0;
  }

  std::optional<std::string> lemma(std::string_view surface, Pos pos) const {
    auto it = entries_.find(std::string(surface));
    if (it == entries_.end()) return std::nullopt;
    auto jt = it->second.find(pos);
    if (jt == it->second.end()) return std::nullopt;
    return jt->second;
  }

  // True when the surface is listed as its own lemma for this pos.
  bool is_base(std::string_view surface, Pos pos) const {
    auto l = lemma(surface, pos);
    return l && *l == surface;
  }

  std::size_t size() const { return entries_.size(); }

  // Every listed lemma must itself be a fixed point, otherwise lemmatizing
  // would not be idempotent.
  void validate() const {
    for (const auto& [surface, by_pos] : entries_)
      for (const auto& [pos, lem] : by_pos) {
        auto target = lemma(lem, pos);
        if (target && *target != lem)
          throw Error(Errc::parse, "lexicon lemma '" + lem + "' (" + to_string(pos) + ") of '" + surface +
                                       "' maps further to '" + *target + "'");
      }
  }

 private:
  std::unordered_map<std::string, std::map<Pos, std::string>> entries_;
};

/// Reads `surface<TAB>pos<TAB>lemma` lines; '#' starts a comment line.
inline Lexicon parse_lexicon(std::istream& in, const std::string& name = "<lexicon>") {
  Lexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    auto fields = split_on(line, '\t');
    if (fields.size() != 3)
      throw Error(Errc::parse, name + ": line " + std::to_string(line_no) + ": expected surface<TAB>pos<TAB>lemma");
    auto pos = parse_pos(trim(fields[1]));
    if (!pos) throw Error(Errc::parse, name + ": line " + std::to_string(line_no) + ": unknown pos '" + fields[1] + "'");
    lex.add({trim(fields[0]), {*pos}, trim(fields[2])});
  }
  lex.validate();
  return lex;
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open lexicon '" + path + "'");
  return parse_lexicon(in, path);
}

// ---------------------------------------------------------------------------
// Lemmatizers

namespace detail {

inline bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }
inline bool is_consonant(char c) { return c >= 'a' && c <= 'z' && !is_vowel(c); }
inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}
inline bool has_vowel(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return is_vowel(c) || c == 'y'; });
}

// Stem left after stripping -ing/-ed: prefer lexicon hits, then undo
// consonant doubling, then restore a silent e for endings that need one.
inline std::string repair_stem(const std::string& stem, const Lexicon& lex) {
  if (lex.is_base(stem, Pos::verb)) return stem;
  if (lex.is_base(stem + "e", Pos::verb)) return stem + "e";
  const std::size_t n = stem.size();
  const bool doubled = n >= 2 && stem[n - 1] == stem[n - 2] && is_consonant(stem[n - 1]);
  if (doubled && lex.is_base(stem.substr(0, n - 1), Pos::verb)) return stem.substr(0, n - 1);
  if (doubled && stem[n - 1] != 'l' && stem[n - 1] != 's' && stem[n - 1] != 'z') return stem.substr(0, n - 1);
  static const std::array<std::string_view, 22> kCvcE = {"at", "iz", "yz", "ib", "uc", "ag", "ov", "iv",
                                                         "ir", "ur", "os", "ud", "id", "in", "ot", "ar",
                                                         "ok", "ut", "il", "ul", "ym", "um"};
  static const std::array<std::string_view, 12> kAlwaysE = {"v", "z", "u", "dg", "rs", "ns", "ps", "rg",
                                                           "nc", "rc", "eas", "ys"};
  for (auto s : kAlwaysE)
    if (ends_with(stem, s)) return stem + "e";
  if (n >= 3 && is_consonant(stem[n - 1]) && (stem[n - 1] == 'l') && is_consonant(stem[n - 2])) return stem + "e";
  if (n >= 3 && is_consonant(stem[n - 3]))
    for (auto s : kCvcE)
      if (ends_with(stem, s)) return stem + "e";
  return stem;
}

inline std::string verb_step(const std::string& t, const Lexicon& lex) {
  if (auto l = lex.lemma(t, Pos::verb)) return *l;
  const std::size_t n = t.size();
  if (n > 4 && (ends_with(t, "ied") || ends_with(t, "ies"))) return t.substr(0, n - 3) + "y";
  if (n > 4 && ends_with(t, "ing")) {
    const std::string stem = t.substr(0, n - 3);
    if (stem.size() >= 2 && has_vowel(stem)) return repair_stem(stem, lex);
    return t;
  }
  if (n > 3 && ends_with(t, "ed")) {
    const std::string stem = t.substr(0, n - 2);
    if (lex.is_base(t.substr(0, n - 1), Pos::verb)) return t.substr(0, n - 1);
    if (stem.size() >= 2 && has_vowel(stem)) return repair_stem(stem, lex);
    return t;
  }
  if (n > 3 && ends_with(t, "es")) {
    if (lex.is_base(t.substr(0, n - 1), Pos::verb)) return t.substr(0, n - 1);
    for (auto s : {"ches", "shes", "sses", "xes", "zes", "oes"})
      if (ends_with(t, s)) return t.substr(0, n - 2);
  }
  if (n > 3 && t.back() == 's' && !ends_with(t, "ss") && !ends_with(t, "us") && !ends_with(t, "is"))
    return t.substr(0, n - 1);
  return t;
}

inline std::string noun_step(const std::string& t, const Lexicon& lex) {
  if (auto l = lex.lemma(t, Pos::noun)) return *l;
  const std::size_t n = t.size();
  if (n > 4 && ends_with(t, "ies")) return t.substr(0, n - 3) + "y";
  if (n > 3 && ends_with(t, "es")) {
    if (lex.is_base(t.substr(0, n - 1), Pos::noun)) return t.substr(0, n - 1);
    if (lex.is_base(t.substr(0, n - 2), Pos::noun)) return t.substr(0, n - 2);
    for (auto s : {"ches", "shes", "sses", "xes", "zes"})
      if (ends_with(t, s)) return t.substr(0, n - 2);
  }
  if (n > 3 && t.back() == 's' && !ends_with(t, "ss") && !ends_with(t, "us") && !ends_with(t, "is") &&
      !ends_with(t, "ics"))
    return t.substr(0, n - 1);
  return t;
}

// Iterates a shrinking rewrite to its fixed point, which makes the
// lemmatizers idempotent by construction.
template <typename Step>
std::string fixed_point(std::string t, const Lexicon& lex, Step step) {
  for (int i = 0; i < 16; ++i) {
    std::string next = step(t, lex);
    if (next == t) break;
    t = std::move(next);
  }
  return t;
}

}  // namespace detail

/// Base form of a verb token: lexicon exceptions first, then suffix rules.
inline std::string lemmatize_verb(std::string_view token, const Lexicon& lex) {
  return detail::fixed_point(to_lower_ascii(token), lex, detail::verb_step);
}

/// Singular form of a noun token: lexicon exceptions first, then suffix rules.
inline std::string singularize_noun(std::string_view token, const Lexicon& lex) {
  return detail::fixed_point(to_lower_ascii(token), lex, detail::noun_step);
}

// ---------------------------------------------------------------------------
// Tokenizer

struct Token {
  enum class Kind { word, number, quote, boundary };
  Kind kind = Kind::word;
  std::string text;  // lowercased
  bool capitalized = false;
};

namespace detail {

// Byte length of a quote mark starting at s[i], or 0.
inline std::size_t quote_len(std::string_view s, std::size_t i) {
  if (s[i] == '"') return 1;
  if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 && static_cast<unsigned char>(s[i + 1]) == 0x80) {
    const unsigned char c = static_cast<unsigned char>(s[i + 2]);
    if (c == 0x9C || c == 0x9D || c == 0x98 || c == 0x99) return 3;
  }
  return 0;
}

inline bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace detail

/// Splits text into word, number, quoted-span and clause-boundary tokens.
/// Quoted spans collapse into one quote token so their content never
/// competes for the verb or noun slots.
inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::size_t q = detail::quote_len(text, i)) {
      // A curly right single quote inside a word is an apostrophe.
      const bool apostrophe = q == 3 && static_cast<unsigned char>(text[i + 2]) == 0x99 && i > 0 &&
                              detail::is_word_byte(static_cast<unsigned char>(text[i - 1]));
      if (!apostrophe) {
        std::size_t j = i + q;
        std::size_t close = std::string_view::npos;
        while (j < n) {
          if (std::size_t q2 = detail::quote_len(text, j)) {
            const bool inner_apostrophe = q2 == 3 && static_cast<unsigned char>(text[j + 2]) == 0x99 && j + 3 < n &&
                                          detail::is_word_byte(static_cast<unsigned char>(text[j + 3])) &&
                                          detail::is_word_byte(static_cast<unsigned char>(text[j - 1]));
            if (!inner_apostrophe) {
              close = j + q2;
              break;
            }
            j += q2;
          } else {
            ++j;
          }
        }
        if (close != std::string_view::npos) {
          out.push_back({Token::Kind::quote, "<q>", false});
          i = close;
          continue;
        }
      }
      i += q;
      continue;
    }
    if (c == '.' || c == ',' || c == ':' || c == ';' || c == '!' || c == '?' || c == '(' || c == ')' || c == '\n') {
      if (out.empty() || out.back().kind != Token::Kind::boundary) out.push_back({Token::Kind::boundary, std::string(1, static_cast<char>(c)), false});
      ++i;
      continue;
    }
    if (detail::is_word_byte(c)) {
      std::size_t j = i;
      std::string raw;
      bool digit = false;
      while (j < n) {
        const unsigned char d = static_cast<unsigned char>(text[j]);
        if (d >= 0x80 && detail::quote_len(text, j)) break;
        if (detail::is_word_byte(d)) {
          digit = digit || std::isdigit(d);
          raw.push_back(static_cast<char>(d));
          ++j;
        } else if ((d == '\'' || d == '.' || d == ',') && j + 1 < n &&
                   detail::is_word_byte(static_cast<unsigned char>(text[j + 1])) &&
                   (d == '\'' || (digit && std::isdigit(static_cast<unsigned char>(text[j + 1]))))) {
          raw.push_back(static_cast<char>(d));
          ++j;
        } else {
          break;
        }
      }
      std::string lower = to_lower_ascii(raw);
      if (detail::ends_with(lower, "'s")) lower.resize(lower.size() - 2);
      const bool cap = raw[0] >= 'A' && raw[0] <= 'Z';
      out.push_back({digit ? Token::Kind::number : Token::Kind::word, std::move(lower), cap});
      i = j;
      continue;
    }
    ++i;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rule-based labeling

namespace detail {

using WordSet = std::unordered_set<std::string_view>;

inline const WordSet& auxiliaries() {
  static const WordSet s = {"is", "are", "was", "were", "do", "does", "did", "can", "could",
                            "should", "will", "would", "has", "have"};
  return s;
}

inline const WordSet& arithmetic_keywords() {
  static const WordSet s = {"add", "added", "subtract", "multiply", "divide", "sum",
                            "product", "value", "result", "simplify", "solve"};
  return s;
}

inline const WordSet& arithmetic_verbs() {
  static const WordSet s = {"multiply", "simplify", "compute", "add", "subtract", "divide"};
  return s;
}

// Cues that a yes/no question asks for a task on supplied material rather
// than for world knowledge.
inline const WordSet& yesno_task_cues() {
  static const WordSet s = {"following", "given", "this", "these", "below", "above", "sentence", "sentences",
                            "text", "passage", "paragraph", "statement", "statements", "phrase", "word",
                            "words", "comma", "grammatically", "grammatical", "correct", "you", "me",
                            "<q>", "spelling", "punctuation", "rewrite", "classify", "edit", "write"};
  return s;
}

inline const WordSet& knowledge_markers() {
  static const WordSet s = {"about", "that", "of", "what", "how", "why", "who", "when", "where", "whether", "if", "which", "regarding"};
  return s;
}

// Words skipped while looking for the object head.
inline const WordSet& np_fillers() {
  static const WordSet s = {"a", "an", "the", "me", "us", "him", "her", "them", "it", "my", "your", "our", "their",
                            "his", "its", "this", "these", "those", "some", "any", "each", "every", "all",
                            "few", "several", "many", "much", "more", "most", "another", "other", "such",
                            "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
                            "eleven", "twelve", "twenty", "fifty", "hundred", "dozen", "couple", "up",
                            "out", "down", "back", "please", "also", "again", "just", "only", "very", "i", "you",
                            "we", "myself", "yourself", "brief", "briefly", "quick", "quickly", "new"};
  return s;
}

// Closed-class words that end an object search.
inline const WordSet& np_stoppers() {
  static const WordSet s = {"to", "into", "in", "on", "for", "with", "from", "by", "as", "at", "and", "or",
                            "but", "so", "than", "then", "using", "based", "without", "within", "between",
                            "like", "via", "per", "onto", "over", "under", "after", "before", "because",
                            "while", "is", "are", "was", "were", "be", "been", "being", "do", "does", "did",
                            "can", "could", "should", "will", "would", "has", "have", "had", "not", "no",
                            "may", "might", "must", "shall", "vs", "versus", "against", "toward", "towards",
                            "through", "across", "around", "given", "following", "below", "above", "here", "there"};
  return s;
}

// After one of these a verb-capable word is being used as a noun.
inline const WordSet& determiners() {
  static const WordSet s = {"a", "an", "the", "this", "these", "those", "my", "your", "his", "her", "its",
                            "our", "their", "some", "any", "each", "every", "no"};
  return s;
}

inline const WordSet& leading_fillers() {
  static const WordSet s = {"please", "kindly", "now", "also", "then", "so", "just", "ok", "okay", "hey", "hi", "hello"};
  return s;
}

inline const WordSet& subject_words() {
  static const WordSet s = {"you", "i", "we", "please", "kindly", "also", "now", "then", "first", "next", "finally", "just"};
  return s;
}

inline bool closed_class(std::string_view w) {
  return np_fillers().count(w) || np_stoppers().count(w) || knowledge_markers().count(w) ||
         auxiliaries().count(w) || leading_fillers().count(w) || is_wh_word(w);
}

class Classifier {
 public:
  Classifier(const std::vector<Token>& tokens, const Lexicon& lex) : toks_(tokens), lex_(lex) {}

  std::optional<TaskLabel> run() const {
    std::size_t start = 0;
    while (start < toks_.size() &&
           (toks_[start].kind == Token::Kind::boundary ||
            (toks_[start].kind == Token::Kind::word && leading_fillers().count(toks_[start].text))))
      ++start;
    if (start >= toks_.size()) return std::nullopt;
    const Token& lead = toks_[start];

    if (lead.kind == Token::Kind::word && is_wh_word(lead.text)) {
      if (lead.text == "what" && mentions_arithmetic()) return TaskLabel::with_wh(LabelKind::what_math, "what");
      return TaskLabel::with_wh(LabelKind::wh_knowledge, lead.text);
    }
    if (lead.kind == Token::Kind::word && auxiliaries().count(lead.text)) {
      for (std::size_t i = start + 1; i < toks_.size(); ++i)
        if (yesno_task_cues().count(toks_[i].text)) return TaskLabel::bare(LabelKind::yesno_task);
      return TaskLabel::bare(LabelKind::yesno_knowledge);
    }

    if (auto v = find_root_verb(start)) return label_verb_phrase(*v);

    for (std::size_t i = start; i < toks_.size(); ++i) {
      if (toks_[i].kind != Token::Kind::word) continue;
      const auto& w = toks_[i].text;
      if (closed_class(w) || lex_.has(w, Pos::other)) continue;
      if (noun_capable(w) || unknown(w)) return TaskLabel::noun_knowledge(singularize_noun(compound_head(i), lex_));
    }
    return std::nullopt;
  }

 private:
  bool mentions_arithmetic() const {
    for (const auto& t : toks_) {
      if (t.kind == Token::Kind::number && is_plain_number(t.text)) return true;
      if (t.kind == Token::Kind::word && arithmetic_keywords().count(t.text)) return true;
    }
    return false;
  }

  static bool is_plain_number(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == ','; });
  }

  bool is_proper(const Token& t) const {
    return t.kind == Token::Kind::word && t.capitalized && t.text != "i" && !closed_class(t.text) &&
           !lex_.has(t.text, Pos::other);
  }

  bool verb_capable(const std::string& w) const {
    if (closed_class(w)) return false;
    if (lex_.has(w, Pos::verb)) return true;
    if (lex_.known(w)) return false;
    const std::string base = lemmatize_verb(w, lex_);
    return base != w && lex_.is_base(base, Pos::verb);
  }

  bool noun_capable(const std::string& w) const {
    if (closed_class(w)) return false;
    if (lex_.has(w, Pos::noun)) return true;
    if (lex_.known(w)) return false;
    const std::string base = singularize_noun(w, lex_);
    return base != w && lex_.is_base(base, Pos::noun);
  }

  bool unknown(const std::string& w) const {
    return !closed_class(w) && !lex_.known(w) && !noun_capable(w) && !verb_capable(w) &&
           std::any_of(w.begin(), w.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80; });
  }

  std::string compound_head(std::size_t i) const {
    std::size_t head = i;
    for (std::size_t k = i + 1; k < toks_.size(); ++k) {
      const Token& t = toks_[k];
      if (t.kind != Token::Kind::word || closed_class(t.text) || lex_.has(t.text, Pos::other)) break;
      if (!noun_capable(t.text) && !(unknown(t.text) && !t.capitalized)) break;
      head = k;
    }
    return toks_[head].text;
  }

  // First verb in the clause structure. A verb introduced by "to" before any
  // other verb is a modifier of a preceding noun phrase, not the root.
  std::optional<std::size_t> find_root_verb(std::size_t start) const {
    for (std::size_t i = start; i < toks_.size(); ++i) {
      const Token& t = toks_[i];
      if (t.kind != Token::Kind::word || !verb_capable(t.text)) continue;
      if (i > start && toks_[i - 1].kind == Token::Kind::word) {
        const auto& prev = toks_[i - 1].text;
        if (prev == "to" || determiners().count(prev) || np_stoppers().count(prev) || knowledge_markers().count(prev))
          continue;
      }
      // "need to translate" -> translate
      std::size_t v = i;
      while (v + 2 < toks_.size() && toks_[v + 1].kind == Token::Kind::word && toks_[v + 1].text == "to" &&
             toks_[v + 2].kind == Token::Kind::word && verb_capable(toks_[v + 2].text))
        v += 2;
      return v;
    }
    return std::nullopt;
  }

  TaskLabel label_verb_phrase(std::size_t v) const {
    const std::string verb = lemmatize_verb(toks_[v].text, lex_);
    for (std::size_t j = v + 1; j < toks_.size(); ++j) {
      const Token& t = toks_[j];
      if (t.kind == Token::Kind::boundary) break;
      if (t.kind == Token::Kind::number || t.kind == Token::Kind::quote) continue;
      const std::string& w = t.text;
      if (is_proper(t)) {
        // A proper-noun run that modifies a common noun ("a Python function")
        // is skipped; one that stands alone is the topic of a knowledge request.
        std::size_t k = j;
        while (k < toks_.size() && (is_proper(toks_[k]) || toks_[k].kind == Token::Kind::number)) ++k;
        if (k < toks_.size() && toks_[k].kind == Token::Kind::word && !toks_[k].capitalized && noun_capable(toks_[k].text)) {
          j = k - 1;
          continue;
        }
        return TaskLabel::with_verb(LabelKind::verb_knowledge, verb);
      }
      if (knowledge_markers().count(w)) return TaskLabel::with_verb(LabelKind::verb_knowledge, verb);
      if (np_fillers().count(w) || lex_.has(w, Pos::other)) continue;
      if (np_stoppers().count(w)) break;
      if (noun_capable(w) || unknown(w)) return TaskLabel::verb_noun(verb, singularize_noun(compound_head(j), lex_));
      break;
    }
    if (arithmetic_verbs().count(verb)) return TaskLabel::with_verb(LabelKind::verb_math, verb);
    return TaskLabel::with_verb(LabelKind::verb_only, verb);
  }

  const std::vector<Token>& toks_;
  const Lexicon& lex_;
};

}  // namespace detail

/// Assigns a task category from the instruction's leading construction and
/// its first verb/noun heads. Never throws; returns nullopt when no rule fits.
inline std::optional<TaskLabel> label_instruction(std::string_view text, const Lexicon& lex) {
  const auto tokens = tokenize(text);
  return detail::Classifier(tokens, lex).run();
}

inline Corpus label_corpus(const Corpus& corpus, const Lexicon& lex) {
  std::vector<Instruction> out = corpus.instructions();
  for (auto& ins : out) ins.label = label_instruction(ins.text, lex);
  return Corpus(std::move(out));
}

// ---------------------------------------------------------------------------
// Frequency filtering

struct FilterResult {
  Corpus corpus;
  std::vector<std::string> removed_ids;  // unlabeled or in a rare category
};

inline FilterResult filter_rare_categories(const Corpus& corpus, std::size_t min_count = 10) {
  FilterResult result;
  std::vector<Instruction> kept;
  for (const auto& ins : corpus.instructions()) {
    if (ins.label && corpus.category_index().at(ins.label->key()).size() >= min_count)
      kept.push_back(ins);
    else
      result.removed_ids.push_back(ins.id);
  }
  result.corpus = Corpus(std::move(kept));
  return result;
}

// ---------------------------------------------------------------------------
// Category merging

class SynonymTable {
 public:
  void add_group(Pos pos, const std::vector<std::string>& lemmas) {
    auto& owner = pos == Pos::verb ? verb_group_ : noun_group_;
    const std::size_t gid = group_count_++;
    for (const auto& l : lemmas) {
      if (l.empty()) continue;
      auto [it, inserted] = owner.emplace(l, gid);
      if (!inserted)
        throw Error(Errc::conflict, std::string("synonym '") + l + "' appears in two " + to_string(pos) + " groups");
    }
  }

  bool co_grouped(Pos pos, const std::string& a, const std::string& b) const {
    if (a == b) return true;
    const auto& owner = pos == Pos::verb ? verb_group_ : noun_group_;
    auto ia = owner.find(a), ib = owner.find(b);
    return ia != owner.end() && ib != owner.end() && ia->second == ib->second;
  }

  // Canonical bucket key: the group id if grouped, else the lemma itself.
  std::string bucket(Pos pos, const std::string& lemma) const {
    const auto& owner = pos == Pos::verb ? verb_group_ : noun_group_;
    auto it = owner.find(lemma);
    return it == owner.end() ? "w:" + lemma : "g:" + std::to_string(it->second);
  }

 private:
  std::map<std::string, std::size_t> verb_group_;
  std::map<std::string, std::size_t> noun_group_;
  std::size_t group_count_ = 0;
};

/// Reads `pos<TAB>lemma,lemma,...` lines.
inline SynonymTable parse_synonyms(std::istream& in, const std::string& name = "<synonyms>") {
  SynonymTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    auto fields = split_on(line, '\t');
    auto pos = fields.size() == 2 ? parse_pos(trim(fields[0])) : std::nullopt;
    if (!pos || *pos == Pos::other)
      throw Error(Errc::parse, name + ": line " + std::to_string(line_no) + ": expected verb|noun<TAB>lemma,lemma,...");
    std::vector<std::string> lemmas;
    for (auto& l : split_on(fields[1], ',')) lemmas.push_back(to_lower_ascii(trim(l)));
    table.add_group(*pos, lemmas);
  }
  return table;
}

inline SynonymTable load_synonyms(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open synonym table '" + path + "'");
  return parse_synonyms(in, path);
}

using WordVectors = std::map<std::string, std::vector<double>>;

/// Reads `lemma<TAB>f1 f2 ... fk` lines; vectors are normalized on load.
inline WordVectors load_word_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open word vectors '" + path + "'");
  WordVectors out;
  std::string line;
  std::size_t line_no = 0, dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_on(line, '\t');
    if (fields.size() != 2) throw Error(Errc::parse, path + ": line " + std::to_string(line_no) + ": expected lemma<TAB>values");
    std::vector<double> v;
    std::istringstream vs(fields[1]);
    double x;
    while (vs >> x) v.push_back(x);
    if (v.empty() || (dim && v.size() != dim))
      throw Error(Errc::parse, path + ": line " + std::to_string(line_no) + ": inconsistent vector length");
    dim = v.size();
    normalize_row(v);
    out[to_lower_ascii(trim(fields[0]))] = std::move(v);
  }
  return out;
}

struct MergePolicy {
  double direct_merge_threshold = 0.5;
  std::optional<WordVectors> word_vectors;
};

namespace detail {

inline bool similar_enough(const std::string& a, const std::string& b, const MergePolicy& policy) {
  if (!policy.word_vectors || a == b) return true;
  auto ia = policy.word_vectors->find(a), ib = policy.word_vectors->find(b);
  if (ia == policy.word_vectors->end() || ib == policy.word_vectors->end()) return false;
  return cosine(ia->second, ib->second) > policy.direct_merge_threshold;
}

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a), b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

/// Merges verb-noun categories whose verbs and nouns are both identical or
/// synonyms (and, when word vectors are supplied, both pair cosines exceed
/// the threshold). Merging is transitive; each component takes the label of
/// its lexicographically smallest key.
inline Corpus merge_categories(const Corpus& corpus, const SynonymTable& synonyms, const MergePolicy& policy = {}) {
  if (policy.direct_merge_threshold < 0.0 || policy.direct_merge_threshold > 1.0)
    throw Error(Errc::precondition, "merge threshold must lie in [0, 1]");
  std::vector<TaskLabel> labels;  // verb-noun categories in key order
  for (const auto& [key, ids] : corpus.category_index()) {
    const auto& l = *corpus.at(ids.front()).label;
    if (l.kind == LabelKind::verb_noun) labels.push_back(l);
  }
  std::map<std::string, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < labels.size(); ++i)
    buckets[synonyms.bucket(Pos::verb, *labels[i].verb) + "/" + synonyms.bucket(Pos::noun, *labels[i].noun)].push_back(i);

  detail::DisjointSets sets(labels.size());
  for (const auto& [bucket, members] : buckets)
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const auto& la = labels[members[a]];
        const auto& lb = labels[members[b]];
        if (synonyms.co_grouped(Pos::verb, *la.verb, *lb.verb) && synonyms.co_grouped(Pos::noun, *la.noun, *lb.noun) &&
            detail::similar_enough(*la.verb, *lb.verb, policy) && detail::similar_enough(*la.noun, *lb.noun, policy))
          sets.unite(members[a], members[b]);
      }

  // Labels are in ascending key order, so the root (smallest index) carries
  // the smallest key of its component.
  std::map<std::string, TaskLabel> replacement;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t root = sets.find(i);
    if (root != i) replacement.emplace(labels[i].key(), labels[root]);
  }
  std::vector<Instruction> out = corpus.instructions();
  for (auto& ins : out)
    if (ins.label)
      if (auto it = replacement.find(ins.label->key()); it != replacement.end()) ins.label = it->second;
  return Corpus(std::move(out));
}

}  // namespace ieb

#endif  // IEB_LABELER_HPP
