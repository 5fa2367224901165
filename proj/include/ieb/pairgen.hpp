#ifndef IEB_PAIRGEN_HPP
#define IEB_PAIRGEN_HPP

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ieb/common.hpp"
#include "ieb/corpus.hpp"

namespace ieb {

struct TriplePair {
  std::string anchor_id;
  std::string positive_id;
  std::optional<std::string> hard_negative_id;

  friend bool operator==(const TriplePair&, const TriplePair&) = default;
};

struct IISPair {
  std::string left_id;
  std::string right_id;
  int label = 0;

  friend bool operator==(const IISPair&, const IISPair&) = default;
};

struct PositiveSampling {
  std::vector<TriplePair> pairs;
  std::vector<std::string> warnings;
};

/// One positive per labeled anchor: a uniformly drawn other member of the
/// anchor's category. Anchors in singleton categories are skipped.
inline PositiveSampling sample_positive_pairs(const Corpus& corpus, std::uint64_t seed) {
  PositiveSampling out;
  Rng rng(seed);
  std::set<std::string> warned;
  for (const auto& ins : corpus.instructions()) {
    if (!ins.label) continue;
    const auto& key = ins.label->key();
    const auto& members = corpus.category_index().at(key);
    if (members.size() < 2) {
      if (warned.insert(key).second) out.warnings.push_back("category " + key + " has a single member; no positive pair");
      continue;
    }
    // Draw among the members other than the anchor.
    std::size_t pick = rng.uniform_index(members.size() - 1);
    if (members[pick] == ins.id) pick = members.size() - 1;
    out.pairs.push_back({ins.id, members[pick], std::nullopt});
  }
  return out;
}

/// Label-structural hard negatives for verb-noun anchors.
///
/// Tier 1: categories with the anchor's verb and a different noun.
/// Tier 2: categories with the anchor's noun and a different verb.
/// Within the first non-empty tier a category is drawn uniformly, then a
/// member of it. Anchors with no candidate (or a non verb-noun label) get no
/// negative. With per_anchor > 1 each pair is repeated once per negative.
inline std::vector<TriplePair> attach_hard_negatives(const std::vector<TriplePair>& pairs, const Corpus& corpus,
                                                     std::uint64_t seed, std::size_t per_anchor = 1) {
  std::map<std::string, std::vector<std::string>> by_verb, by_noun;  // lemma -> category keys
  for (const auto& [key, ids] : corpus.category_index()) {
    const auto& l = *corpus.at(ids.front()).label;
    if (l.kind != LabelKind::verb_noun) continue;
    by_verb[*l.verb].push_back(key);
    by_noun[*l.noun].push_back(key);
  }
  Rng rng(seed);
  std::vector<TriplePair> out;
  out.reserve(pairs.size() * std::max<std::size_t>(per_anchor, 1));
  for (const auto& p : pairs) {
    const auto& anchor = corpus.at(p.anchor_id);
    std::vector<std::string> tier;
    if (anchor.label && anchor.label->kind == LabelKind::verb_noun) {
      const auto& l = *anchor.label;
      for (const auto& key : by_verb[*l.verb])
        if (*corpus.at(corpus.category_index().at(key).front()).label->noun != *l.noun) tier.push_back(key);
      if (tier.empty())
        for (const auto& key : by_noun[*l.noun])
          if (*corpus.at(corpus.category_index().at(key).front()).label->verb != *l.verb) tier.push_back(key);
    }
    if (tier.empty() || per_anchor == 0) {
      out.push_back({p.anchor_id, p.positive_id, std::nullopt});
      continue;
    }
    for (std::size_t r = 0; r < per_anchor; ++r) {
      const auto& members = corpus.category_index().at(tier[rng.uniform_index(tier.size())]);
      out.push_back({p.anchor_id, p.positive_id, members[rng.uniform_index(members.size())]});
    }
  }
  return out;
}

/// True when the negative's category shares exactly one of verb or noun with
/// the anchor's verb-noun category.
inline bool is_valid_hard_negative(const TaskLabel& anchor, const TaskLabel& negative) {
  if (anchor.kind != LabelKind::verb_noun || negative.kind != LabelKind::verb_noun) return false;
  return (*anchor.verb == *negative.verb) != (*anchor.noun == *negative.noun);
}

namespace detail {

inline std::uint64_t pair_code(std::size_t i, std::size_t j, std::size_t n) {
  if (i > j) std::swap(i, j);
  return static_cast<std::uint64_t>(i) * n + j;
}

}  // namespace detail

/// Labeled pairs for the intention-similarity test.
///
/// First n_same distinct same-category pairs (label 1), drawn uniformly over
/// all such pairs; then n_random further distinct pairs drawn uniformly over
/// all remaining pairs, labeled 1 exactly when the categories match.
inline std::vector<IISPair> build_iis_set(const Corpus& corpus, std::size_t n_same, std::size_t n_random,
                                          std::uint64_t seed) {
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus.instructions()[i].label) labeled.push_back(i);
  const std::size_t n = labeled.size();
  const std::uint64_t all_pairs = n < 2 ? 0 : static_cast<std::uint64_t>(n) * (n - 1) / 2;

  // Same-category pairs, by category, with cumulative counts for weighting.
  std::vector<std::vector<std::size_t>> groups;
  {
    std::map<std::string, std::vector<std::size_t>> by_key;
    for (std::size_t k = 0; k < n; ++k) by_key[corpus.instructions()[labeled[k]].label->key()].push_back(k);
    for (auto& [key, g] : by_key)
      if (g.size() >= 2) groups.push_back(std::move(g));
  }
  std::vector<std::uint64_t> cumulative;
  std::uint64_t same_total = 0;
  for (const auto& g : groups) {
    same_total += static_cast<std::uint64_t>(g.size()) * (g.size() - 1) / 2;
    cumulative.push_back(same_total);
  }
  if (n_same > same_total)
    throw Error(Errc::precondition, "requested " + std::to_string(n_same) + " same-category pairs but only " +
                                        std::to_string(same_total) + " exist");
  if (n_random > all_pairs - n_same)
    throw Error(Errc::precondition, "requested " + std::to_string(n_random) + " random pairs but at most " +
                                        std::to_string(all_pairs - n_same) + " remain");

  Rng rng(seed);
  std::unordered_set<std::uint64_t> used;
  std::vector<IISPair> out;
  out.reserve(n_same + n_random);
  const auto emit = [&](std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    const auto& x = corpus.instructions()[labeled[a]];
    const auto& y = corpus.instructions()[labeled[b]];
    out.push_back({x.id, y.id, x.label->key() == y.label->key() ? 1 : 0});
  };

  // Dense requests enumerate and shuffle; sparse ones use rejection.
  if (n_same * 2 > same_total) {
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (const auto& g : groups)
      for (std::size_t a = 0; a < g.size(); ++a)
        for (std::size_t b = a + 1; b < g.size(); ++b) all.emplace_back(g[a], g[b]);
    rng.shuffle(all);
    for (std::size_t t = 0; t < n_same; ++t) {
      used.insert(detail::pair_code(all[t].first, all[t].second, n));
      emit(all[t].first, all[t].second);
    }
  } else {
    while (out.size() < n_same) {
      const std::uint64_t r = static_cast<std::uint64_t>(rng.uniform_index(static_cast<std::size_t>(same_total)));
      const std::size_t gi = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
      const auto& g = groups[gi];
      const std::size_t a = rng.uniform_index(g.size());
      std::size_t b = rng.uniform_index(g.size() - 1);
      if (b >= a) ++b;
      if (used.insert(detail::pair_code(g[a], g[b], n)).second) emit(g[a], g[b]);
    }
  }

  const std::size_t target = n_same + n_random;
  if (n_random * 2 > all_pairs - n_same) {
    std::vector<std::pair<std::size_t, std::size_t>> rest;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (!used.count(detail::pair_code(a, b, n))) rest.emplace_back(a, b);
    rng.shuffle(rest);
    for (std::size_t t = 0; t < n_random; ++t) emit(rest[t].first, rest[t].second);
  } else {
    while (out.size() < target) {
      const std::size_t a = rng.uniform_index(n);
      std::size_t b = rng.uniform_index(n - 1);
      if (b >= a) ++b;
      if (used.insert(detail::pair_code(a, b, n)).second) emit(a, b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL pair files

inline void save_triples(const std::vector<TriplePair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write pair file '" + path + "'");
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["anchor"] = p.anchor_id;
    j["positive"] = p.positive_id;
    j["hard_negative"] = p.hard_negative_id ? nlohmann::ordered_json(*p.hard_negative_id) : nlohmann::ordered_json(nullptr);
    out << j.dump() << '\n';
  }
}

inline void save_iis_pairs(const std::vector<IISPair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write pair file '" + path + "'");
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["left"] = p.left_id;
    j["right"] = p.right_id;
    j["label"] = p.label;
    out << j.dump() << '\n';
  }
}

namespace detail {

template <typename Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open pair file '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      fn(j, line_no);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse, path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace detail

inline std::vector<TriplePair> load_triples(const std::string& path) {
  std::vector<TriplePair> out;
  detail::for_each_json_line(path, [&](const nlohmann::json& j, std::size_t) {
    TriplePair p{j.at("anchor").get<std::string>(), j.at("positive").get<std::string>(), std::nullopt};
    if (j.contains("hard_negative") && !j.at("hard_negative").is_null())
      p.hard_negative_id = j.at("hard_negative").get<std::string>();
    out.push_back(std::move(p));
  });
  return out;
}

inline std::vector<IISPair> load_iis_pairs(const std::string& path) {
  std::vector<IISPair> out;
  detail::for_each_json_line(path, [&](const nlohmann::json& j, std::size_t line) {
    const int label = j.at("label").get<int>();
    if (label != 0 && label != 1)
      throw Error(Errc::parse, path + ": line " + std::to_string(line) + ": label must be 0 or 1");
    out.push_back({j.at("left").get<std::string>(), j.at("right").get<std::string>(), label});
  });
  return out;
}

}  // namespace ieb

#endif  // IEB_PAIRGEN_HPP
