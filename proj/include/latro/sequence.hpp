#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latro/common.hpp"

namespace latro {

using Sequence = std::vector<TokenId>;

// Token alphabet plus the three reserved ids: BOS (sequence start), EOS
// (rationale/answer terminator), ANS (single-token answer-template marker).
class Vocabulary {
 public:
  Vocabulary(TokenId bos, TokenId eos, TokenId ans, std::vector<std::string> glyphs)
      : bos_(bos), eos_(eos), ans_(ans), glyphs_(std::move(glyphs)) {
    const TokenId v = size();
    require(v > 0, "vocabulary must be nonempty");
    require(bos_ >= 0 && bos_ < v, "BOS id out of range");
    require(eos_ >= 0 && eos_ < v, "EOS id out of range");
    require(ans_ >= 0 && ans_ < v, "ANS id out of range");
    require(bos_ != eos_ && bos_ != ans_ && eos_ != ans_,
            "BOS, EOS, ANS must be distinct");
    for (TokenId t = 0; t < v; ++t) {
      require(!glyphs_[t].empty(), "glyph table has an empty entry");
      auto [it, inserted] = glyph_to_id_.emplace(glyphs_[t], t);
      (void)it;
      require(inserted, "glyph table is not a bijection: duplicate '" + glyphs_[t] + "'");
    }
  }

  TokenId size() const { return static_cast<TokenId>(glyphs_.size()); }
  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId ans() const { return ans_; }

  const std::string& glyph(TokenId t) const {
    require(t >= 0 && t < size(), "token id out of range");
    return glyphs_[t];
  }
  const std::vector<std::string>& glyphs() const { return glyphs_; }

  TokenId id_of(const std::string& glyph) const {
    auto it = glyph_to_id_.find(glyph);
    require(it != glyph_to_id_.end(), "unknown glyph '" + glyph + "'");
    return it->second;
  }

  bool contains(TokenId t) const { return t >= 0 && t < size(); }

  std::string render(const Sequence& seq) const {
    std::string out;
    for (TokenId t : seq) out += glyph(t);
    return out;
  }

  bool operator==(const Vocabulary& other) const {
    return bos_ == other.bos_ && eos_ == other.eos_ && ans_ == other.ans_ &&
           glyphs_ == other.glyphs_;
  }

 private:
  TokenId bos_, eos_, ans_;
  std::vector<std::string> glyphs_;
  std::unordered_map<std::string, TokenId> glyph_to_id_;
};

inline Sequence concat(const Sequence& a, const Sequence& b) {
  Sequence out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

struct RationaleEnd {
  std::size_t end_index = 0;
  bool terminated = false;
};

// First occurrence of EOS or ANS, whichever comes first. If neither occurs the
// whole sequence counts as truncated and end_index == |z|. The usable rationale
// is z[0..end_index), terminator excluded.
inline RationaleEnd rationale_end(const Sequence& z, TokenId ans_marker, TokenId eos) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] == eos || z[i] == ans_marker) return {i, true};
  }
  return {z.size(), false};
}

// Token-list identity after stripping trailing EOS from both sides.
inline bool answers_equal(const Sequence& a, const Sequence& b, TokenId eos) {
  std::size_t na = a.size(), nb = b.size();
  while (na > 0 && a[na - 1] == eos) --na;
  while (nb > 0 && b[nb - 1] == eos) --nb;
  if (na != nb) return false;
  return std::equal(a.begin(), a.begin() + na, b.begin());
}

inline Sequence strip_trailing_eos(const Sequence& a, TokenId eos) {
  std::size_t n = a.size();
  while (n > 0 && a[n - 1] == eos) --n;
  return Sequence(a.begin(), a.begin() + n);
}

struct Example {
  Sequence query;                         // begins with BOS
  Sequence answer;                        // nonempty, ends with EOS
  std::optional<Sequence> golden_rationale;  // no EOS/BOS/ANS inside

  void validate(const Vocabulary& vocab) const {
    require(!query.empty() && query.front() == vocab.bos(), "query must begin with BOS");
    require(!answer.empty() && answer.back() == vocab.eos(),
            "answer must be nonempty and end with EOS");
    for (TokenId t : query) require(vocab.contains(t), "query token out of range");
    for (TokenId t : answer) require(vocab.contains(t), "answer token out of range");
    if (golden_rationale) {
      for (TokenId t : *golden_rationale) {
        require(vocab.contains(t), "rationale token out of range");
        require(t != vocab.eos() && t != vocab.bos() && t != vocab.ans(),
                "golden rationale must not contain reserved tokens");
      }
    }
  }
};

enum class Split { kTrain, kEval };

inline std::string split_name(Split s) { return s == Split::kTrain ? "train" : "eval"; }

struct Dataset {
  Vocabulary vocab;
  std::vector<Example> examples;
  Split split = Split::kTrain;
  std::string task_name;
  std::uint64_t generator_seed = 0;

  void validate() const {
    require(!examples.empty(), "dataset must be nonempty");
    for (const Example& ex : examples) ex.validate(vocab);
  }

  std::size_t max_answer_length() const {
    std::size_t m = 0;
    for (const Example& ex : examples) m = std::max(m, ex.answer.size());
    return m;
  }
};

// ---------------------------------------------------------------------------
// JSONL dataset format: a header line (vocabulary, reserved ids, glyph table,
// task name, generator seed, split) followed by one object per example with
// fields query / answer / rationale (nullable), all as integer token ids.
// ---------------------------------------------------------------------------

inline void write_dataset_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);

  nlohmann::json header;
  header["vocab_size"] = ds.vocab.size();
  header["bos"] = ds.vocab.bos();
  header["eos"] = ds.vocab.eos();
  header["ans"] = ds.vocab.ans();
  header["glyphs"] = ds.vocab.glyphs();
  header["task"] = ds.task_name;
  header["seed"] = ds.generator_seed;
  header["split"] = split_name(ds.split);
  out << header.dump() << "\n";

  for (const Example& ex : ds.examples) {
    nlohmann::json rec;
    rec["query"] = ex.query;
    rec["answer"] = ex.answer;
    if (ex.golden_rationale) {
      rec["rationale"] = *ex.golden_rationale;
    } else {
      rec["rationale"] = nullptr;
    }
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

inline Dataset read_dataset_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path);

  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset file is empty: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad dataset header in " + path + ": " + e.what());
  }

  Vocabulary vocab(header.at("bos").get<TokenId>(), header.at("eos").get<TokenId>(),
                   header.at("ans").get<TokenId>(),
                   header.at("glyphs").get<std::vector<std::string>>());
  require(vocab.size() == header.at("vocab_size").get<TokenId>(),
          "vocab_size does not match glyph table in " + path);

  Dataset ds{vocab, {}, Split::kTrain, header.at("task").get<std::string>(),
             header.at("seed").get<std::uint64_t>()};
  ds.split = header.at("split").get<std::string>() == "train" ? Split::kTrain : Split::kEval;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad record at " + path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Example ex;
    ex.query = rec.at("query").get<Sequence>();
    ex.answer = rec.at("answer").get<Sequence>();
    if (!rec.at("rationale").is_null()) {
      ex.golden_rationale = rec.at("rationale").get<Sequence>();
    }
    ds.examples.push_back(std::move(ex));
  }
  ds.validate();
  return ds;
}

}  // namespace latro
