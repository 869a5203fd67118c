#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "latro/rng.hpp"
#include "latro/sequence.hpp"

namespace latro {
namespace tasks {

struct TaskSpec {
  std::string name;  // chain-addition | letter-count | parity-scratchpad
  int operand_count = 3;     // chain-addition: number of operands
  int digit_lo = 0;          // chain-addition: operand digit range
  int digit_hi = 9;
  int length_lo = 4;         // letter-count word length / parity bit-string length
  int length_hi = 8;
  int alphabet_size = 4;     // letter-count: letters drawn from the first k of a,b,c,d
  std::size_t train_size = 640;
  std::size_t eval_size = 160;
  std::uint64_t seed = 0;

  void validate() const {
    if (name == "chain-addition") {
      require(operand_count >= 2, "chain-addition requires operand_count (n) >= 2");
      require(digit_lo >= 0 && digit_hi <= 9 && digit_lo <= digit_hi,
              "chain-addition digits must lie in [0,9]");
    } else if (name == "letter-count") {
      require(length_lo >= 1 && length_lo <= length_hi && length_hi <= 9,
              "letter-count length range must lie in [1,9]");
      require(alphabet_size >= 2 && alphabet_size <= 4,
              "letter-count alphabet_size must lie in [2,4]");
    } else if (name == "parity-scratchpad") {
      require(length_lo >= 1 && length_lo <= length_hi,
              "parity length range must be a nonempty range of positive lengths");
    } else {
      throw ConfigError("unknown task '" + name + "'");
    }
    require(train_size >= 1 && eval_size >= 1, "split sizes must be positive");
  }
};

namespace detail {

// Shared reserved-token convention: BOS=0 '^', EOS=1 '$', ANS=2 '@'.
inline std::vector<std::string> base_glyphs() { return {"^", "$", "@"}; }

struct TaskCodec {
  Vocabulary vocab;
  TokenId digit0 = -1;   // id of '0' when digits are present
  TokenId plus = -1, equals = -1, semicolon = -1, colon = -1, mark_hit = -1, mark_miss = -1;
  TokenId letter0 = -1;  // id of 'a'
  TokenId bit0 = -1;     // id of '0' in the parity alphabet

  Sequence digits_of(long value) const {
    require(value >= 0, "negative value");
    std::string s = std::to_string(value);
    Sequence out;
    for (char c : s) out.push_back(digit0 + (c - '0'));
    return out;
  }
};

inline TaskCodec chain_addition_codec() {
  std::vector<std::string> glyphs = base_glyphs();
  TokenId digit0 = static_cast<TokenId>(glyphs.size());
  for (int d = 0; d <= 9; ++d) glyphs.push_back(std::string(1, static_cast<char>('0' + d)));
  TokenId plus = static_cast<TokenId>(glyphs.size());
  glyphs.push_back("+");
  TokenId equals = static_cast<TokenId>(glyphs.size());
  glyphs.push_back("=");
  TokenId semicolon = static_cast<TokenId>(glyphs.size());
  glyphs.push_back(";");
  TaskCodec codec{Vocabulary(0, 1, 2, glyphs)};
  codec.digit0 = digit0;
  codec.plus = plus;
  codec.equals = equals;
  codec.semicolon = semicolon;
  return codec;
}

inline TaskCodec letter_count_codec(int alphabet_size) {
  std::vector<std::string> glyphs = base_glyphs();
  TokenId digit0 = static_cast<TokenId>(glyphs.size());
  for (int d = 0; d <= 9; ++d) glyphs.push_back(std::string(1, static_cast<char>('0' + d)));
  TokenId letter0 = static_cast<TokenId>(glyphs.size());
  for (int a = 0; a < alphabet_size; ++a) glyphs.push_back(std::string(1, static_cast<char>('a' + a)));
  TokenId colon = static_cast<TokenId>(glyphs.size());
  glyphs.push_back(":");
  TokenId equals = static_cast<TokenId>(glyphs.size());
  glyphs.push_back("=");
  TokenId hit = static_cast<TokenId>(glyphs.size());
  glyphs.push_back("+");
  TokenId miss = static_cast<TokenId>(glyphs.size());
  glyphs.push_back(".");
  TaskCodec codec{Vocabulary(0, 1, 2, glyphs)};
  codec.digit0 = digit0;
  codec.letter0 = letter0;
  codec.colon = colon;
  codec.equals = equals;
  codec.mark_hit = hit;
  codec.mark_miss = miss;
  return codec;
}

inline TaskCodec parity_codec() {
  std::vector<std::string> glyphs = base_glyphs();
  TokenId bit0 = static_cast<TokenId>(glyphs.size());
  glyphs.push_back("0");
  glyphs.push_back("1");
  TokenId equals = static_cast<TokenId>(glyphs.size());
  glyphs.push_back("=");
  TaskCodec codec{Vocabulary(0, 1, 2, glyphs)};
  codec.bit0 = bit0;
  codec.equals = equals;
  return codec;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// chain-addition: query "a1+a2+...+an=", answer = digits of the sum, golden
// rationale = running partial sums "a1+a2=s2;s2+a3=s3;...".
// ---------------------------------------------------------------------------

inline Example make_chain_addition_example(const detail::TaskCodec& codec,
                                           const std::vector<int>& operands) {
  Example ex;
  ex.query.push_back(codec.vocab.bos());
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (i > 0) ex.query.push_back(codec.plus);
    Sequence d = codec.digits_of(operands[i]);
    ex.query.insert(ex.query.end(), d.begin(), d.end());
  }
  ex.query.push_back(codec.equals);

  long total = 0;
  for (int a : operands) total += a;
  ex.answer = codec.digits_of(total);
  ex.answer.push_back(codec.vocab.eos());

  Sequence z;
  long running = operands[0];
  for (std::size_t i = 1; i < operands.size(); ++i) {
    Sequence lhs = codec.digits_of(running);
    z.insert(z.end(), lhs.begin(), lhs.end());
    z.push_back(codec.plus);
    Sequence rhs = codec.digits_of(operands[i]);
    z.insert(z.end(), rhs.begin(), rhs.end());
    z.push_back(codec.equals);
    running += operands[i];
    Sequence sum = codec.digits_of(running);
    z.insert(z.end(), sum.begin(), sum.end());
    z.push_back(codec.semicolon);
  }
  ex.golden_rationale = std::move(z);
  return ex;
}

// ---------------------------------------------------------------------------
// letter-count: query "c:word=", golden rationale marks each position with
// hit/miss and the running count, answer = digits of the final count.
// ---------------------------------------------------------------------------

inline Example make_letter_count_example(const detail::TaskCodec& codec, int target,
                                         const std::vector<int>& word) {
  Example ex;
  ex.query.push_back(codec.vocab.bos());
  ex.query.push_back(codec.letter0 + target);
  ex.query.push_back(codec.colon);
  for (int c : word) ex.query.push_back(codec.letter0 + c);
  ex.query.push_back(codec.equals);

  Sequence z;
  int count = 0;
  for (int c : word) {
    if (c == target) {
      ++count;
      z.push_back(codec.mark_hit);
    } else {
      z.push_back(codec.mark_miss);
    }
    z.push_back(codec.digit0 + count);
  }
  ex.golden_rationale = std::move(z);
  ex.answer = codec.digits_of(count);
  ex.answer.push_back(codec.vocab.eos());
  return ex;
}

// ---------------------------------------------------------------------------
// parity-scratchpad: query = bit string, golden rationale = running parity
// prefix, answer = final parity bit.
// ---------------------------------------------------------------------------

inline Example make_parity_example(const detail::TaskCodec& codec, const std::vector<int>& bits) {
  Example ex;
  ex.query.push_back(codec.vocab.bos());
  for (int b : bits) ex.query.push_back(codec.bit0 + b);
  ex.query.push_back(codec.equals);

  Sequence z;
  int parity = 0;
  for (int b : bits) {
    parity ^= b;
    z.push_back(codec.bit0 + parity);
  }
  ex.golden_rationale = std::move(z);
  ex.answer = {static_cast<TokenId>(codec.bit0 + parity), codec.vocab.eos()};
  return ex;
}

// ---------------------------------------------------------------------------
// Independent reference evaluation: decode a query back to its semantic values
// and recompute the answer. Used to check generator self-consistency.
// ---------------------------------------------------------------------------

inline Sequence reference_answer(const TaskSpec& spec, const Vocabulary& vocab,
                                 const Sequence& query) {
  std::string text;
  for (std::size_t i = 1; i < query.size(); ++i) text += vocab.glyph(query[i]);
  require(!text.empty(), "query too short");

  Sequence out;
  auto push_digits = [&](long value) {
    for (char c : std::to_string(value)) out.push_back(vocab.id_of(std::string(1, c)));
    out.push_back(vocab.eos());
  };

  if (spec.name == "chain-addition") {
    require(text.back() == '=', "chain-addition query must end with '='");
    long total = 0;
    long cur = 0;
    for (char c : text.substr(0, text.size() - 1)) {
      if (c == '+') {
        total += cur;
        cur = 0;
      } else {
        require(c >= '0' && c <= '9', "bad chain-addition query");
        cur = cur * 10 + (c - '0');
      }
    }
    total += cur;
    push_digits(total);
  } else if (spec.name == "letter-count") {
    require(text.size() >= 4 && text[1] == ':' && text.back() == '=', "bad letter-count query");
    char target = text[0];
    long count = 0;
    for (char c : text.substr(2, text.size() - 3)) {
      if (c == target) ++count;
    }
    push_digits(count);
  } else if (spec.name == "parity-scratchpad") {
    require(text.back() == '=', "bad parity query");
    int parity = 0;
    for (char c : text.substr(0, text.size() - 1)) {
      require(c == '0' || c == '1', "bad parity query");
      parity ^= (c - '0');
    }
    out.push_back(vocab.id_of(std::string(1, static_cast<char>('0' + parity))));
    out.push_back(vocab.eos());
  } else {
    throw ConfigError("unknown task '" + spec.name + "'");
  }
  return out;
}

// Replay a golden rationale's final state into the answer it determines.
inline Sequence answer_from_rationale(const TaskSpec& spec, const Vocabulary& vocab,
                                      const Sequence& golden) {
  std::string text;
  for (TokenId t : golden) text += vocab.glyph(t);
  Sequence out;
  auto push_text = [&](const std::string& s) {
    for (char c : s) out.push_back(vocab.id_of(std::string(1, c)));
    out.push_back(vocab.eos());
  };
  if (spec.name == "chain-addition") {
    // final state: the sum after the last '=' before the trailing ';'
    auto last_semi = text.rfind(';');
    require(last_semi != std::string::npos && last_semi + 1 == text.size(), "bad golden rationale");
    auto last_eq = text.rfind('=');
    push_text(text.substr(last_eq + 1, last_semi - last_eq - 1));
  } else if (spec.name == "letter-count") {
    require(!text.empty(), "bad golden rationale");
    push_text(text.substr(text.size() - 1));  // final running count (single digit)
  } else {
    require(!text.empty(), "bad golden rationale");
    push_text(text.substr(text.size() - 1));  // final running parity
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation. Queries are sampled from a per-split seed stream; the
// eval stream rejects anything seen in train (or earlier in eval), so splits
// are disjoint as multisets of queries. Everything is a pure function of
// (spec, seed).
// ---------------------------------------------------------------------------

struct GeneratedSplits {
  Dataset train;
  Dataset eval;
};

namespace detail {

inline double query_space_size(const TaskSpec& spec) {
  if (spec.name == "chain-addition") {
    return std::pow(static_cast<double>(spec.digit_hi - spec.digit_lo + 1),
                    static_cast<double>(spec.operand_count));
  }
  if (spec.name == "letter-count") {
    double total = 0.0;
    for (int len = spec.length_lo; len <= spec.length_hi; ++len) {
      total += std::pow(static_cast<double>(spec.alphabet_size), static_cast<double>(len));
    }
    return total * spec.alphabet_size;
  }
  double total = 0.0;
  for (int len = spec.length_lo; len <= spec.length_hi; ++len) {
    total += std::pow(2.0, static_cast<double>(len));
  }
  return total;
}

inline Example draw_example(const TaskSpec& spec, const TaskCodec& codec, Rng& rng) {
  if (spec.name == "chain-addition") {
    std::vector<int> operands(static_cast<std::size_t>(spec.operand_count));
    for (int& a : operands) {
      a = spec.digit_lo +
          static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.digit_hi - spec.digit_lo + 1)));
    }
    return make_chain_addition_example(codec, operands);
  }
  if (spec.name == "letter-count") {
    int len = spec.length_lo +
              static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.length_hi - spec.length_lo + 1)));
    int target = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.alphabet_size)));
    std::vector<int> word(static_cast<std::size_t>(len));
    for (int& c : word) {
      c = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.alphabet_size)));
    }
    return make_letter_count_example(codec, target, word);
  }
  int len = spec.length_lo +
            static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.length_hi - spec.length_lo + 1)));
  std::vector<int> bits(static_cast<std::size_t>(len));
  for (int& b : bits) b = static_cast<int>(rng.next_below(2));
  return make_parity_example(codec, bits);
}

}  // namespace detail

inline GeneratedSplits generate(const TaskSpec& spec) {
  spec.validate();
  require(static_cast<double>(spec.train_size + spec.eval_size) <=
              detail::query_space_size(spec),
          "train_size + eval_size exceeds the distinct query space of '" + spec.name + "'");

  detail::TaskCodec codec = spec.name == "chain-addition" ? detail::chain_addition_codec()
                            : spec.name == "letter-count"
                                ? detail::letter_count_codec(spec.alphabet_size)
                                : detail::parity_codec();

  GeneratedSplits out{{codec.vocab, {}, Split::kTrain, spec.name, spec.seed},
                      {codec.vocab, {}, Split::kEval, spec.name, spec.seed}};

  std::set<Sequence> seen;
  auto fill = [&](Dataset& ds, std::size_t want, std::uint64_t stream) {
    Rng rng(seed_hash({spec.seed, seed_domain::kInit, stream}));
    std::size_t attempts = 0;
    const std::size_t max_attempts = 1000 * (spec.train_size + spec.eval_size) + 100000;
    while (ds.examples.size() < want) {
      require(++attempts <= max_attempts, "query rejection sampling did not converge");
      Example ex = detail::draw_example(spec, codec, rng);
      if (!seen.insert(ex.query).second) continue;
      ds.examples.push_back(std::move(ex));
    }
  };
  fill(out.train, spec.train_size, 1);
  fill(out.eval, spec.eval_size, 2);
  out.train.validate();
  out.eval.validate();
  return out;
}

// Task-scaled rationale cap: 1.5x the longest golden rationale.
inline std::size_t default_rationale_cap(const Dataset& ds) {
  std::size_t max_golden = 1;
  for (const Example& ex : ds.examples) {
    if (ex.golden_rationale) max_golden = std::max(max_golden, ex.golden_rationale->size());
  }
  return static_cast<std::size_t>(std::ceil(1.5 * static_cast<double>(max_golden)));
}

}  // namespace tasks
}  // namespace latro
