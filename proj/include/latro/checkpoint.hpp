#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "latro/tabular_policy.hpp"
#include "latro/tiny_transformer.hpp"

namespace latro {

constexpr int kCheckpointFormatVersion = 1;

namespace detail {

inline nlohmann::json layout_to_json(const Layout& layout) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Segment& s : layout.segments()) {
    arr.push_back({{"name", s.name}, {"offset", s.offset}, {"length", s.length}});
  }
  return arr;
}

inline Layout layout_from_json(const nlohmann::json& arr) {
  std::vector<Segment> segs;
  for (const auto& s : arr) {
    segs.push_back({s.at("name").get<std::string>(), s.at("offset").get<std::size_t>(),
                    s.at("length").get<std::size_t>()});
  }
  return Layout(segs);
}

inline void write_doubles_le(std::ofstream& out, const double* data, std::size_t n) {
  // Little-endian on every supported target; raw 64-bit IEEE doubles.
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
}

inline void read_doubles_le(std::ifstream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 8));
  if (static_cast<std::size_t>(in.gcount()) != n * 8) {
    throw IoError("checkpoint truncated: expected " + std::to_string(n) + " doubles");
  }
}

}  // namespace detail

// Checkpoint layout: one JSON header line (model class, vocabulary, dims,
// segment layout, format version), then the parameter values as raw
// little-endian 64-bit floats in layout order.
inline void save_checkpoint(const PolicyModel& policy, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);

  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["model"] = policy.model_class();
  header["vocab_size"] = policy.vocab().size();
  header["bos"] = policy.vocab().bos();
  header["eos"] = policy.vocab().eos();
  header["ans"] = policy.vocab().ans();
  header["glyphs"] = policy.vocab().glyphs();
  header["layout"] = detail::layout_to_json(policy.params().layout());
  if (policy.model_class() == "tabular") {
    const auto& tab = dynamic_cast<const TabularPolicy&>(policy);
    header["dims"] = {{"context_order", tab.context_order()},
                      {"max_context", tab.max_context()}};
  } else {
    const auto& tf = dynamic_cast<const TinyTransformer&>(policy);
    header["dims"] = {{"embed_dim", tf.embed_dim()}, {"max_positions", tf.max_positions()}};
  }
  out << header.dump() << "\n";
  detail::write_doubles_le(out, policy.params().data(), policy.params().size());
  if (!out) throw IoError("checkpoint write failed: " + path);
}

inline std::unique_ptr<PolicyModel> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("checkpoint header missing: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint header in " + path + ": " + e.what());
  }
  require(header.at("format_version").get<int>() == kCheckpointFormatVersion,
          "unsupported checkpoint format version in " + path);

  Vocabulary vocab(header.at("bos").get<TokenId>(), header.at("eos").get<TokenId>(),
                   header.at("ans").get<TokenId>(),
                   header.at("glyphs").get<std::vector<std::string>>());
  require(vocab.size() == header.at("vocab_size").get<TokenId>(),
          "checkpoint vocab_size mismatch in " + path);

  std::unique_ptr<PolicyModel> policy;
  const std::string model = header.at("model").get<std::string>();
  if (model == "tabular") {
    policy = std::make_unique<TabularPolicy>(vocab,
                                             header.at("dims").at("context_order").get<int>(),
                                             header.at("dims").at("max_context").get<std::size_t>());
  } else if (model == "tiny_transformer") {
    policy = std::make_unique<TinyTransformer>(vocab, header.at("dims").at("embed_dim").get<int>(),
                                               header.at("dims").at("max_positions").get<int>());
  } else {
    throw IoError("unknown model class '" + model + "' in " + path);
  }

  Layout stored = detail::layout_from_json(header.at("layout"));
  require(stored == policy->params().layout(),
          "checkpoint segment layout does not match model class in " + path);
  detail::read_doubles_le(in, policy->params().data(), policy->params().size());
  require(policy->params().is_finite(), "checkpoint contains non-finite parameters: " + path);
  return policy;
}

// Raw named-vector blob in the same container format (used for optimizer
// moments in resumable training state).
inline void save_vector_blob(const std::vector<double>& values, const Layout& layout,
                             const std::string& kind, const std::string& path) {
  require(values.size() == layout.total(), "blob size does not match layout");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open blob for writing: " + path);
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["kind"] = kind;
  header["layout"] = detail::layout_to_json(layout);
  out << header.dump() << "\n";
  detail::write_doubles_le(out, values.data(), values.size());
  if (!out) throw IoError("blob write failed: " + path);
}

inline std::vector<double> load_vector_blob(const Layout& expected_layout, const std::string& kind,
                                            const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open blob: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("blob header missing: " + path);
  nlohmann::json header = nlohmann::json::parse(line);
  require(header.at("kind").get<std::string>() == kind, "blob kind mismatch in " + path);
  Layout stored = detail::layout_from_json(header.at("layout"));
  require(stored == expected_layout, "blob layout mismatch in " + path);
  std::vector<double> values(expected_layout.total());
  detail::read_doubles_le(in, values.data(), values.size());
  return values;
}

}  // namespace latro
