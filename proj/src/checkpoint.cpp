#include "crkt/checkpoint.hpp"

#include "crkt/config.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace crkt {

namespace {

using nlohmann::json;

constexpr std::array<char, 8> kMagic{'C', 'R', 'K', 'T', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("truncated checkpoint: " + what);
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path, const CheckpointExtras& extras) {
  const auto& vocab = model.vocabulary();
  json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = json::parse(model_config_to_json(model.config()));
  manifest["vocabulary"] = {{"concept_count", vocab.concept_count},
                            {"option_counts", vocab.option_counts},
                            {"correct_options", vocab.correct_options},
                            {"question_concepts", vocab.question_concepts},
                            {"question_ids", extras.question_ids}};
  manifest["concept_map"] = {{"edges", model.concept_map().edges()},
                             {"source", model.concept_map().source() == MapSource::inferred ? "inferred" : "authored"}};
  manifest["metadata"] = json::parse(extras.metadata_json);
  json index = json::array();
  std::uint64_t offset = 0;
  const auto params = model.parameters();
  for (const auto* p : params) {
    index.push_back({{"name", p->name()}, {"rows", p->value().rows()}, {"cols", p->value().cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(p->value().size()) * sizeof(float);
  }
  manifest["tensors"] = index;
  const std::string text = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : params) {
    const auto& v = p->value();
    // Column-major order, matching Eigen storage.
    for (Eigen::Index i = 0; i < v.size(); ++i) put<float>(out, static_cast<float>(v.data()[i]));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto length = get<std::uint64_t>(in, "manifest length");
  if (length > (1ull << 32)) throw CheckpointError("implausible manifest length");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw CheckpointError("truncated manifest");

  json manifest;
  try {
    manifest = json::parse(text);
    Vocabulary vocab;
    const auto& v = manifest.at("vocabulary");
    vocab.concept_count = v.at("concept_count");
    vocab.option_counts = v.at("option_counts").get<std::vector<int>>();
    vocab.correct_options = v.at("correct_options").get<std::vector<int>>();
    vocab.question_concepts = v.at("question_concepts").get<std::vector<std::vector<int>>>();
    const auto edges = manifest.at("concept_map").at("edges").get<std::vector<std::pair<int, int>>>();
    const auto source =
        manifest.at("concept_map").at("source") == "inferred" ? MapSource::inferred : MapSource::authored;
    const ModelConfig config = model_config_from_json(manifest.at("config").dump());
    LoadedCheckpoint out{Model(config, vocab, ConceptMap::from_edges(vocab.concept_count, edges, source), 0), {}};
    out.extras.question_ids = v.at("question_ids").get<std::vector<int>>();
    out.extras.metadata_json = manifest.value("metadata", json::object()).dump();

    const auto& index = manifest.at("tensors");
    const auto data_start = in.tellg();
    for (const auto& entry : index) {
      const std::string name = entry.at("name");
      ad::Parameter* p = out.model.find_parameter(name);
      if (!p) throw CheckpointError("checkpoint tensor '" + name + "' does not belong to the model");
      const Eigen::Index rows = entry.at("rows");
      const Eigen::Index cols = entry.at("cols");
      if (rows != p->value().rows() || cols != p->value().cols()) {
        throw CheckpointError("shape mismatch for tensor '" + name + "'");
      }
      in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
      for (Eigen::Index i = 0; i < p->value().size(); ++i) p->value().data()[i] = get<float>(in, name);
    }
    if (index.size() != out.model.parameters().size()) throw CheckpointError("checkpoint is missing tensors");
    return out;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid checkpoint config: ") + e.what());
  }
}

}  // namespace crkt
