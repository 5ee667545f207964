#include "optout/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "optout/data_model.hpp"

namespace optout {

namespace {

constexpr char kMagic[8] = {'O', 'P', 'T', 'O', 'U', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) {
    throw LoadError("checkpoint truncated");
  }
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"context_length", c.context_length},
       {"d_model", c.d_model},
       {"n_heads", c.n_heads},
       {"n_layers", c.n_layers},
       {"d_ff", c.d_ff},
       {"init_std", c.init_std},
       {"layer_norm_eps", c.layer_norm_eps},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.context_length = j.value("context_length", d.context_length);
  c.d_model = j.value("d_model", d.d_model);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.init_std = j.value("init_std", d.init_std);
  c.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

TransformerLM Checkpoint::build() const {
  TransformerLM model(config, tokenizer);
  model.restore(snapshot);
  return model;
}

Checkpoint Checkpoint::of(const TransformerLM& model, std::string tag, nlohmann::json metadata) {
  return {model.config(), model.tokenizer(), model.snapshot(std::move(tag)), std::move(metadata)};
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& entry : ckpt.snapshot.params) {
    tensors.push_back({{"name", entry.name}, {"shape", {entry.value.rows, entry.value.cols}}});
  }
  const nlohmann::json header = {{"config", ckpt.config},
                                 {"vocabulary", ckpt.tokenizer.words()},
                                 {"step_tag", ckpt.snapshot.step_tag},
                                 {"metadata", ckpt.metadata},
                                 {"tensors", tensors}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& entry : ckpt.snapshot.params) {
    const auto& data = entry.value.data;
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw LoadError("not a checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = take<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) {
    throw LoadError("checkpoint truncated");
  }
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(pos, header_len));
    pos += header_len;
    ckpt.config = header.at("config").get<ModelConfig>();
    ckpt.tokenizer = Tokenizer::from_words(header.at("vocabulary").get<std::vector<std::string>>());
    ckpt.snapshot.step_tag = header.at("step_tag").get<std::string>();
    ckpt.metadata = header.at("metadata");
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("shape").at(0).get<std::size_t>();
      const auto cols = t.at("shape").at(1).get<std::size_t>();
      Matrix& m = ckpt.snapshot.params.add(t.at("name").get<std::string>(), rows, cols);
      const std::size_t n = m.data.size() * sizeof(double);
      if (pos + n > bytes.size()) {
        throw LoadError("checkpoint truncated");
      }
      std::memcpy(m.data.data(), bytes.data() + pos, n);
      pos += n;
    }
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw LoadError(std::string("bad checkpoint header: ") + e.what());
  }
  if (pos != bytes.size()) {
    throw LoadError("trailing bytes after checkpoint payload");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  write_file_atomic(file, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  try {
    return decode_checkpoint(read_file(file));
  } catch (const LoadError& e) {
    throw LoadError(file.string() + ": " + e.what());
  }
}

std::string params_hash(const ParamSet& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& entry : params) {
    h = fnv1a64(entry.name, h);
    const auto& data = entry.value.data;
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(data.data()),
                                 data.size() * sizeof(double)),
                h);
  }
  return to_hex(h);
}

}  // namespace optout
