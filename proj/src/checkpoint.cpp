#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "carbrec/error.hpp"
#include "carbrec/models.hpp"

namespace carbrec {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'R', 'B', 'C', 'K', 'P', 'T', '1'};

template <class U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U get_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw ParseError("checkpoint", std::string("truncated while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

json model_json(const ModelConfig& m) {
  return {{"architecture", to_string(m.architecture)},
          {"blocks", m.blocks},
          {"state_size", m.state_size},
          {"fc_width", m.fc_width},
          {"fc_layers", m.fc_layers},
          {"dropout", m.dropout},
          {"use_s1", m.use_s1},
          {"joint_heads", m.joint_heads},
          {"planned_carbs_feature", m.planned_carbs_feature},
          {"lambda_forecast", m.lambda_forecast},
          {"lambda_backcast", m.lambda_backcast}};
}

ModelConfig model_from(const json& j) {
  ModelConfig m;
  const auto arch = parse_architecture(j.at("architecture").get<std::string>());
  if (!arch) throw ParseError("checkpoint.model.architecture", "unknown architecture");
  m.architecture = *arch;
  m.blocks = j.at("blocks");
  m.state_size = j.at("state_size");
  m.fc_width = j.at("fc_width");
  m.fc_layers = j.at("fc_layers");
  m.dropout = j.at("dropout");
  m.use_s1 = j.at("use_s1");
  m.joint_heads = j.at("joint_heads");
  m.planned_carbs_feature = j.at("planned_carbs_feature");
  m.lambda_forecast = j.at("lambda_forecast");
  m.lambda_backcast = j.at("lambda_backcast");
  return m;
}

json header_json(const ModelCheckpoint& c) {
  json scaling = json::object();
  for (std::size_t ch = 0; ch < kChannelCount; ++ch) {
    scaling[std::string(to_string(static_cast<Channel>(ch)))] = {{"min", c.scaling.range[ch].min},
                                                                  {"max", c.scaling.range[ch].max}};
  }
  json layout = json::array();
  for (const auto& s : c.layout) {
    layout.push_back({{"name", s.name}, {"rows", s.shape.rows}, {"cols", s.shape.cols}, {"offset", s.offset}});
  }
  return {{"subject_id", c.subject_id},
          {"scenario", to_string(c.scenario)},
          {"example_class", to_string(c.example_class)},
          {"seed", c.seed},
          {"model", model_json(c.model)},
          {"training",
           {{"learning_rate", c.training.learning_rate},
            {"batch_size", c.training.batch_size},
            {"epochs_run", c.training.epochs_run},
            {"best_epoch", c.training.best_epoch},
            {"validation_mse", c.training.validation_mse},
            {"validation_mae", c.training.validation_mae},
            {"pretrained", c.training.pretrained}}},
          {"scaling", {{"source", to_string(c.scaling.source)}, {"channels", scaling}}},
          {"tod",
           {{"mu", c.tod.mu},
            {"window_mean", c.tod.window_mean},
            {"window_count", c.tod.window_count},
            {"count", c.tod.count}}},
          {"layout", layout}};
}

ModelCheckpoint from_header(const json& h) {
  ModelCheckpoint c;
  c.subject_id = h.at("subject_id");
  const auto sc = parse_scenario(h.at("scenario").get<std::string>());
  const auto ec = parse_example_class(h.at("example_class").get<std::string>());
  if (!sc || !ec) throw ParseError("checkpoint.header", "unknown scenario or example class");
  c.scenario = *sc;
  c.example_class = *ec;
  c.seed = h.at("seed");
  c.model = model_from(h.at("model"));
  const auto& t = h.at("training");
  c.training.learning_rate = t.at("learning_rate");
  c.training.batch_size = t.at("batch_size");
  c.training.epochs_run = t.at("epochs_run");
  c.training.best_epoch = t.at("best_epoch");
  c.training.validation_mse = t.at("validation_mse");
  c.training.validation_mae = t.at("validation_mae");
  c.training.pretrained = t.at("pretrained");
  const auto& s = h.at("scaling");
  if (s.at("source") != "train") throw ParseError("checkpoint.scaling.source", "scaling must come from training data");
  c.scaling.source = Split::train;
  for (std::size_t ch = 0; ch < kChannelCount; ++ch) {
    const auto& r = s.at("channels").at(std::string(to_string(static_cast<Channel>(ch))));
    c.scaling.range[ch] = {r.at("min"), r.at("max")};
  }
  const auto& tod = h.at("tod");
  c.tod.mu = tod.at("mu");
  c.tod.window_mean = tod.at("window_mean");
  c.tod.window_count = tod.at("window_count");
  c.tod.count = tod.at("count");
  for (const auto& l : h.at("layout")) {
    c.layout.push_back({l.at("name"), {l.at("rows"), l.at("cols")}, l.at("offset")});
  }
  return c;
}

}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, std::ostream& os) {
  const std::string header = header_json(ckpt).dump();
  os.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(os, ModelCheckpoint::kFormatVersion);
  put_le<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_le<std::uint64_t>(os, ckpt.weights.size());
  for (double w : ckpt.weights) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(w));
  if (!os) throw Error("checkpoint: write failed");
}

ModelCheckpoint load_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError("checkpoint", "bad magic, not a checkpoint file");
  }
  const auto version = get_le<std::uint32_t>(is, "version");
  if (version != ModelCheckpoint::kFormatVersion) {
    throw ParseError("checkpoint", "unsupported format version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(is, "header length");
  if (header_len > (1u << 26)) throw ParseError("checkpoint", "implausible header length");
  std::string header(header_len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header_len))) {
    throw ParseError("checkpoint", "truncated header");
  }
  ModelCheckpoint c;
  try {
    c = from_header(json::parse(header));
  } catch (const json::exception& e) {
    throw ParseError("checkpoint.header", e.what());
  }
  const auto count = get_le<std::uint64_t>(is, "weight count");
  if (count > (1u << 28)) throw ParseError("checkpoint", "implausible weight count");
  c.weights.resize(count);
  for (auto& w : c.weights) w = std::bit_cast<double>(get_le<std::uint64_t>(is, "weights"));
  // validates the layout against the architecture
  (void)c.network();
  return c;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  save_checkpoint(ckpt, os);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  return load_checkpoint(is);
}

std::string checkpoint_bytes(const ModelCheckpoint& ckpt) {
  std::ostringstream os(std::ios::binary);
  save_checkpoint(ckpt, os);
  return std::move(os).str();
}

}  // namespace carbrec
