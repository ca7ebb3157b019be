#include "dsdn/checkpoint.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dsdn/errors.hpp"

namespace dsdn {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "DSDNCKPT1\n";

json config_to_json(const ModelConfig& c) {
  return json{{"d_out", c.d_out},
              {"n_heads", c.n_heads},
              {"n_enc_layers", c.n_enc_layers},
              {"n_turn_layers", c.n_turn_layers},
              {"d_ff", c.d_ff},
              {"d1", c.d1},
              {"d2", c.d2},
              {"max_len", c.max_len},
              {"max_turns", c.max_turns},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_out = j.at("d_out").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_enc_layers = j.at("n_enc_layers").get<int>();
  c.n_turn_layers = j.at("n_turn_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.d1 = j.at("d1").get<int>();
  c.d2 = j.at("d2").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.max_turns = j.at("max_turns").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw CheckpointError("truncated checkpoint file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const DsdnModel& model,
                     const CheckpointMeta& meta) {
  json slots = json::array();
  for (const auto& s : model.schema().slots)
    slots.push_back({{"name", s.name}, {"values", s.values}});
  json header{
      {"schema", {{"slots", slots}}},
      {"schema_hash", model.schema().hash()},
      {"vocab", model.vocab().tokens()},
      {"model_config", config_to_json(model.config())},
      {"phase", meta.phase},
      {"epoch", meta.epoch},
      {"dev_loss", meta.dev_loss},
      {"dev_joint_ga", meta.dev_joint_ga},
      {"frozen", meta.frozen},
  };
  const std::string header_str = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp);
    out.write(kMagic, sizeof(kMagic) - 1);
    write_u64(out, header_str.size());
    out.write(header_str.data(),
              static_cast<std::streamsize>(header_str.size()));
    const auto& tensors = model.params_const().tensors();
    write_u64(out, tensors.size());
    for (const auto& t : tensors) {
      write_u64(out, t->name.size());
      out.write(t->name.data(), static_cast<std::streamsize>(t->name.size()));
      write_u64(out, static_cast<std::uint64_t>(t->value.rows()));
      write_u64(out, static_cast<std::uint64_t>(t->value.cols()));
      // row-major payload
      for (Eigen::Index r = 0; r < t->value.rows(); ++r)
        out.write(reinterpret_cast<const char*>(t->value.row(r).eval().data()),
                  static_cast<std::streamsize>(sizeof(double) *
                                               static_cast<std::size_t>(
                                                   t->value.cols())));
    }
    if (!out) throw IoError("write failure on checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, sizeof(magic)) != std::string(kMagic).substr(0, sizeof(magic)))
    throw CheckpointError("bad checkpoint magic in " + path);
  const std::uint64_t hlen = read_u64(in);
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw CheckpointError("truncated checkpoint header");
  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Schema schema;
  for (const auto& sj : header.at("schema").at("slots")) {
    SlotDef def;
    def.name = sj.at("name").get<std::string>();
    for (const auto& v : sj.at("values")) def.values.push_back(v.get<std::string>());
    schema.slots.push_back(std::move(def));
  }
  Vocabulary vocab;
  {
    const auto tokens = header.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      int id = vocab.add_token(tokens[i]);
      if (id != static_cast<int>(i))
        throw CheckpointError("vocabulary order mismatch in checkpoint");
    }
  }
  ModelConfig config = config_from_json(header.at("model_config"));

  LoadedCheckpoint loaded;
  loaded.model = std::make_unique<DsdnModel>(schema, vocab, config);
  loaded.meta.phase = header.at("phase").get<int>();
  loaded.meta.epoch = header.at("epoch").get<int>();
  loaded.meta.dev_loss = header.at("dev_loss").get<double>();
  loaded.meta.dev_joint_ga = header.at("dev_joint_ga").get<double>();
  loaded.meta.schema_hash = header.at("schema_hash").get<std::uint64_t>();
  loaded.meta.frozen = header.at("frozen").get<std::vector<std::string>>();

  const std::uint64_t n = read_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rows = static_cast<Eigen::Index>(read_u64(in));
    const auto cols = static_cast<Eigen::Index>(read_u64(in));
    if (!loaded.model->params().has(name))
      throw CheckpointError("checkpoint tensor '" + name +
                            "' unknown to the model");
    Tensor& t = loaded.model->params().get(name);
    if (t.value.rows() != rows || t.value.cols() != cols)
      throw CheckpointError("checkpoint tensor '" + name + "' shape mismatch");
    std::vector<double> buf(static_cast<std::size_t>(rows) *
                            static_cast<std::size_t>(cols));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (!in) throw CheckpointError("truncated tensor payload for '" + name + "'");
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        t.value(r, c) = buf[static_cast<std::size_t>(r) *
                                static_cast<std::size_t>(cols) +
                            static_cast<std::size_t>(c)];
  }
  for (const auto& name : loaded.meta.frozen)
    if (loaded.model->params().has(name))
      loaded.model->params().get(name).trainable = false;
  loaded.model->refresh_fixed_cache();
  return loaded;
}

}  // namespace dsdn
