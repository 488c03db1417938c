#include "phytnet/model.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace phytnet {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError(std::string("unknown key '") + it.key() + "' in " + what);
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type");
  }
}

json load_json_file(const std::filesystem::path& file, const char* what) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + std::string(what) + " file " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + " file " + file.string() +
                      " is not valid JSON: " + e.what());
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (stem_channels < 1) throw ConfigError("stem_channels must be >= 1");
  if (stage_channels.empty()) throw ConfigError("stage_channels must be non-empty");
  for (int c : stage_channels)
    if (c < 16 || c > 128)
      throw ConfigError("stage_channels entry " + std::to_string(c) +
                        " outside [16,128]");
  if (blocks_per_stage.size() != stage_channels.size())
    throw ConfigError("blocks_per_stage length " +
                      std::to_string(blocks_per_stage.size()) +
                      " does not match stage_channels length " +
                      std::to_string(stage_channels.size()));
  for (int b : blocks_per_stage)
    if (b < 1 || b > 4)
      throw ConfigError("blocks_per_stage entry " + std::to_string(b) + " outside [1,4]");
  if (mid_kernel < 1 || mid_kernel > 19 || mid_kernel % 2 == 0)
    throw ConfigError("mid_kernel must be an odd integer in [1,19], got " +
                      std::to_string(mid_kernel));
  if (out_nodes < 4 || out_nodes > 10)
    throw ConfigError("out_nodes " + std::to_string(out_nodes) + " outside [4,10]");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (out_nodes < num_classes)
    throw ConfigError("out_nodes " + std::to_string(out_nodes) +
                      " smaller than num_classes " + std::to_string(num_classes));
  if (input_size < 200 || input_size > 500)
    throw ConfigError("input_size " + std::to_string(input_size) + " outside [200,500]");
  if (groups < 1) throw ConfigError("groups must be >= 1");
  if (stem_channels % groups != 0)
    throw ConfigError("stem_channels " + std::to_string(stem_channels) +
                      " not divisible by groups " + std::to_string(groups));
  for (int c : stage_channels)
    if (c % groups != 0)
      throw ConfigError("stage_channels entry " + std::to_string(c) +
                        " not divisible by groups " + std::to_string(groups));
  if (se_reduction < 1) throw ConfigError("se_reduction must be >= 1");
  if (use_se) {
    for (int c : stage_channels)
      if (se_reduction > c)
        throw ConfigError("se_reduction " + std::to_string(se_reduction) +
                          " exceeds stage channel count " + std::to_string(c));
  }
  activation_from_string(activation);  // throws on bad value
  if (!(survive_prob > 0.0) || survive_prob > 1.0)
    throw ConfigError("survive_prob must be in (0,1], got " +
                      std::to_string(survive_prob));
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("dropout_rate must be in [0,1), got " +
                      std::to_string(dropout_rate));
}

json ModelConfig::to_json() const {
  return json{{"stem_channels", stem_channels},
              {"stage_channels", stage_channels},
              {"blocks_per_stage", blocks_per_stage},
              {"mid_kernel", mid_kernel},
              {"out_nodes", out_nodes},
              {"num_classes", num_classes},
              {"input_size", input_size},
              {"groups", groups},
              {"use_se", use_se},
              {"se_reduction", se_reduction},
              {"activation", activation},
              {"survive_prob", survive_prob},
              {"dropout_rate", dropout_rate}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  reject_unknown_keys(j,
                      {"stem_channels", "stage_channels", "blocks_per_stage",
                       "mid_kernel", "out_nodes", "num_classes", "input_size", "groups",
                       "use_se", "se_reduction", "activation", "survive_prob",
                       "dropout_rate"},
                      "model config");
  ModelConfig cfg;
  read_field(j, "stem_channels", cfg.stem_channels);
  read_field(j, "stage_channels", cfg.stage_channels);
  read_field(j, "blocks_per_stage", cfg.blocks_per_stage);
  read_field(j, "mid_kernel", cfg.mid_kernel);
  read_field(j, "out_nodes", cfg.out_nodes);
  read_field(j, "num_classes", cfg.num_classes);
  read_field(j, "input_size", cfg.input_size);
  read_field(j, "groups", cfg.groups);
  read_field(j, "use_se", cfg.use_se);
  read_field(j, "se_reduction", cfg.se_reduction);
  read_field(j, "activation", cfg.activation);
  read_field(j, "survive_prob", cfg.survive_prob);
  read_field(j, "dropout_rate", cfg.dropout_rate);
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::load(const std::filesystem::path& file) {
  return from_json(load_json_file(file, "model config"));
}

PhytNetModel::PhytNetModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  act_ = activation_from_string(cfg_.activation);
  Rng rng(derive_seed(seed, "init"));
  stem_ = Conv2dLayer(3, cfg_.stem_channels, 3, 2, 1, /*bias=*/false, rng);
  stem_gn_ = GroupNormLayer(cfg_.stem_channels, cfg_.groups);
  int in_ch = cfg_.stem_channels;
  for (size_t s = 0; s < cfg_.stage_channels.size(); ++s) {
    const int out_ch = cfg_.stage_channels[s];
    for (int b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
      BlockConfig bc;
      bc.in_channels = in_ch;
      bc.out_channels = out_ch;
      bc.mid_kernel = cfg_.mid_kernel;
      bc.stride = (b == 0 && s > 0) ? 2 : 1;
      bc.groups = cfg_.groups;
      bc.use_se = cfg_.use_se;
      bc.se_reduction = cfg_.se_reduction;
      bc.survive_prob = static_cast<float>(cfg_.survive_prob);
      bc.activation = act_;
      blocks_.emplace_back(bc, rng);
      in_ch = out_ch;
    }
  }
  head_ = LinearLayer(in_ch, cfg_.out_nodes, rng);
}

Tensor PhytNetModel::forward(const Tensor& batch, Mode mode, Rng& rng) {
  if (batch.rank() != 4) throw DataError("batch must be [N,3,S,S]");
  if (batch.dim(1) != 3)
    throw DataError("batch has " + std::to_string(batch.dim(1)) +
                    " channels, expected 3");
  Tensor x = activation(stem_gn_.forward(stem_.forward(batch)), act_);
  for (const BottleneckBlock& block : blocks_) x = block.forward(x, mode, rng);
  last_features_ = x;
  const int n = x.dim(0), c = x.dim(1);
  Tensor pooled = reshape(pool(x, PoolKind::kGlobalAvg, 0, 0), {n, c});
  pooled = dropout(pooled, static_cast<float>(cfg_.dropout_rate), mode, rng);
  return head_.forward(pooled);
}

void PhytNetModel::visit_params(const ParamVisitor& fn) {
  stem_.visit("stem", fn);
  stem_gn_.visit("stem_gn", fn);
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].visit("block" + std::to_string(i), fn);
  head_.visit("head", fn);
}

int64_t PhytNetModel::count_macs(int input_size) const {
  int h = 0, w = 0;
  int64_t total = stem_.macs(input_size, input_size, &h, &w);
  for (const BottleneckBlock& block : blocks_) total += block.macs(h, w, &h, &w);
  total += static_cast<int64_t>(cfg_.stage_channels.back()) * cfg_.out_nodes;
  return total;
}

ResNet18Model::ResNet18Model(int num_classes, uint64_t seed) : num_classes_(num_classes) {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  Rng rng(derive_seed(seed, "init"));
  stem_ = Conv2dLayer(3, 64, 7, 2, 3, /*bias=*/false, rng);
  stem_n_ = GroupNormLayer(64, 64);  // per-channel scale+shift
  const int stage_channels[4] = {64, 128, 256, 512};
  int in_ch = 64;
  for (int s = 0; s < 4; ++s) {
    const int out_ch = stage_channels[s];
    for (int b = 0; b < 2; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      BasicBlock block;
      block.conv1 = Conv2dLayer(in_ch, out_ch, 3, stride, 1, /*bias=*/false, rng);
      block.n1 = GroupNormLayer(out_ch, out_ch);
      block.conv2 = Conv2dLayer(out_ch, out_ch, 3, 1, 1, /*bias=*/false, rng);
      block.n2 = GroupNormLayer(out_ch, out_ch);
      block.has_projection = stride != 1 || in_ch != out_ch;
      if (block.has_projection) {
        block.proj = Conv2dLayer(in_ch, out_ch, 1, stride, 0, /*bias=*/false, rng);
        block.proj_n = GroupNormLayer(out_ch, out_ch);
      }
      blocks_.push_back(std::move(block));
      in_ch = out_ch;
    }
  }
  head_ = LinearLayer(512, num_classes, rng);
}

Tensor ResNet18Model::forward(const Tensor& batch, Mode mode, Rng& rng) {
  (void)mode;
  (void)rng;
  if (batch.rank() != 4 || batch.dim(1) != 3) throw DataError("batch must be [N,3,S,S]");
  Tensor x = relu(stem_n_.forward(stem_.forward(batch)));
  x = pool(x, PoolKind::kMax, 3, 2, 1);
  for (const BasicBlock& block : blocks_) {
    Tensor h = relu(block.n1.forward(block.conv1.forward(x)));
    h = block.n2.forward(block.conv2.forward(h));
    Tensor shortcut =
        block.has_projection ? block.proj_n.forward(block.proj.forward(x)) : x;
    x = relu(add(h, shortcut));
  }
  last_features_ = x;
  const int n = x.dim(0), c = x.dim(1);
  Tensor pooled = reshape(pool(x, PoolKind::kGlobalAvg, 0, 0), {n, c});
  return head_.forward(pooled);
}

void ResNet18Model::visit_params(const ParamVisitor& fn) {
  stem_.visit("stem", fn);
  stem_n_.visit("stem_n", fn);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i);
    blocks_[i].conv1.visit(prefix + ".conv1", fn);
    blocks_[i].n1.visit(prefix + ".n1", fn);
    blocks_[i].conv2.visit(prefix + ".conv2", fn);
    blocks_[i].n2.visit(prefix + ".n2", fn);
    if (blocks_[i].has_projection) {
      blocks_[i].proj.visit(prefix + ".proj", fn);
      blocks_[i].proj_n.visit(prefix + ".proj_n", fn);
    }
  }
  head_.visit("head", fn);
}

int64_t ResNet18Model::count_macs(int input_size) const {
  int h = 0, w = 0;
  int64_t total = stem_.macs(input_size, input_size, &h, &w);
  h = conv_out_size(h, 3, 2, 1);  // max-pool shape rule, no MACs
  w = conv_out_size(w, 3, 2, 1);
  if (h < 1 || w < 1) throw ConfigError("input collapses to zero spatial extent");
  for (const BasicBlock& block : blocks_) {
    int h1 = 0, w1 = 0;
    total += block.conv1.macs(h, w, &h1, &w1);
    total += block.conv2.macs(h1, w1, nullptr, nullptr);
    if (block.has_projection) total += block.proj.macs(h, w, nullptr, nullptr);
    h = h1;
    w = w1;
  }
  total += static_cast<int64_t>(512) * num_classes_;
  return total;
}

int64_t count_params(Model& m) {
  int64_t total = 0;
  m.visit_params([&](const std::string&, Tensor& t) { total += t.numel(); });
  return total;
}

double count_flops(Model& m, int input_size) {
  if (input_size < 1)
    throw ConfigError("input_size must be >= 1, got " + std::to_string(input_size));
  return static_cast<double>(m.count_macs(input_size)) / 1e9;
}

CostReport cost_report(Model& m, int input_size) {
  return CostReport{count_params(m), count_flops(m, input_size), input_size};
}

namespace {

template <typename T>
void write_raw(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const char* what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw DataError(std::string("truncated checkpoint while reading ") + what);
  return value;
}

constexpr uint16_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const ModelConfig& cfg,
                     Model& m) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint file for writing: " + file.string());
  os.write("PHYT", 4);
  write_raw(os, kCheckpointVersion);
  const std::string config = cfg.to_json().dump();
  write_raw(os, static_cast<uint32_t>(config.size()));
  os.write(config.data(), static_cast<std::streamsize>(config.size()));
  uint32_t n_records = 0;
  m.visit_params([&](const std::string&, Tensor&) { ++n_records; });
  write_raw(os, n_records);
  m.visit_params([&](const std::string& name, Tensor& t) {
    write_raw(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw(os, static_cast<uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) write_raw(os, static_cast<uint32_t>(t.dim(d)));
    os.write(reinterpret_cast<const char*>(t.ptr()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
  });
  if (!os) throw IoError("failed writing checkpoint " + file.string());
}

std::unique_ptr<PhytNetModel> load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint file " + file.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PHYT", 4) != 0)
    throw DataError("bad checkpoint magic in " + file.string());
  const auto version = read_raw<uint16_t>(is, "version");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto config_len = read_raw<uint32_t>(is, "config length");
  std::string config_text(config_len, '\0');
  if (!is.read(config_text.data(), config_len))
    throw DataError("truncated checkpoint while reading config");
  json config_json;
  try {
    config_json = json::parse(config_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const ModelConfig cfg = ModelConfig::from_json(config_json);
  auto model = std::make_unique<PhytNetModel>(cfg, /*seed=*/0);

  std::map<std::string, Tensor*> params;
  model->visit_params([&](const std::string& name, Tensor& t) { params[name] = &t; });
  const auto n_records = read_raw<uint32_t>(is, "record count");
  if (n_records != params.size())
    throw DataError("checkpoint has " + std::to_string(n_records) +
                    " parameter records, model expects " +
                    std::to_string(params.size()));
  for (uint32_t r = 0; r < n_records; ++r) {
    const auto name_len = read_raw<uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw DataError("truncated checkpoint while reading a parameter name");
    auto it = params.find(name);
    if (it == params.end())
      throw DataError("checkpoint parameter '" + name + "' not present in the model");
    const auto rank = read_raw<uint32_t>(is, "rank");
    std::vector<int> dims(rank);
    for (uint32_t d = 0; d < rank; ++d)
      dims[d] = static_cast<int>(read_raw<uint32_t>(is, "dimension"));
    Tensor& t = *it->second;
    if (dims != t.shape())
      throw DataError("checkpoint parameter '" + name + "' has shape " +
                      shape_to_string(dims) + ", model expects " +
                      shape_to_string(t.shape()));
    if (!is.read(reinterpret_cast<char*>(t.ptr()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float))))
      throw DataError("truncated checkpoint while reading '" + name + "'");
  }
  return model;
}

}  // namespace phytnet
