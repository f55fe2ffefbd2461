#include "kge/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "kge/errors.hpp"

namespace kge {

Var bce_loss(const Var& logits, const Tensor& targets) { return ops::bce_with_logits(logits, targets); }

double lr_at_epoch(std::size_t epoch, double initial_lr, double decay) {
  return initial_lr * std::pow(decay, static_cast<double>(epoch));
}

AdamState AdamState::for_parameters(std::span<Parameter* const> params) {
  AdamState state;
  for (const Parameter* p : params) {
    state.first_moment.emplace_back(p->value().shape());
    state.second_moment.emplace_back(p->value().shape());
  }
  return state;
}

void adam_step(std::span<Parameter* const> params, AdamState& state, double learning_rate) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double correction2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable()) continue;
    Tensor& value = p.value();
    const Tensor& grad = p.gradient();
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    require_same_shape(value, m, "adam_step");
    if (grad.numel() != value.numel()) continue;  // nothing accumulated
    const auto n = static_cast<std::ptrdiff_t>(value.numel());
#pragma omp parallel for schedule(static) if (n > (1 << 16))
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const double g = grad[i];
      m[i] = AdamState::kBeta1 * m[i] + (1.0 - AdamState::kBeta1) * g;
      v[i] = AdamState::kBeta2 * v[i] + (1.0 - AdamState::kBeta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  }
}

nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j{{"epoch", m.epoch}, {"loss_bce", m.loss_bce}, {"loss_kl", m.loss_kl}, {"beta", m.beta}, {"lr", m.lr}};
  if (m.valid) {
    j["valid_mrr"] = m.valid->mrr;
    j["valid_h1"] = m.valid->h1;
    j["valid_h3"] = m.valid->h3;
    j["valid_h10"] = m.valid->h10;
  }
  return j;
}

EpochMetrics epoch_metrics_from_json(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<std::size_t>();
  m.loss_bce = j.at("loss_bce").get<double>();
  m.loss_kl = j.at("loss_kl").get<double>();
  m.beta = j.at("beta").get<double>();
  m.lr = j.at("lr").get<double>();
  if (j.contains("valid_mrr")) {
    MetricsReport r;
    r.mrr = j.at("valid_mrr").get<double>();
    r.h1 = j.at("valid_h1").get<double>();
    r.h3 = j.at("valid_h3").get<double>();
    r.h10 = j.at("valid_h10").get<double>();
    m.valid = r;
  }
  return m;
}

Trainer::Trainer(RunConfig config, std::shared_ptr<const TripleStore> store)
    : config_(std::move(config)), store_(std::move(store)), queries_(store_->train) {
  config_.validate();
  if (!store_->augmented) throw UsageError("training requires a reciprocal-augmented store");
  if (config_.train.batch_size > queries_.size()) {
    throw ConfigError("batch size " + std::to_string(config_.train.batch_size) + " exceeds the " +
                      std::to_string(queries_.size()) + " distinct training queries");
  }
  const std::uint64_t seed = config_.train.seed;
  RngState model_init = RngState::stream(seed, "model-init");
  model_ = std::make_unique<KgeModel>(config_.model, store_->num_entities(), store_->num_relations(), model_init);
  if (config_.isd.enabled) {
    RngState block_init = RngState::stream(seed, "block-init");
    block_ = std::make_unique<SemanticBlock>(config_.model.entity_dim, config_.projection_dim(),
                                             config_.train.batch_size, store_->num_entities(), block_init);
  }
  const auto params = parameters();
  adam_ = AdamState::for_parameters(params);
  shuffle_rng_ = RngState::stream(seed, "shuffle");
  dropout_rng_ = RngState::stream(seed, "dropout");
}

std::vector<Parameter*> Trainer::parameters() {
  auto params = model_->parameters();
  if (block_) {
    for (Parameter* p : block_->parameters()) params.push_back(p);
  }
  return params;
}

void Trainer::refresh_teacher(std::span<const EntityId> entities) {
  const Var detached_table(model_->entities().value());
  teacher_.store(block_->extract(entities, detached_table).value());
}

EpochMetrics Trainer::train_epoch() {
  const TrainConfig& tc = config_.train;
  if (epoch_ >= tc.epochs) throw UsageError("training schedule of " + std::to_string(tc.epochs) + " epochs is complete");
  const std::size_t ep = epoch_;
  const std::size_t n_entities = store_->num_entities();
  const bool isd = config_.isd.enabled;
  const double beta = isd ? beta_at_epoch(ep, tc.epochs, config_.isd.beta_init) : 0.0;
  const double lr = lr_at_epoch(ep, tc.learning_rate, tc.lr_decay);
  const double temperature = config_.isd.temperature();

  auto batches = make_batches(queries_, tc.batch_size, shuffle_rng_);
  const std::vector<EntityId> first_heads = batches.front().heads();
  auto params = parameters();

  double bce_sum = 0.0, kl_sum = 0.0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Batch& batch = batches[b];
    for (Parameter* p : params) p->zero_grad();

    const Var logits = model_->forward(batch.queries, /*training=*/true, dropout_rng_);
    const Tensor targets = label_smooth(batch.targets(n_entities), tc.label_smoothing);
    const Var bce = bce_loss(logits, targets);

    const bool distilled = isd && teacher_.present() && (beta > 0.0 || evaluate_inactive_);
    const std::vector<EntityId> heads = batch.heads();
    Var kl(Tensor({}, {0.0}));
    if (distilled) {
      const Var student = block_->extract(heads, model_->entities().var());
      kl = distill_loss(student, Var(teacher_.semantic()), temperature);
    }
    const Var loss = total_loss(bce, kl, beta);
    if (!std::isfinite(loss.item())) {
      throw NumericError("non-finite loss at epoch " + std::to_string(ep) + ", batch " + std::to_string(b));
    }
    backward(loss);
    adam_step(params, adam_, lr);
    if (isd) refresh_teacher(config_.isd.static_input ? std::span<const EntityId>(first_heads) : heads);

    bce_sum += bce.item();
    kl_sum += kl.item();
    if (on_iteration_) on_iteration_({ep, b, bce.item(), kl.item(), loss.item(), beta, distilled});
  }

  EpochMetrics metrics;
  metrics.epoch = ep;
  metrics.loss_bce = bce_sum / static_cast<double>(batches.size());
  metrics.loss_kl = kl_sum / static_cast<double>(batches.size());
  metrics.beta = beta;
  metrics.lr = lr;
  ++epoch_;
  if (tc.eval_every > 0 && (epoch_ % tc.eval_every == 0 || epoch_ == tc.epochs) && !store_->valid.empty()) {
    metrics.valid = evaluate(Split::kValid);
  }
  history_.push_back(metrics);
  return metrics;
}

void Trainer::run(std::size_t stop_after, const std::function<void(const EpochMetrics&)>& on_epoch) {
  const std::size_t last = std::min(stop_after, config_.train.epochs);
  while (epoch_ < last) {
    const EpochMetrics m = train_epoch();
    if (on_epoch) on_epoch(m);
  }
}

MetricsReport Trainer::evaluate(Split split, const EvalOptions& options) {
  if (!filter_) filter_ = std::make_unique<FilterIndex>(*store_);
  return kge::evaluate(*model_, store_->split(split), store_->num_base_relations, *filter_, options);
}

namespace {

constexpr char kMagic[4] = {'K', 'G', 'E', '1'};
constexpr const char* kFormat = "kge-checkpoint";
constexpr int kVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const std::string& in, std::size_t offset, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_names(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::string text;
  for (const auto& n : names) text += n + "\n";
  write_file(path, text);
}

std::vector<std::string> read_names(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> names;
  for (std::string line; std::getline(in, line);) names.push_back(line);
  return names;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor) {
  std::string bytes(kMagic, 4);
  put_u32(bytes, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) put_u64(bytes, d);
  bytes.reserve(bytes.size() + 8 * tensor.numel());
  for (double x : tensor.span()) put_u64(bytes, std::bit_cast<std::uint64_t>(x));
  write_file(path, bytes);
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = path.filename().string();
  if (bytes.size() < 8 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw CheckpointError(where + ": bad header (expected KGE1 magic)");
  }
  const auto rank = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (rank > kMaxRank) throw CheckpointError(where + ": implausible rank " + std::to_string(rank));
  const std::size_t header = 8 + 8 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw CheckpointError(where + ": truncated header");
  Shape shape(rank);
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = get_le(bytes, 8 + 8 * i, 8);
    if (shape[i] != 0 && numel > (bytes.size() / 8) / shape[i]) {
      throw CheckpointError(where + ": truncated data");
    }
    numel *= shape[i];
  }
  if (bytes.size() != header + 8 * numel) {
    throw CheckpointError(where + ": expected " + std::to_string(header + 8 * numel) + " bytes, found " +
                          std::to_string(bytes.size()) + (bytes.size() < header + 8 * numel ? " (truncated)" : ""));
  }
  std::vector<double> data(numel);
  for (std::size_t i = 0; i < numel; ++i) data[i] = std::bit_cast<double>(get_le(bytes, header + 8 * i, 8));
  return Tensor(std::move(shape), std::move(data));
}

void Trainer::save_checkpoint(const std::filesystem::path& directory) const {
  std::filesystem::create_directories(directory);
  auto& self = const_cast<Trainer&>(*this);  // parameter accessors are non-const
  std::map<std::string, const Tensor*> tensors;
  const auto params = self.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::string& name = params[k]->name();
    tensors[name] = &params[k]->value();
    tensors["adam_m." + name] = &adam_.first_moment[k];
    tensors["adam_v." + name] = &adam_.second_moment[k];
  }
  for (const auto& [name, buffer] : self.model_->buffers()) tensors[name] = buffer;
  if (teacher_.present()) tensors["teacher_cache"] = &teacher_.semantic();

  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, tensor] : tensors) {
    write_tensor_file(directory / (name + ".bin"), *tensor);
    names.push_back(name);
  }
  nlohmann::json history = nlohmann::json::array();
  for (const auto& m : history_) history.push_back(to_json(m));

  const auto& vocab = store_->vocab;
  std::vector<std::string> relations(vocab.relation_names().begin(),
                                     vocab.relation_names().begin() + static_cast<std::ptrdiff_t>(store_->num_base_relations));
  write_names(directory / "entities.txt", vocab.entity_names());
  write_names(directory / "relations.txt", relations);

  const nlohmann::json manifest{
      {"format", kFormat},
      {"version", kVersion},
      {"config", to_json(config_)},
      {"epoch", epoch_},
      {"seed", config_.train.seed},
      {"rng", {{"shuffle", shuffle_rng_.counter()}, {"dropout", dropout_rng_.counter()}}},
      {"adam_step", adam_.step},
      {"num_entities", store_->num_entities()},
      {"num_relations", store_->num_relations()},
      {"teacher_present", teacher_.present()},
      {"tensors", names},
      {"metrics", history},
  };
  write_file(directory / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& directory) {
  const auto manifest_path = directory / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw CheckpointError("no manifest.json in " + directory.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("manifest.json: " + std::string(e.what()));
  }
  try {
    if (manifest.value("format", std::string()) != kFormat) throw CheckpointError("manifest.json: not a checkpoint");
    const int version = manifest.at("version").get<int>();
    if (version != kVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                            std::to_string(kVersion) + ")");
    }
    Checkpoint ck;
    try {
      ck.config = parse_run_config(manifest.at("config"));
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("manifest.json config: ") + e.what());
    }
    ck.epoch = manifest.at("epoch").get<std::size_t>();
    ck.shuffle_counter = manifest.at("rng").at("shuffle").get<std::uint64_t>();
    ck.dropout_counter = manifest.at("rng").at("dropout").get<std::uint64_t>();
    ck.adam_step = manifest.at("adam_step").get<std::uint64_t>();
    ck.num_entities = manifest.at("num_entities").get<std::size_t>();
    ck.num_relations = manifest.at("num_relations").get<std::size_t>();
    for (const auto& m : manifest.at("metrics")) ck.history.push_back(epoch_metrics_from_json(m));
    for (const auto& name : manifest.at("tensors")) {
      const auto n = name.get<std::string>();
      ck.tensors.emplace(n, read_tensor_file(directory / (n + ".bin")));
    }
    ck.entity_names = read_names(directory / "entities.txt");
    ck.relation_names = read_names(directory / "relations.txt");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("manifest.json: " + std::string(e.what()));
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
}

namespace {

void restore(Tensor& target, const Checkpoint& ck, const std::string& name) {
  const auto it = ck.tensors.find(name);
  if (it == ck.tensors.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
  if (it->second.shape() != target.shape()) {
    throw CheckpointError("tensor '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                          shape_string(target.shape()));
  }
  target = it->second;
}

}  // namespace

std::unique_ptr<Trainer> Trainer::resume(const Checkpoint& ck, RunConfig config,
                                         std::shared_ptr<const TripleStore> store) {
  if (!(ck.config.model == config.model)) {
    throw CheckpointError(std::string("checkpoint model config (") + model_kind_name(ck.config.model.kind) +
                          ") does not match the requested one (" + model_kind_name(config.model.kind) + ")");
  }
  auto resolved = [](DistillConfig d, std::size_t dim) {
    if (d.projection_dim == 0) d.projection_dim = dim;
    return d;
  };
  if (!(resolved(ck.config.isd, ck.config.model.entity_dim) == resolved(config.isd, config.model.entity_dim)))
    throw CheckpointError("checkpoint distillation settings differ from the config");
  if (ck.config.train.seed != config.train.seed || ck.config.train.batch_size != config.train.batch_size) {
    throw CheckpointError("checkpoint seed or batch size differs from the config");
  }
  if (ck.num_entities != store->num_entities() || ck.num_relations != store->num_relations()) {
    throw CheckpointError("checkpoint vocabulary (" + std::to_string(ck.num_entities) + " entities, " +
                          std::to_string(ck.num_relations) + " relations) does not match the dataset");
  }
  if (ck.epoch > config.train.epochs) throw CheckpointError("checkpoint is past the configured schedule");

  auto trainer = std::make_unique<Trainer>(std::move(config), std::move(store));
  const auto params = trainer->parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::string& name = params[k]->name();
    restore(params[k]->value(), ck, name);
    restore(trainer->adam_.first_moment[k], ck, "adam_m." + name);
    restore(trainer->adam_.second_moment[k], ck, "adam_v." + name);
  }
  for (const auto& [name, buffer] : trainer->model_->buffers()) restore(*buffer, ck, name);
  if (const auto it = ck.tensors.find("teacher_cache"); it != ck.tensors.end()) trainer->teacher_.store(it->second);
  trainer->adam_.step = ck.adam_step;
  const std::uint64_t seed = trainer->config_.train.seed;
  trainer->shuffle_rng_ = RngState(RngState::stream(seed, "shuffle").seed(), ck.shuffle_counter);
  trainer->dropout_rng_ = RngState(RngState::stream(seed, "dropout").seed(), ck.dropout_counter);
  trainer->epoch_ = ck.epoch;
  trainer->history_ = ck.history;
  return trainer;
}

}  // namespace kge
