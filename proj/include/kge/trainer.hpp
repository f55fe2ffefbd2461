#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kge/config.hpp"
#include "kge/eval.hpp"
#include "kge/isd.hpp"
#include "kge/kgdata.hpp"
#include "kge/models.hpp"

namespace kge {

// Mean sigmoid BCE of logits against (smoothed) multi-label targets.
Var bce_loss(const Var& logits, const Tensor& targets);

// lr0 * decay^epoch
double lr_at_epoch(std::size_t epoch, double initial_lr, double decay);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  // Zero moments shaped like `params`.
  static AdamState for_parameters(std::span<Parameter* const> params);
};

// Bias-corrected Adam update using each parameter's accumulated gradient.
void adam_step(std::span<Parameter* const> params, AdamState& state, double learning_rate);

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss_bce = 0.0;
  double loss_kl = 0.0;
  double beta = 0.0;
  double lr = 0.0;
  std::optional<MetricsReport> valid;
};

nlohmann::json to_json(const EpochMetrics& m);
EpochMetrics epoch_metrics_from_json(const nlohmann::json& j);

struct IterationStats {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double loss_bce = 0.0;
  double loss_kl = 0.0;
  double loss_total = 0.0;
  double beta = 0.0;
  bool distilled = false;  // whether a teacher was present and the KL term evaluated
};

// A checkpoint as read from disk.
struct Checkpoint {
  RunConfig config;
  std::size_t epoch = 0;
  std::uint64_t shuffle_counter = 0;
  std::uint64_t dropout_counter = 0;
  std::uint64_t adam_step = 0;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::vector<EpochMetrics> history;
  std::vector<std::string> entity_names;
  std::vector<std::string> relation_names;
  std::map<std::string, Tensor> tensors;
};

// Owns the model, the semantic block, optimizer state, random streams and the
// teacher cache for one run over a reciprocal-augmented store.
class Trainer {
 public:
  Trainer(RunConfig config, std::shared_ptr<const TripleStore> store);

  // Rebuilds the trainer from a checkpoint. Throws CheckpointError when the
  // checkpoint's model config or vocabulary sizes disagree with `config` or
  // `store`.
  static std::unique_ptr<Trainer> resume(const Checkpoint& checkpoint, RunConfig config,
                                         std::shared_ptr<const TripleStore> store);

  // Trains epoch `epoch()` and advances the counter. Throws NumericError
  // naming the batch when the loss stops being finite.
  EpochMetrics train_epoch();
  // Convenience: train until `epoch() == config.train.epochs` or `stop_after`
  // epochs in total, calling `on_epoch` after each.
  void run(std::size_t stop_after, const std::function<void(const EpochMetrics&)>& on_epoch = {});

  MetricsReport evaluate(Split split, const EvalOptions& options = {});

  std::size_t epoch() const { return epoch_; }
  const RunConfig& config() const { return config_; }
  KgeModel& model() { return *model_; }
  SemanticBlock* block() { return block_ ? block_.get() : nullptr; }
  TeacherCache& teacher() { return teacher_; }
  const std::vector<EpochMetrics>& history() const { return history_; }
  const TripleStore& store() const { return *store_; }

  // All learnable parameters: model first, then the block.
  std::vector<Parameter*> parameters();

  void set_iteration_callback(std::function<void(const IterationStats&)> callback) {
    on_iteration_ = std::move(callback);
  }
  // Evaluate the distillation term even when beta == 0 (it is then weighted
  // by zero). Off by default, in which case a zero beta skips it.
  void set_evaluate_inactive_distillation(bool value) { evaluate_inactive_ = value; }

  void save_checkpoint(const std::filesystem::path& directory) const;

 private:
  void refresh_teacher(std::span<const EntityId> entities);

  RunConfig config_;
  std::shared_ptr<const TripleStore> store_;
  std::unique_ptr<FilterIndex> filter_;
  QueryTable queries_;
  std::unique_ptr<KgeModel> model_;
  std::unique_ptr<SemanticBlock> block_;
  AdamState adam_;
  RngState shuffle_rng_;
  RngState dropout_rng_;
  TeacherCache teacher_;
  std::size_t epoch_ = 0;
  std::vector<EpochMetrics> history_;
  std::function<void(const IterationStats&)> on_iteration_;
  bool evaluate_inactive_ = false;
};

// Tensor file: "KGE1", u32 rank, rank x u64 dims, then f64 values, all
// little-endian.
void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor_file(const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& directory);

}  // namespace kge
