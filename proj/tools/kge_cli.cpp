// kge: prepare datasets, train, evaluate, export embeddings and count
// parameters. Exit codes: 0 ok, 2 configuration or usage error, 3 numeric
// abort, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "kge/config.hpp"
#include "kge/errors.hpp"
#include "kge/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::shared_ptr<const kge::TripleStore> load_store(const fs::path& dir) {
  return std::make_shared<const kge::TripleStore>(kge::augment_reciprocal(kge::load_dataset(dir)));
}

json dataset_stats(const kge::TripleStore& store) {
  return json{{"entities", store.num_entities()},
              {"relations", store.num_base_relations},
              {"train", store.train.size()},
              {"valid", store.valid.size()},
              {"test", store.test.size()}};
}

void require_same_vocabulary(const kge::Checkpoint& ck, const kge::TripleStore& store) {
  if (ck.entity_names != store.vocab.entity_names()) {
    throw kge::ConfigError("dataset entities (" + std::to_string(store.num_entities()) +
                           ") do not match the checkpoint vocabulary (" + std::to_string(ck.entity_names.size()) + ")");
  }
  const auto& names = store.vocab.relation_names();
  if (ck.relation_names.size() != store.num_base_relations ||
      !std::equal(ck.relation_names.begin(), ck.relation_names.end(), names.begin())) {
    throw kge::ConfigError("dataset relations do not match the checkpoint vocabulary");
  }
}

int cmd_prepare(const std::string& dir, bool synthetic, std::size_t entities, std::size_t relations,
                std::size_t pairs, std::uint64_t seed) {
  if (synthetic) kge::write_dataset(kge::make_synthetic(entities, relations, pairs, seed), dir);
  const kge::TripleStore store = kge::load_dataset(dir);
  std::cout << dataset_stats(store).dump() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume_dir, std::size_t stop_after) {
  const kge::RunConfig config = kge::load_run_config(config_path);
  if (config.dataset_dir.empty()) throw kge::ConfigError("dataset_dir is required");
  if (config.output_dir.empty()) throw kge::ConfigError("output_dir is required");
  auto store = load_store(config.dataset_dir);

  std::unique_ptr<kge::Trainer> trainer;
  if (resume_dir.empty()) {
    trainer = std::make_unique<kge::Trainer>(config, store);
  } else {
    const kge::Checkpoint ck = kge::load_checkpoint(resume_dir);
    require_same_vocabulary(ck, *store);
    trainer = kge::Trainer::resume(ck, config, store);
  }

  const fs::path out = config.output_dir;
  fs::create_directories(out);
  const auto mode = resume_dir.empty() ? std::ios::trunc : std::ios::app;
  std::ofstream metrics(out / "metrics.jsonl", std::ios::out | mode);
  if (!metrics) throw kge::IoError("cannot write " + (out / "metrics.jsonl").string());

  const std::size_t last = stop_after ? std::min(stop_after, config.train.epochs) : config.train.epochs;
  trainer->run(last, [&](const kge::EpochMetrics& m) {
    metrics << kge::to_json(m).dump() << "\n";
    metrics.flush();
    std::fprintf(stderr, "epoch %zu  bce %.6f  kl %.6g  beta %.4f  lr %.6g%s\n", m.epoch, m.loss_bce, m.loss_kl,
                 m.beta, m.lr, m.valid ? ("  valid mrr " + std::to_string(m.valid->mrr)).c_str() : "");
  });
  trainer->save_checkpoint(out / "checkpoint");
  return 0;
}

kge::TiePolicy parse_tie_policy(const std::string& name) {
  if (name == "average") return kge::TiePolicy::kAverage;
  if (name == "optimistic") return kge::TiePolicy::kOptimistic;
  if (name == "pessimistic") return kge::TiePolicy::kPessimistic;
  throw kge::ConfigError("unknown tie policy '" + name + "'");
}

int cmd_evaluate(const std::string& ckpt_dir, const std::string& dataset_dir, const std::string& split_name,
                 const std::string& ties) {
  if (split_name != "valid" && split_name != "test") {
    throw kge::ConfigError("split must be 'valid' or 'test', got '" + split_name + "'");
  }
  kge::EvalOptions options;
  options.tie_policy = parse_tie_policy(ties);
  const kge::Checkpoint ck = kge::load_checkpoint(ckpt_dir);
  auto store = load_store(dataset_dir);
  require_same_vocabulary(ck, *store);
  auto trainer = kge::Trainer::resume(ck, ck.config, store);
  const kge::MetricsReport report = trainer->evaluate(kge::parse_split(split_name), options);
  json out = kge::to_json(report);
  out["split"] = split_name;
  out["epoch"] = ck.epoch;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_export(const std::string& ckpt_dir, const std::string& out_path) {
  const kge::Checkpoint ck = kge::load_checkpoint(ckpt_dir);
  const auto it = ck.tensors.find("entity");
  if (it == ck.tensors.end()) throw kge::CheckpointError("checkpoint has no entity table");
  const kge::Tensor& e = it->second;
  if (e.rank() != 2 || e.dim(0) != ck.entity_names.size()) {
    throw kge::CheckpointError("entity table does not match the checkpoint vocabulary");
  }
  std::ofstream out(out_path);
  if (!out) throw kge::IoError("cannot write " + out_path);
  char buf[32];
  const std::size_t d = e.dim(1);
  for (std::size_t i = 0; i < e.dim(0); ++i) {
    out << ck.entity_names[i];
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", e[i * d + j]);
      out << '\t' << buf;
    }
    out << '\n';
  }
  out.close();
  if (!out) throw kge::IoError("failed writing " + out_path);
  return 0;
}

int cmd_count(const std::string& config_path, std::size_t entities, std::size_t relations) {
  const kge::RunConfig config = kge::load_run_config(config_path);
  if (entities == 0 || relations == 0) {
    if (config.dataset_dir.empty()) throw kge::ConfigError("dataset_dir is required without --entities/--relations");
    const kge::TripleStore store = kge::load_dataset(config.dataset_dir);
    if (entities == 0) entities = store.num_entities();
    if (relations == 0) relations = store.num_base_relations;
  }
  std::optional<kge::BlockDims> block;
  if (config.isd.enabled) block = kge::BlockDims{config.model.entity_dim, config.projection_dim(), config.train.batch_size};
  std::cout << kge::count_parameters(config.model, entities, 2 * relations, block) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge graph embedding training and evaluation"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "Check a dataset directory and print its statistics");
  std::string prepare_dir;
  bool synthetic = false;
  std::size_t syn_entities = 20, syn_relations = 2, syn_pairs = 10;
  std::uint64_t syn_seed = 1;
  prepare->add_option("dataset", prepare_dir, "Directory with train.txt, valid.txt, test.txt")->required();
  prepare->add_flag("--synthetic", synthetic, "Write a deterministic toy graph into the directory first");
  prepare->add_option("--entities", syn_entities, "Synthetic entity count")->capture_default_str();
  prepare->add_option("--relations", syn_relations, "Synthetic relation count")->capture_default_str();
  prepare->add_option("--pairs", syn_pairs, "Synthetic pairs per relation")->capture_default_str();
  prepare->add_option("--seed", syn_seed, "Synthetic seed")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a model and write metrics.jsonl and a checkpoint");
  std::string train_config, resume_dir;
  std::size_t stop_after = 0;
  train->add_option("--config", train_config, "Run config (JSON)")->required();
  train->add_option("--resume", resume_dir, "Checkpoint directory to continue from");
  train->add_option("--stop-after", stop_after, "Stop once this many epochs are complete");

  auto* evaluate = app.add_subcommand("evaluate", "Filtered link-prediction metrics for a checkpoint");
  std::string eval_ckpt, eval_data, eval_split, ties = "average";
  evaluate->add_option("checkpoint", eval_ckpt, "Checkpoint directory")->required();
  evaluate->add_option("dataset", eval_data, "Dataset directory")->required();
  evaluate->add_option("split", eval_split, "valid or test")->required();
  evaluate->add_option("--ties", ties, "average, optimistic or pessimistic")->capture_default_str();

  auto* exporter = app.add_subcommand("export-embeddings", "Write entity embeddings as TSV");
  std::string export_ckpt, export_out;
  exporter->add_option("checkpoint", export_ckpt, "Checkpoint directory")->required();
  exporter->add_option("out", export_out, "Output TSV path")->required();

  auto* count = app.add_subcommand("count-params", "Print the learnable parameter count");
  std::string count_config;
  std::size_t count_entities = 0, count_relations = 0;
  count->add_option("--config", count_config, "Run config (JSON)")->required();
  count->add_option("--entities", count_entities, "Entity count instead of reading the dataset");
  count->add_option("--relations", count_relations, "Base relation count instead of reading the dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*prepare) return cmd_prepare(prepare_dir, synthetic, syn_entities, syn_relations, syn_pairs, syn_seed);
    if (*train) return cmd_train(train_config, resume_dir, stop_after);
    if (*evaluate) return cmd_evaluate(eval_ckpt, eval_data, eval_split, ties);
    if (*exporter) return cmd_export(export_ckpt, export_out);
    if (*count) return cmd_count(count_config, count_entities, count_relations);
  } catch (const kge::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const kge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const kge::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const kge::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
