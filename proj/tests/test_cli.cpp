#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kge/kgdata.hpp"
#include "kge/trainer.hpp"
#include "support/cli.hpp"

using namespace kge;
using kge::testing::quoted;
using kge::testing::run_cli;
using kge::testing::TempDir;
using nlohmann::json;

namespace {

std::filesystem::path write_config(const TempDir& dir, const std::string& name, json doc) {
  const auto path = dir / name;
  kge::testing::write_text(path, doc.dump(2));
  return path;
}

json toy_run(const std::filesystem::path& data, const std::filesystem::path& out) {
  return json{{"dataset_dir", data.string()},
              {"output_dir", out.string()},
              {"model", {{"kind", "distmult"}, {"d_e", 8}}},
              {"train", {{"batch_size", 4}, {"epochs", 10}, {"seed", 5}, {"eval_every", 5}, {"lr", 0.01}}}};
}

std::filesystem::path make_toy(const TempDir& dir) {
  const auto data = dir / "toy";
  const auto r = run_cli("prepare " + quoted(data) + " --synthetic --entities 20 --relations 2 --pairs 10", dir.path());
  REQUIRE(r.exit_code == 0);
  const json stats = json::parse(r.out);
  REQUIRE(stats["entities"] == 20);
  REQUIRE(stats["relations"] == 2);
  return data;
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("train on the toy graph writes one metrics line per epoch") {
  TempDir dir;
  const auto data = make_toy(dir);
  const auto cfg = write_config(dir, "run.json", toy_run(data, dir / "run"));
  const auto r = run_cli("train --config " + quoted(cfg), dir.path());
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  const std::string metrics = kge::testing::read_text(dir / "run" / "metrics.jsonl");
  CHECK(count_lines(metrics) == 10);
  std::istringstream lines(metrics);
  std::string line;
  std::size_t epoch = 0;
  while (std::getline(lines, line)) {
    const json j = json::parse(line);
    CHECK(j["epoch"] == epoch);
    for (const char* key : {"loss_bce", "loss_kl", "beta", "lr"}) CHECK(j.contains(key));
    CHECK(j.contains("valid_mrr") == (epoch == 4 || epoch == 9));
    ++epoch;
  }
  CHECK(std::filesystem::exists(dir / "run" / "checkpoint" / "manifest.json"));
}

TEST_CASE("config errors exit with status 2 naming the key") {
  TempDir dir;
  const auto data = make_toy(dir);
  json doc = toy_run(data, dir / "run");
  doc["isd"] = {{"temprature", 5}};
  const auto r = run_cli("train --config " + quoted(write_config(dir, "bad.json", doc)), dir.path());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("temprature") != std::string::npos);
  CHECK(run_cli("train --config " + quoted(dir / "missing.json"), dir.path()).exit_code == 2);
  CHECK(run_cli("train", dir.path()).exit_code == 2);
  CHECK(run_cli("frobnicate", dir.path()).exit_code == 2);
}

TEST_CASE("a non-finite loss exits with status 3") {
  TempDir dir;
  const auto data = make_toy(dir);
  json doc = toy_run(data, dir / "run");
  doc["train"]["lr"] = 1e300;
  doc["train"]["label_smoothing"] = 0.0;
  const auto r = run_cli("train --config " + quoted(write_config(dir, "huge.json", doc)), dir.path());
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("batch") != std::string::npos);
}

TEST_CASE("enabled distillation with zero beta writes the same metrics as disabled") {
  TempDir dir;
  const auto data = make_toy(dir);
  json off = toy_run(data, dir / "off");
  json on = toy_run(data, dir / "on");
  on["isd"] = {{"enabled", true}, {"beta_init", 0.0}};
  REQUIRE(run_cli("train --config " + quoted(write_config(dir, "off.json", off)), dir.path()).exit_code == 0);
  REQUIRE(run_cli("train --config " + quoted(write_config(dir, "on.json", on)), dir.path()).exit_code == 0);
  CHECK(kge::testing::read_text(dir / "off" / "metrics.jsonl") == kge::testing::read_text(dir / "on" / "metrics.jsonl"));
}

TEST_CASE("identical runs produce byte-identical metrics and stopped runs resume exactly") {
  TempDir dir;
  const auto data = make_toy(dir);
  auto with_isd = [&](const std::filesystem::path& out) {
    json doc = toy_run(data, out);
    doc["isd"] = {{"enabled", true}, {"m_exponent", 1}};
    return doc;
  };
  const auto a = write_config(dir, "a.json", with_isd(dir / "a"));
  const auto b = write_config(dir, "b.json", with_isd(dir / "b"));
  const auto c = write_config(dir, "c.json", with_isd(dir / "c"));
  REQUIRE(run_cli("train --config " + quoted(a), dir.path()).exit_code == 0);
  REQUIRE(run_cli("train --config " + quoted(b), dir.path()).exit_code == 0);
  const std::string metrics_a = kge::testing::read_text(dir / "a" / "metrics.jsonl");
  CHECK(metrics_a == kge::testing::read_text(dir / "b" / "metrics.jsonl"));

  REQUIRE(run_cli("train --config " + quoted(c) + " --stop-after 6", dir.path()).exit_code == 0);
  CHECK(count_lines(kge::testing::read_text(dir / "c" / "metrics.jsonl")) == 6);
  const auto r = run_cli("train --config " + quoted(c) + " --resume " + quoted(dir / "c" / "checkpoint"), dir.path());
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(kge::testing::read_text(dir / "c" / "metrics.jsonl") == metrics_a);
  for (const char* f : {"entity.bin", "relation.bin", "isd_expansion.bin", "teacher_cache.bin"})
    CHECK(kge::testing::read_text(dir / "c" / "checkpoint" / f) == kge::testing::read_text(dir / "a" / "checkpoint" / f));
}

TEST_CASE("evaluate") {
  TempDir dir;
  // test.txt duplicates train.txt so the train split can be scored.
  const auto data = dir / "mem";
  write_dataset(make_synthetic(30, 3, 20, 7), data);
  std::filesystem::copy_file(data / "train.txt", data / "test.txt", std::filesystem::copy_options::overwrite_existing);
  const json doc = {{"dataset_dir", data.string()},
                    {"output_dir", (dir / "mem-run").string()},
                    {"model", {{"kind", "distmult"}, {"d_e", 16}, {"dropout1", 0.0}, {"dropout2", 0.0}, {"dropout3", 0.0}}},
                    {"train", {{"batch_size", 8}, {"epochs", 300}, {"lr", 0.01}, {"seed", 7}, {"eval_every", 0}}}};
  REQUIRE(run_cli("train --config " + quoted(write_config(dir, "mem.json", doc)), dir.path()).exit_code == 0);
  const auto ckpt = dir / "mem-run" / "checkpoint";

  const auto first = run_cli("evaluate " + quoted(ckpt) + " " + quoted(data) + " test", dir.path());
  REQUIRE(first.exit_code == 0);
  const json report = json::parse(first.out);
  CHECK(report["mrr"].get<double>() >= 0.95);
  for (const char* key : {"mrr", "h1", "h3", "h10", "head", "tail", "num_triples"}) CHECK(report.contains(key));
  CHECK(report["num_triples"] == load_dataset(data).train.size());

  const auto second = run_cli("evaluate " + quoted(ckpt) + " " + quoted(data) + " test", dir.path());
  CHECK(second.out == first.out);

  CHECK(run_cli("evaluate " + quoted(ckpt) + " " + quoted(data) + " train", dir.path()).exit_code == 2);
  CHECK(run_cli("evaluate " + quoted(ckpt) + " " + quoted(data) + " dev", dir.path()).exit_code == 2);
  CHECK(run_cli("evaluate " + quoted(ckpt) + " " + quoted(data) + " valid", dir.path()).exit_code == 0);

  const auto other = dir / "other";
  write_dataset(make_synthetic(25, 3, 20, 7), other);
  const auto mismatch = run_cli("evaluate " + quoted(ckpt) + " " + quoted(other) + " test", dir.path());
  CHECK(mismatch.exit_code == 2);
  CHECK(run_cli("evaluate " + quoted(dir / "nowhere") + " " + quoted(data) + " test", dir.path()).exit_code == 2);
}

TEST_CASE("export-embeddings") {
  TempDir dir;
  const auto data = make_toy(dir);
  const auto cfg = write_config(dir, "run.json", toy_run(data, dir / "run"));
  REQUIRE(run_cli("train --config " + quoted(cfg), dir.path()).exit_code == 0);
  const auto ckpt = dir / "run" / "checkpoint";
  REQUIRE(run_cli("export-embeddings " + quoted(ckpt) + " " + quoted(dir / "e.tsv"), dir.path()).exit_code == 0);

  const Checkpoint ck = load_checkpoint(ckpt);
  const Tensor& e = ck.tensors.at("entity");
  std::ifstream in(dir / "e.tsv");
  std::string line;
  std::size_t rows = 0;
  double worst = 0.0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string field;
    std::vector<std::string> cols;
    while (std::getline(fields, field, '\t')) cols.push_back(field);
    REQUIRE(cols.size() == 9);
    CHECK(cols[0] == ck.entity_names[rows]);
    for (std::size_t j = 0; j < 8; ++j) worst = std::max(worst, std::abs(std::stod(cols[j + 1]) - e[rows * 8 + j]));
    ++rows;
  }
  CHECK(rows == 20);
  CHECK(worst <= 1e-15);

  kge::testing::write_text(dir / "plain", "x");
  CHECK(run_cli("export-embeddings " + quoted(ckpt) + " " + quoted(dir / "plain" / "e.tsv"), dir.path()).exit_code != 0);
}

TEST_CASE("count-params") {
  TempDir dir;
  auto count = [&](json doc, const std::string& extra) {
    const auto r = run_cli("count-params --config " + quoted(write_config(dir, "c.json", doc)) + " " + extra, dir.path());
    REQUIRE(r.exit_code == 0);
    return std::stoull(r.out);
  };
  const std::string wn = "--entities 40943 --relations 11";
  CHECK(count(json{{"model", {{"kind", "distmult"}, {"d_e", 100}}}}, wn) == 4096500ull);
  CHECK(count(json{{"model", {{"kind", "distmult"}, {"d_e", 100}}}, {"isd", {{"enabled", true}, {"k_b", 100}}},
                   {"train", {{"batch_size", 512}}}},
              wn) == 4096500ull + 20982816ull);
  std::uint64_t previous = 0;
  for (int d = 100; d <= 250; d += 25) {
    const std::uint64_t n = count(json{{"model", {{"kind", "distmult"}, {"d_e", d}}}}, wn);
    CHECK(n > previous);
    previous = n;
  }
  const auto data = make_toy(dir);
  CHECK(count(json{{"dataset_dir", data.string()}, {"model", {{"d_e", 8}}}}, "") == 20 * 8 + 4 * 8);
}
