#pragma once

// Self-distillation across training iterations: the semantic extraction block, the
// temperature-softened distillation loss and the teacher cache.
//
// The block maps the embeddings of the current batch's head entities
// E_I [bs x d] to a semantic vector l [1 x d]:
//
//   c = mean_rows(E_I) W_C             central feature          [1 x k]
//   K = E_I W_K                         semantic features        [bs x k]
//   s = c K^T                           partial similarities     [1 x bs]
//   q = softmax(s W_P)                  whole similarities       [1 x N_e]
//   l = q E                             semantic information     [1 x d]
//
// The model at iteration t-1 supplies the teacher l (detached, cached); the
// model at iteration t is the student.

#include <optional>
#include <span>
#include <vector>

#include "kge/autograd.hpp"
#include "kge/kgdata.hpp"
#include "kge/rng.hpp"

namespace kge {

struct DistillConfig {
  bool enabled = false;
  double temperature_exponent = 5.0;  // T = 10^m
  double beta_init = 1.0;             // beta at epoch 0
  std::size_t projection_dim = 0;     // k; 0 means "same as the entity dimension"
  bool static_input = false;          // ablation: teacher always from the epoch's first batch

  double temperature() const;
  void validate() const;

  bool operator==(const DistillConfig&) const = default;
};

class SemanticBlock {
 public:
  static constexpr double kInitStd = 0.02;

  SemanticBlock(std::size_t embedding_dim, std::size_t projection_dim, std::size_t batch_size,
                std::size_t num_entities, RngState& init_rng);

  std::size_t embedding_dim() const { return central_.value().dim(0); }
  std::size_t projection_dim() const { return central_.value().dim(1); }
  std::size_t batch_size() const { return expansion_.value().dim(0); }
  std::size_t num_entities() const { return expansion_.value().dim(1); }

  Parameter& central_projection() { return central_; }   // W_C [d x k]
  Parameter& feature_projection() { return features_; }  // W_K [d x k]
  Parameter& expansion() { return expansion_; }          // W_P [bs x N_e]
  std::vector<Parameter*> parameters() { return {&central_, &features_, &expansion_}; }

  // l [1 x d] for the given batch entities (exactly batch_size of them).
  Var extract(std::span<const EntityId> batch_entities, const Var& entities);

 private:
  Parameter central_;
  Parameter features_;
  Parameter expansion_;
};

Var central_feature(const Var& batch_embeddings, const Var& central_projection);
Var semantic_features(const Var& batch_embeddings, const Var& feature_projection);
Var partial_similarities(const Var& central, const Var& features);
Var whole_similarities(const Var& partial, const Var& expansion);
Var semantic_information(const Var& whole, const Var& entities);

// Runs the block on the batch's head entities.
Var extract(const Batch& batch, const Var& entities, SemanticBlock& block);

// (T^2 / d) KL(softmax(student / T) || softmax(teacher / T)). The teacher
// never receives a gradient.
Var distill_loss(const Var& student, const Var& teacher, double temperature);

// beta_init * (1 - ep / total_epochs), clamped to [0, 1].
double beta_at_epoch(std::size_t epoch, std::size_t total_epochs, double beta_init);

// (1 - beta) * bce + beta * kl; exactly bce when beta == 0.
Var total_loss(const Var& bce, const Var& kl, double beta);

// Detached semantic vector from the previous iteration.
class TeacherCache {
 public:
  bool present() const { return semantic_.has_value(); }
  const Tensor& semantic() const { return *semantic_; }
  void store(Tensor semantic) { semantic_ = std::move(semantic); }
  void clear() { semantic_.reset(); }

 private:
  std::optional<Tensor> semantic_;
};

}  // namespace kge
