#pragma once

#include "fieldguide/dataset.hpp"
#include "fieldguide/mlp.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fieldguide {

struct LossWeights {
  double attribute_reconstruction = 1.0;
  double image_reconstruction = 1.0;
  double cross_reconstruction = 1.0;
  double alignment = 1.0;
};

struct ModelConfig {
  std::size_t latent_dim = 16;
  std::vector<std::size_t> hidden_dims{64};
  Activation activation = Activation::tanh;
  std::size_t epochs = 2000;
  std::size_t batch_size = 0;  // 0: full batch
  double learning_rate = 1e-3;
  LossWeights loss_weights;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Cross-aligned autoencoder pair sharing one latent space.
/// Attribute encoder/decoder and image-feature encoder/decoder.
class EmbeddingModel {
 public:
  ModelConfig config;
  Mlp attribute_encoder;
  Mlp image_encoder;
  Mlp attribute_decoder;
  Mlp image_decoder;
  std::optional<NormStats> norm_stats;

  std::size_t attribute_dim() const { return attribute_encoder.input_dim(); }
  std::size_t feature_dim() const { return image_encoder.input_dim(); }
  std::size_t latent_dim() const { return attribute_encoder.output_dim(); }

  Vector encode_attributes(const Vector& a) const;
  Vector encode_image(const Vector& f) const;
  Vector decode_attributes(const Vector& z) const;
  Vector decode_image(const Vector& z) const;
  /// Columns are samples.
  Matrix encode_images(const Matrix& f) const;

  /// l x d Jacobian of the attribute encoder at `a`; column i is dE/dx_i.
  Matrix attribute_jacobian(const Vector& a) const;

  void save(const std::filesystem::path& path) const;
  static EmbeddingModel load(const std::filesystem::path& path);

  bool operator==(const EmbeddingModel& other) const;
};

/// Per-epoch training losses, epoch 0 being the untrained model.
struct TrainingTrace {
  std::vector<double> total;
};

/// Trains on the base classes of a normalized dataset. Throws
/// Error(divergence) naming the epoch when the loss stops being finite or
/// explodes past 1e6 times its initial value.
EmbeddingModel train_embedding_model(const Dataset& ds, const ModelConfig& cfg, TrainingTrace* trace = nullptr);

/// Weighted training objective of `model` on the base training split.
double embedding_loss(const EmbeddingModel& model, const Dataset& ds);

// ---------------------------------------------------------------------------
// Latent-space classifier

struct ClassifierConfig {
  std::size_t epochs = 500;
  double learning_rate = 0.1;
  std::size_t n_aug = 50;
  double sigma_aug = 0.05;
  std::uint64_t seed = 1;
};

/// Multinomial logistic regression over latent vectors.
struct LatentClassifier {
  Matrix weight;  // classes x latent
  Vector bias;
  std::vector<std::string> class_ids;

  /// Index into class_ids of the best-scoring class among `allowed`
  /// (all classes when empty).
  std::size_t predict(const Vector& z, const std::vector<std::size_t>& allowed = {}) const;
  std::optional<std::size_t> index_of(const std::string& id) const;

  bool operator==(const LatentClassifier& other) const;
};

/// Base classes contribute encoded training images; each descriptor
/// contributes n_aug noisy copies of its attribute encoding.
LatentClassifier train_classifier(const EmbeddingModel& model, const Dataset& ds,
                                  const std::map<std::string, Vector>& novel_descriptors,
                                  const ClassifierConfig& cfg = {});

enum class EvalMode { unseen_only, generalized };

struct Metrics {
  double acc_unseen = 0.0;
  double acc_seen = 0.0;
  double harmonic = 0.0;
  /// Classes without evaluation images, or missing from the classifier.
  std::vector<std::string> excluded;
};

double harmonic_mean(double acc_seen, double acc_unseen);

/// Mean over classes of within-class accuracy. Entries are
/// (correct, total) per class.
double per_class_accuracy(const std::vector<std::pair<std::size_t, std::size_t>>& counts);

/// unseen_only: each split is scored against its own label set.
/// generalized: every test image competes over base and novel labels.
Metrics evaluate(const LatentClassifier& classifier, const EmbeddingModel& model, const Dataset& ds,
                 EvalMode mode);

}  // namespace fieldguide
