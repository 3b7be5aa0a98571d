#pragma once

#include "omg/dataset.hpp"
#include "omg/nn.hpp"
#include "omg/optim.hpp"
#include "omg/text.hpp"

#include <Eigen/Core>

#include <memory>
#include <string>
#include <vector>

namespace omg {

using Feature = Eigen::VectorXd;

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased sample covariance
  std::int64_t count = 0;
};

/// Requires at least two features of equal dimension.
FeatureStats feature_stats(const std::vector<Feature>& features);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), square
/// roots by symmetric eigendecomposition with negative eigenvalues clipped.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// Mean Euclidean distance over `n_pairs` disjoint random pairs.
double diversity(const std::vector<Feature>& features, int n_pairs, Rng& rng);

/// Mean cosine similarity of paired rows.
double clip_score(const std::vector<Feature>& motion, const std::vector<Feature>& text);

/// Fraction of motions whose own text ranks in the top `top_k` by cosine
/// among itself plus pool_size - 1 random distractors. top_k is clamped to
/// pool_size - 1, so a pool of two asks whether the truth beats its single
/// distractor.
double r_precision(const std::vector<Feature>& motion, const std::vector<Feature>& text, Rng& rng,
                   int pool_size = 32, int top_k = 3);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Feature extract(const MatF& frames) const = 0;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;
};

/// Per-channel mean, standard deviation and mean absolute velocity.
class StatsExtractor final : public FeatureExtractor {
 public:
  explicit StatsExtractor(int input_dim) : input_dim_(input_dim) {}
  Feature extract(const MatF& frames) const override;
  int dim() const override { return 3 * input_dim_; }
  std::string id() const override { return "stats-v1"; }

 private:
  int input_dim_;
};

struct ContrastiveConfig {
  int hidden = 128;
  int steps = 400;
  int batch_size = 32;
  double lr = 1e-3;
  double temperature = 0.1;
  std::uint64_t seed = 0;
};

/// Frame-wise MLP over standardized [x, dx], mean-pooled over time and
/// projected into the text space.
struct EncoderCache;

class ContrastiveEncoder final : public FeatureExtractor {
 public:
  ContrastiveEncoder(int input_dim, const ContrastiveConfig& config);

  Feature extract(const MatF& frames) const override;
  int dim() const override { return kTextDim; }
  std::string id() const override { return "contrastive-v1"; }

  /// Fits the standardization statistics to `clips`.
  void fit_standardization(const std::vector<MatF>& clips);
  /// One symmetric InfoNCE step against fixed unit text vectors; returns the
  /// loss before the update.
  double train_step(const std::vector<const MatF*>& clips, const MatF& text, AdamW& optimizer);
  TensorList<float> tensors();

 private:
  MatF embed(const MatF& frames, EncoderCache* cache) const;

  int input_dim_;
  ContrastiveConfig config_;
  MatF mean_, inv_std_;  // 1 x 2D
  nn::Linear<float> fc1_, fc2_, proj_;
};

/// Trains an encoder on captioned clips against the provider's eos
/// embeddings. `loss_curve` receives the per-step loss when non-null.
std::unique_ptr<ContrastiveEncoder> train_contrastive_encoder(const MotionDataset& paired,
                                                              const EmbeddingProvider& text,
                                                              const ContrastiveConfig& config,
                                                              std::vector<double>* loss_curve = nullptr);

/// Unit-normalized eos row as a feature.
Feature text_feature(const TextConditioning& cond);

}  // namespace omg
