#include "omg/metrics.hpp"

#include "omg/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace omg {

FeatureStats feature_stats(const std::vector<Feature>& features) {
  require(features.size() >= 2, ErrorCode::kTooFewSamples, "feature statistics need at least two samples");
  const Eigen::Index d = features.front().size();
  FeatureStats s;
  s.count = static_cast<std::int64_t>(features.size());
  s.mean = Eigen::VectorXd::Zero(d);
  for (const auto& f : features) {
    require(f.size() == d, ErrorCode::kDimensionMismatch, "features differ in dimension");
    s.mean += f;
  }
  s.mean /= static_cast<double>(s.count);
  s.cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& f : features) {
    const Eigen::VectorXd c = f - s.mean;
    s.cov.noalias() += c * c.transpose();
  }
  s.cov /= static_cast<double>(s.count - 1);
  return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double psd_sqrt_trace(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

double cosine(const Feature& a, const Feature& b) {
  const double na = a.norm(), nb = b.norm();
  require(na > 0.0 && nb > 0.0, ErrorCode::kZeroVector, "cosine similarity of a zero vector");
  return a.dot(b) / (na * nb);
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  require(a.mean.size() == b.mean.size() && a.cov.rows() == b.cov.rows(), ErrorCode::kDimensionMismatch,
          "feature statistics differ in dimension");
  require(a.count >= 2 && b.count >= 2, ErrorCode::kTooFewSamples, "feature statistics need at least two samples");
  const Eigen::MatrixXd root_a = psd_sqrt(a.cov);
  const double cross = psd_sqrt_trace(root_a * b.cov * root_a);
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(0.0, d);
}

double diversity(const std::vector<Feature>& features, int n_pairs, Rng& rng) {
  require(n_pairs >= 1, ErrorCode::kInvalidArgument, "n_pairs must be >= 1");
  require(features.size() >= 2 * static_cast<std::size_t>(n_pairs), ErrorCode::kTooFewSamples,
          "diversity needs at least 2 * n_pairs features");
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  double total = 0.0;
  for (int p = 0; p < n_pairs; ++p)
    total += (features[order[2 * static_cast<std::size_t>(p)]] - features[order[2 * static_cast<std::size_t>(p) + 1]]).norm();
  return total / n_pairs;
}

double clip_score(const std::vector<Feature>& motion, const std::vector<Feature>& text) {
  require(motion.size() == text.size() && !motion.empty(), ErrorCode::kTooFewSamples,
          "clip score needs equally many motion and text features");
  double total = 0.0;
  for (std::size_t i = 0; i < motion.size(); ++i) {
    require(motion[i].size() == text[i].size(), ErrorCode::kDimensionMismatch, "motion and text dims differ");
    total += cosine(motion[i], text[i]);
  }
  return total / static_cast<double>(motion.size());
}

double r_precision(const std::vector<Feature>& motion, const std::vector<Feature>& text, Rng& rng, int pool_size,
                   int top_k) {
  require(pool_size >= 2 && top_k >= 1, ErrorCode::kInvalidArgument, "pool_size must be >= 2 and top_k >= 1");
  require(motion.size() == text.size(), ErrorCode::kDimensionMismatch, "motion and text counts differ");
  require(motion.size() >= static_cast<std::size_t>(pool_size), ErrorCode::kTooFewSamples,
          "r-precision needs at least pool_size pairs");
  const int k = std::min(top_k, pool_size - 1);
  const auto n = static_cast<std::int64_t>(motion.size());
  std::int64_t hits = 0;
  std::vector<std::int64_t> others(static_cast<std::size_t>(n - 1));
  for (std::int64_t i = 0; i < n; ++i) {
    // Partial Fisher-Yates over every index except i.
    for (std::int64_t j = 0, w = 0; j < n; ++j)
      if (j != i) others[static_cast<std::size_t>(w++)] = j;
    const double truth = cosine(motion[static_cast<std::size_t>(i)], text[static_cast<std::size_t>(i)]);
    int better = 0;
    for (int d = 0; d < pool_size - 1; ++d) {
      const auto pick = static_cast<std::size_t>(rng.uniform_int(d, n - 2));
      std::swap(others[static_cast<std::size_t>(d)], others[pick]);
      const auto j = static_cast<std::size_t>(others[static_cast<std::size_t>(d)]);
      if (cosine(motion[static_cast<std::size_t>(i)], text[j]) > truth) ++better;
    }
    if (better < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

Feature text_feature(const TextConditioning& cond) {
  Feature f = cond.eos().cast<double>().transpose();
  const double norm = f.norm();
  require(norm > 0.0, ErrorCode::kZeroVector, "eos embedding is zero");
  return f / norm;
}

// ---- extractors -------------------------------------------------------------------

Feature StatsExtractor::extract(const MatF& frames) const {
  require(frames.cols() == input_dim_ && frames.rows() >= 1, ErrorCode::kDimensionMismatch,
          "stats extractor expects " + std::to_string(input_dim_) + " channels");
  const MatD x = frames.cast<double>();
  Feature out(3 * input_dim_);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean).cwiseAbs2().colwise().mean();
  Eigen::RowVectorXd vel = Eigen::RowVectorXd::Zero(input_dim_);
  if (x.rows() > 1)
    vel = (x.bottomRows(x.rows() - 1) - x.topRows(x.rows() - 1)).cwiseAbs().colwise().mean();
  out << mean.transpose(), var.cwiseSqrt().transpose(), vel.transpose();
  return out;
}

struct EncoderCache {
  MatF z, pre1, a1, pre2, a2, pooled, out;
};

namespace {

MatF frame_inputs(const MatF& frames) {
  const Eigen::Index l = frames.rows(), d = frames.cols();
  MatF z = MatF::Zero(l, 2 * d);
  z.leftCols(d) = frames;
  if (l > 1) z.block(0, d, l - 1, d) = frames.bottomRows(l - 1) - frames.topRows(l - 1);
  return z;
}

void init_scaled(nn::Linear<float>& layer, Rng& rng) {
  const double std = 1.0 / std::sqrt(static_cast<double>(layer.weight.rows()));
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = static_cast<float>(rng.normal() * std);
}

}  // namespace

ContrastiveEncoder::ContrastiveEncoder(int input_dim, const ContrastiveConfig& config)
    : input_dim_(input_dim),
      config_(config),
      mean_(MatF::Zero(1, 2 * input_dim)),
      inv_std_(MatF::Ones(1, 2 * input_dim)),
      fc1_(2 * input_dim, config.hidden),
      fc2_(config.hidden, config.hidden),
      proj_(config.hidden, kTextDim) {
  require(input_dim >= 1 && config.hidden >= 1, ErrorCode::kConfig, "encoder dimensions must be positive");
  require(config.temperature > 0.0, ErrorCode::kConfig, "temperature must be > 0");
  Rng rng(config.seed);
  init_scaled(fc1_, rng);
  init_scaled(fc2_, rng);
  init_scaled(proj_, rng);
}

TensorList<float> ContrastiveEncoder::tensors() {
  TensorList<float> out;
  fc1_.collect("fc1", out);
  fc2_.collect("fc2", out);
  proj_.collect("proj", out);
  return out;
}

void ContrastiveEncoder::fit_standardization(const std::vector<MatF>& clips) {
  require(!clips.empty(), ErrorCode::kEmptyDataset, "no clips to standardize against");
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(2 * input_dim_), sq = sum;
  double n = 0.0;
  for (const auto& c : clips) {
    const MatD z = frame_inputs(c).cast<double>();
    sum += z.colwise().sum();
    sq += z.cwiseAbs2().colwise().sum();
    n += static_cast<double>(z.rows());
  }
  const Eigen::RowVectorXd mean = sum / n;
  const Eigen::RowVectorXd var = (sq / n - mean.cwiseAbs2()).cwiseMax(0.0);
  mean_ = mean.cast<float>();
  inv_std_ = var.unaryExpr([](double v) { return 1.0 / std::sqrt(std::max(v, 1e-12)); }).cast<float>();
}

MatF ContrastiveEncoder::embed(const MatF& frames, EncoderCache* cache) const {
  require(frames.cols() == input_dim_ && frames.rows() >= 1, ErrorCode::kDimensionMismatch,
          "encoder expects " + std::to_string(input_dim_) + " channels");
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.z = frame_inputs(frames);
  c.z = (c.z.rowwise() - mean_.row(0)).array().rowwise() * inv_std_.row(0).array();
  c.pre1 = fc1_.forward(c.z);
  c.a1 = nn::gelu(c.pre1);
  c.pre2 = fc2_.forward(c.a1);
  c.a2 = nn::gelu(c.pre2);
  c.pooled = c.a2.colwise().mean();
  c.out = proj_.forward(c.pooled);
  return c.out;
}

Feature ContrastiveEncoder::extract(const MatF& frames) const {
  return embed(frames, nullptr).cast<double>().transpose();
}

double ContrastiveEncoder::train_step(const std::vector<const MatF*>& clips, const MatF& text, AdamW& optimizer) {
  const auto b = static_cast<Eigen::Index>(clips.size());
  require(b >= 2 && text.rows() == b && text.cols() == kTextDim, ErrorCode::kShapeMismatch,
          "contrastive step needs one unit text row per clip");
  std::vector<EncoderCache> caches(clips.size());
  MatD u(b, kTextDim);
  std::vector<double> norms(clips.size());
  for (Eigen::Index i = 0; i < b; ++i) {
    const Eigen::RowVectorXd raw = embed(*clips[static_cast<std::size_t>(i)], &caches[static_cast<std::size_t>(i)])
                                       .cast<double>();
    norms[static_cast<std::size_t>(i)] = std::max(raw.norm(), 1e-12);
    u.row(i) = raw / norms[static_cast<std::size_t>(i)];
  }
  const MatD t = text.cast<double>();
  const double inv_tau = 1.0 / config_.temperature;
  const MatD logits = u * t.transpose() * inv_tau;
  const MatD p_rows = nn::softmax_rows<double>(logits);
  const MatD p_cols = nn::softmax_rows<double>(MatD(logits.transpose())).transpose();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) loss -= 0.5 * (std::log(p_rows(i, i)) + std::log(p_cols(i, i)));
  loss /= static_cast<double>(b);
  MatD dlogits = 0.5 * (p_rows + p_cols);
  dlogits.diagonal().array() -= 1.0;
  dlogits /= static_cast<double>(b);
  const MatD du = dlogits * t * inv_tau;

  nn::Linear<float> g1(fc1_.weight.rows(), fc1_.weight.cols()), g2(fc2_.weight.rows(), fc2_.weight.cols()),
      gp(proj_.weight.rows(), proj_.weight.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Eigen::RowVectorXd ui = u.row(i), dui = du.row(i);
    const MatF draw = ((dui - ui * ui.dot(dui)) / norms[k]).cast<float>();
    const EncoderCache& c = caches[k];
    const MatF dpooled = proj_.backward(c.pooled, draw, &gp);
    const MatF da2 = MatF::Ones(c.a2.rows(), 1) * dpooled / static_cast<float>(c.a2.rows());
    const MatF da1 = fc2_.backward(c.a1, nn::gelu_backward(c.pre2, da2), &g2);
    fc1_.backward(c.z, nn::gelu_backward(c.pre1, da1), &g1);
  }
  TensorList<float> grads;
  g1.collect("fc1", grads);
  g2.collect("fc2", grads);
  gp.collect("proj", grads);
  optimizer.step(tensors(), grads);
  return loss;
}

std::unique_ptr<ContrastiveEncoder> train_contrastive_encoder(const MotionDataset& paired,
                                                              const EmbeddingProvider& text,
                                                              const ContrastiveConfig& config,
                                                              std::vector<double>* loss_curve) {
  require(paired.paired(), ErrorCode::kData, "encoder training needs a captioned dataset");
  require(paired.size() >= 2, ErrorCode::kTooFewSamples, "encoder training needs at least two pairs");
  const int dim = static_cast<int>(paired.clips.front().frames.cols());
  auto encoder = std::make_unique<ContrastiveEncoder>(dim, config);
  std::vector<MatF> frames;
  for (const auto& c : paired.clips) frames.push_back(c.frames);
  encoder->fit_standardization(frames);
  MatF texts(static_cast<Eigen::Index>(paired.size()), kTextDim);
  for (std::size_t i = 0; i < paired.size(); ++i)
    texts.row(static_cast<Eigen::Index>(i)) = text_feature(text.embed(paired.prompts[i])).cast<float>().transpose();

  OptimizerConfig oc;
  oc.lr = config.lr;
  oc.total_steps = config.steps;
  oc.warmup_steps = std::min<std::int64_t>(20, config.steps / 10);
  AdamW optimizer(oc);
  Rng rng(config.seed ^ 0x5eedULL);
  std::vector<std::size_t> order(paired.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), paired.size());
  for (int step = 0; step < config.steps; ++step) {
    std::vector<const MatF*> clips;
    MatF t(static_cast<Eigen::Index>(batch), kTextDim);
    for (std::size_t k = 0; k < batch; ++k) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size() - 1; i > 0; --i)
          std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      clips.push_back(&frames[idx]);
      t.row(static_cast<Eigen::Index>(k)) = texts.row(static_cast<Eigen::Index>(idx));
    }
    const double loss = encoder->train_step(clips, t, optimizer);
    if (loss_curve) loss_curve->push_back(loss);
  }
  return encoder;
}

}  // namespace omg
