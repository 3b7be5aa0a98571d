#include "omg/losses.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace omg;
using namespace omg::testing;

namespace {

MotionBatch<double> random_batch(const std::vector<int>& lens, int pad, int dim, Rng& rng) {
  MotionBatch<double> b;
  b.pad_len = pad;
  b.dim = dim;
  for (int len : lens) {
    MatD m = random_mat(pad, dim, rng);
    m.bottomRows(pad - len).setZero();
    b.items.push_back(m);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(pad), 0);
    std::fill(mask.begin(), mask.begin() + len, 1);
    b.mask.push_back(mask);
  }
  return b;
}

// Contacts in {0, 1} like real labels.
void binarize_contacts(MotionBatch<double>& b, const FeatureLayout& layout) {
  const int off = layout.slice("foot_contacts").offset;
  for (auto& m : b.items) m.middleCols(off, 4) = (m.middleCols(off, 4).array() > 0).cast<double>();
}

TensorList<double> batch_tensors(MotionBatch<double>& b) {
  TensorList<double> t;
  for (std::size_t i = 0; i < b.items.size(); ++i) t.push_back({"item" + std::to_string(i), &b.items[i], false});
  return t;
}

}  // namespace

TEST_CASE("losses vanish when the prediction is exact") {
  Rng rng(1);
  const auto& layout = desk_layout();
  auto x = random_batch({6, 3}, 6, layout.dim, rng);
  binarize_contacts(x, layout);
  const NoiseSchedule s = build_cosine_schedule(100);
  const LossReport r = total_loss(x, x, {5, 50}, s, LossWeights{}, layout);
  CHECK(r.simple == 0.0);
  CHECK(r.vel == 0.0);
  // Ground truth itself may slide feet marked in contact, so only the foot term remains.
  CHECK(r.total == doctest::Approx(LossWeights{}.lambda_foot * r.foot));
  CHECK(r.simple_count == 9 * layout.dim);
  CHECK(r.pair_count == 7);
}

TEST_CASE("padding never reaches the value or the gradient") {
  Rng rng(2);
  const auto& layout = desk_layout();
  auto x = random_batch({5, 2}, 5, layout.dim, rng);
  binarize_contacts(x, layout);
  auto y = random_batch({5, 2}, 5, layout.dim, rng);
  const NoiseSchedule s = build_cosine_schedule(100);
  auto grad = MotionBatch<double>::zeros_like(y);
  const LossReport a = total_loss(x, y, {3, 70}, s, LossWeights{}, layout, &grad);
  y.items[1].bottomRows(3).setConstant(1e6);
  x.items[1].bottomRows(3).setConstant(-1e6);
  const LossReport b = total_loss(x, y, {3, 70}, s, LossWeights{}, layout);
  CHECK(a.total == b.total);
  CHECK(grad.items[1].bottomRows(3).isZero());
}

TEST_CASE("loss gradients match finite differences") {
  const auto& layout = desk_layout();
  const NoiseSchedule s = build_cosine_schedule(100);
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(10 + trial);
    auto x = random_batch({7, 4, 1}, 7, layout.dim, rng);
    binarize_contacts(x, layout);
    auto y = random_batch({7, 4, 1}, 7, layout.dim, rng);
    const std::vector<int> t = {2, 40, 99};
    const std::vector<double> lambda = {1.0, 0.5, 2.0};

    auto g = MotionBatch<double>::zeros_like(y);
    loss_simple(x, y, lambda, &g);
    CHECK(check_gradients(batch_tensors(y), batch_tensors(g), [&] { return loss_simple(x, y, lambda); }, 10, rng)
              .rel_error < 1e-6);

    g = MotionBatch<double>::zeros_like(y);
    loss_velocity(x, y, &g);
    CHECK(check_gradients(batch_tensors(y), batch_tensors(g), [&] { return loss_velocity(x, y); }, 10, rng)
              .rel_error < 1e-6);

    g = MotionBatch<double>::zeros_like(y);
    loss_foot_contact(x, y, layout, &g);
    CHECK(check_gradients(batch_tensors(y), batch_tensors(g), [&] { return loss_foot_contact(x, y, layout); }, 10,
                          rng)
              .rel_error < 1e-6);

    LossWeights w;
    w.lambda_t_rule = "min-snr";
    g = MotionBatch<double>::zeros_like(y);
    total_loss(x, y, t, s, w, layout, &g);
    CHECK(check_gradients(batch_tensors(y), batch_tensors(g), [&] { return total_loss(x, y, t, s, w, layout).total; },
                          10, rng)
              .rel_error < 1e-6);
  }
}

TEST_CASE("foot loss only penalizes feet in contact") {
  const auto& layout = desk_layout();
  Rng rng(3);
  auto x = random_batch({4}, 4, layout.dim, rng);
  const int off = layout.slice("foot_contacts").offset;
  x.items[0].middleCols(off, 4).setZero();
  auto y = random_batch({4}, 4, layout.dim, rng);
  CHECK(loss_foot_contact(x, y, layout) == 0.0);
}
