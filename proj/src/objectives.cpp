#include "platediff/objectives.hpp"

#include <cmath>

#include "platediff/errors.hpp"

namespace platediff {
namespace {

void check_pair(const Vec& pred, const Vec& target) {
  if (pred.size() == 0) throw EmptyBatch("l1 loss over empty batch");
  if (pred.size() != target.size())
    throw ShapeMismatch("l1 loss: " + std::to_string(pred.size()) + " predictions vs " +
                        std::to_string(target.size()) + " targets");
}

// Row-normalizes z; norms are returned for the backward pass.
Mat normalize_rows(const Mat& z, Vec& norms) {
  norms = z.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i)
    if (!(norms[i] > 0.0)) throw DegenerateInput("zero-norm embedding row in InfoNCE");
  return norms.cwiseInverse().asDiagonal() * z;
}

Mat row_softmax(const Mat& s) {
  Mat p(s.rows(), s.cols());
  for (Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    p.row(i) = (s.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace

double l1_loss(const Vec& pred, const Vec& target) {
  check_pair(pred, target);
  return (pred - target).cwiseAbs().mean();
}

Vec l1_loss_grad(const Vec& pred, const Vec& target) {
  check_pair(pred, target);
  const double inv_b = 1.0 / static_cast<double>(pred.size());
  Vec g(pred.size());
  for (Index i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    g[i] = d > 0.0 ? inv_b : (d < 0.0 ? -inv_b : 0.0);
  }
  return g;
}

InfoNceResult info_nce_with_grad(const Mat& za, const Mat& zb, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("temperature", "must be positive");
  if (za.rows() != zb.rows() || za.cols() != zb.cols())
    throw ShapeMismatch("InfoNCE batches must have identical shapes");
  if (za.rows() == 0) throw EmptyBatch("InfoNCE over empty batch");

  const Index b = za.rows();
  Vec na, nb;
  const Mat ua = normalize_rows(za, na);
  const Mat ub = normalize_rows(zb, nb);
  const Mat s = ua * ub.transpose() / temperature;

  const Mat pa = row_softmax(s);              // image-to-text direction
  const Mat pb = row_softmax(s.transpose());  // text-to-image direction

  double loss = 0.0;
  for (Index i = 0; i < b; ++i)
    loss += -std::log(pa(i, i)) - std::log(pb(i, i));
  loss /= 2.0 * static_cast<double>(b);

  Mat ds = pa + pb.transpose();
  ds.diagonal().array() -= 2.0;
  ds *= 1.0 / (2.0 * static_cast<double>(b) * temperature);

  InfoNceResult out;
  out.loss = loss;
  const Mat dua = ds * ub;
  const Mat dub = ds.transpose() * ua;
  out.dza.resize(b, za.cols());
  out.dzb.resize(b, za.cols());
  for (Index i = 0; i < b; ++i) {
    const double da = dua.row(i).dot(ua.row(i));
    const double db = dub.row(i).dot(ub.row(i));
    out.dza.row(i) = (dua.row(i) - da * ua.row(i)) / na[i];
    out.dzb.row(i) = (dub.row(i) - db * ub.row(i)) / nb[i];
  }
  return out;
}

double info_nce(const Mat& za, const Mat& zb, double temperature) {
  return info_nce_with_grad(za, zb, temperature).loss;
}

void validate(const LossWeights& w) {
  if (w.lambda_reg < 0.0) throw ValidationError("lambda_reg", "must be non-negative");
  if (w.lambda_cont < 0.0) throw ValidationError("lambda_cont", "must be non-negative");
  if (w.lambda_reg == 0.0 && w.lambda_cont == 0.0)
    throw ValidationError("lambda_reg", "at least one loss weight must be positive");
  if (!(w.temperature > 0.0)) throw ValidationError("temperature", "must be positive");
}

LossBreakdown total_loss(double reg, double contrastive, const LossWeights& w) {
  if (!std::isfinite(reg) || !std::isfinite(contrastive))
    throw DegenerateInput("non-finite loss component");
  LossBreakdown b;
  b.reg = reg;
  b.contrastive = contrastive;
  b.total = w.lambda_reg * reg + w.lambda_cont * contrastive;
  return b;
}

}  // namespace platediff
