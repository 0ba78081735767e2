#ifndef PLATEDIFF_OBJECTIVES_HPP
#define PLATEDIFF_OBJECTIVES_HPP

#include "platediff/types.hpp"

namespace platediff {

struct LossWeights {
  double lambda_reg = 1.0;
  double lambda_cont = 0.2;
  double temperature = 0.07;
};

// Lambdas must be non-negative and not both zero; temperature positive.
void validate(const LossWeights& w);

struct LossBreakdown {
  double reg = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

// Mean absolute error over the batch. The subgradient at the kink is 0.
double l1_loss(const Vec& pred, const Vec& target);
Vec l1_loss_grad(const Vec& pred, const Vec& target);

struct InfoNceResult {
  double loss = 0.0;
  Mat dza;  // d loss / d za, same shape as za
  Mat dzb;
};

// Symmetric InfoNCE over row-aligned embedding batches (za[i] pairs with
// zb[i]). Rows are unit-normalized internally; logits are cosine
// similarities divided by the temperature; both retrieval directions are
// averaged. Throws DegenerateInput on a zero-norm row and ShapeMismatch
// on incompatible batches.
double info_nce(const Mat& za, const Mat& zb, double temperature);
InfoNceResult info_nce_with_grad(const Mat& za, const Mat& zb, double temperature);

LossBreakdown total_loss(double reg, double contrastive, const LossWeights& w);

}  // namespace platediff

#endif  // PLATEDIFF_OBJECTIVES_HPP
