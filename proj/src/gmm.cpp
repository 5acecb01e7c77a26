#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "bodyfit/energy.hpp"
#include "bodyfit/rng.hpp"

namespace bodyfit {

namespace {
constexpr double kCovRegularization = 1e-6;
}

void GmmPrior::finalize() {
  const int R = components();
  if (R <= 0) throw ValidationError("gmm: no components");
  if (dim <= 0) throw ValidationError("gmm: dimension must be positive");
  if (static_cast<int>(means.size()) != R || static_cast<int>(chol_lower.size()) != R)
    throw ValidationError("gmm: component counts disagree");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ValidationError("gmm: weights must be positive");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw ValidationError("gmm: weights must sum to 1");
  log_norm.resize(R);
  for (int r = 0; r < R; ++r) {
    if (static_cast<int>(means[r].size()) != dim ||
        static_cast<int>(chol_lower[r].size()) != dim * dim)
      throw ValidationError("gmm: component " + std::to_string(r) + " has wrong dimensions");
    double log_det = 0.0;  // of Sigma = L L^T
    for (int i = 0; i < dim; ++i) {
      const double lii = chol_lower[r][i * dim + i];
      if (!(lii > 0.0))
        throw ValidationError("gmm: component " + std::to_string(r) +
                              " has a singular covariance factor");
      log_det += 2.0 * std::log(lii);
    }
    log_norm[r] = -0.5 * log_det - 0.5 * dim * std::log(2.0 * M_PI);
  }
}

GmmPrior fit_gmm(const std::vector<std::vector<double>>& samples, int R, int max_iters,
                 uint64_t seed, std::vector<double>* trace) {
  if (samples.empty()) throw ValidationError("fit_gmm: no samples");
  const int dim = static_cast<int>(samples[0].size());
  const int n = static_cast<int>(samples.size());
  if (R < 1) throw ValidationError("fit_gmm: need at least one component");
  if (n < R * dim)
    throw ValidationError("fit_gmm: insufficient samples (" + std::to_string(n) + " < " +
                          std::to_string(R * dim) + ")");

  Eigen::MatrixXd data(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) data(i, j) = samples[i][j];

  // Means start at distinct samples; covariances at the global scatter.
  Rng rng(seed);
  std::vector<int> pick;
  while (static_cast<int>(pick.size()) < R) {
    const int cand = rng.uniform_int(0, n - 1);
    if (std::find(pick.begin(), pick.end(), cand) == pick.end()) pick.push_back(cand);
  }
  const Eigen::RowVectorXd global_mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - global_mean;
  Eigen::MatrixXd global_cov = centered.transpose() * centered / n;
  global_cov += kCovRegularization * Eigen::MatrixXd::Identity(dim, dim);

  std::vector<Eigen::VectorXd> means(R);
  std::vector<Eigen::MatrixXd> covs(R, global_cov);
  Eigen::VectorXd weights = Eigen::VectorXd::Constant(R, 1.0 / R);
  for (int r = 0; r < R; ++r) means[r] = data.row(pick[r]).transpose();

  Eigen::MatrixXd log_resp(n, R);
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llts(R);
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iters; ++iter) {
    // E step.
    for (int r = 0; r < R; ++r) {
      llts[r].compute(covs[r]);
      if (llts[r].info() != Eigen::Success)
        throw NumericError("fit_gmm: covariance factorization failed");
      const auto& L = llts[r].matrixL();
      double log_det = 0.0;
      for (int i = 0; i < dim; ++i) log_det += 2.0 * std::log(L(i, i));
      const double log_norm = -0.5 * log_det - 0.5 * dim * std::log(2.0 * M_PI);
      for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd diff = data.row(i).transpose() - means[r];
        const Eigen::VectorXd z = llts[r].matrixL().solve(diff);
        log_resp(i, r) = std::log(weights(r)) + log_norm - 0.5 * z.squaredNorm();
      }
    }
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      const double m = log_resp.row(i).maxCoeff();
      const double lse = m + std::log((log_resp.row(i).array() - m).exp().sum());
      ll += lse;
      log_resp.row(i) = (log_resp.row(i).array() - lse).exp();  // now responsibilities
    }
    if (trace) trace->push_back(ll);

    // M step.
    for (int r = 0; r < R; ++r) {
      const double nr = log_resp.col(r).sum();
      weights(r) = nr / n;
      means[r] = (data.transpose() * log_resp.col(r)) / nr;
      const Eigen::MatrixXd diff = data.rowwise() - means[r].transpose();
      covs[r] = diff.transpose() * (diff.array().colwise() * log_resp.col(r).array()).matrix() / nr;
      covs[r] += kCovRegularization * Eigen::MatrixXd::Identity(dim, dim);
    }
    if (iter > 0 && ll - prev_ll < 1e-9 * (std::abs(ll) + 1.0)) {
      prev_ll = ll;
      break;
    }
    prev_ll = ll;
  }

  GmmPrior prior;
  prior.dim = dim;
  prior.weights.resize(R);
  prior.means.resize(R);
  prior.chol_lower.resize(R);
  // Renormalize exactly; EM keeps the sum at 1 only up to rounding.
  const double wsum = weights.sum();
  for (int r = 0; r < R; ++r) {
    prior.weights[r] = weights(r) / wsum;
    prior.means[r].assign(means[r].data(), means[r].data() + dim);
    Eigen::LLT<Eigen::MatrixXd> llt(covs[r]);
    if (llt.info() != Eigen::Success)
      throw NumericError("fit_gmm: final covariance factorization failed");
    const Eigen::MatrixXd L = llt.matrixL();
    prior.chol_lower[r].resize(dim * dim, 0.0);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j <= i; ++j) prior.chol_lower[r][i * dim + j] = L(i, j);
  }
  prior.finalize();
  return prior;
}

}  // namespace bodyfit
