#include "promos/prototypes.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "promos/error.hpp"
#include "promos/rng.hpp"

namespace promos {

const char* branch_name(Branch b) { return b == Branch::Shared ? "global" : "local"; }

void PrototypeCodebook::validate() const {
  if (prototypes.value.shape().size() != 2 || size() < 2) {
    throw ValidationError("prototypes: codebook needs at least 2 rows");
  }
  if (!prototypes.value.all_finite()) throw ValidationError("prototypes: codebook has non-finite entries");
  if (!(temperature > 0.0)) throw ValidationError("prototypes: temperature must be positive");
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

std::size_t nearest_row(std::span<const double> z, const Tensor& centers, double* best_out = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < centers.rows(); ++m) {
    const double d = sq_dist(z, centers.row_span(m));
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  if (best_out) *best_out = best_d;
  return best;
}

Tensor softmax_neg_dist(const Tensor& d2, double temperature) {
  Tensor out = Tensor::matrix(d2.rows(), d2.cols());
  for (std::size_t i = 0; i < d2.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < d2.cols(); ++m) mx = std::max(mx, -d2(i, m) / temperature);
    double z = 0.0;
    for (std::size_t m = 0; m < d2.cols(); ++m) {
      out(i, m) = std::exp(-d2(i, m) / temperature - mx);
      z += out(i, m);
    }
    for (std::size_t m = 0; m < d2.cols(); ++m) out(i, m) /= z;
  }
  return out;
}

double kl(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t m = 0; m < p.size(); ++m) {
    const double pm = std::max(p[m], ad::kLogFloor);
    const double qm = std::max(q[m], ad::kLogFloor);
    s += p[m] * (std::log(pm) - std::log(qm));
  }
  return s;
}

}  // namespace

KMeansResult kmeans(const Tensor& points, std::size_t clusters, std::uint64_t seed) {
  const std::size_t n = points.rows(), d = points.cols();
  if (clusters == 0) throw ValidationError("kmeans: cluster count must be positive");
  if (clusters > n) {
    throw ValidationError("kmeans: " + std::to_string(clusters) + " clusters requested but only " +
                          std::to_string(n) + " points");
  }
  Rng rng(seed);
  KMeansResult res;
  res.centroids = Tensor::matrix(clusters, d);
  std::vector<bool> used(n, false);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  auto place = [&](std::size_t c, std::size_t i) {
    used[i] = true;
    auto src = points.row_span(i);
    std::copy(src.begin(), src.end(), res.centroids.row_span(c).begin());
    for (std::size_t k = 0; k < n; ++k) dist[k] = std::min(dist[k], sq_dist(points.row_span(k), src));
  };

  place(0, static_cast<std::size_t>(rng.below(n)));
  for (std::size_t c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (double v : dist) total += v;
    std::size_t pick = n;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        acc += dist[k];
        if (dist[k] > 0.0 && r < acc) {
          pick = k;
          break;
        }
      }
      if (pick == n)
        for (std::size_t k = n; k-- > 0;)
          if (dist[k] > 0.0) {
            pick = k;
            break;
          }
    } else {
      // Every remaining point coincides with a centroid; take an unused one.
      std::vector<std::size_t> free;
      for (std::size_t k = 0; k < n; ++k)
        if (!used[k]) free.push_back(k);
      pick = free[static_cast<std::size_t>(rng.below(free.size()))];
    }
    place(c, pick);
  }

  std::vector<std::size_t> assign(n, 0);
  std::vector<double> point_d(n, 0.0);
  for (std::size_t iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < n; ++i) assign[i] = nearest_row(points.row_span(i), res.centroids, &point_d[i]);
    Tensor next = Tensor::matrix(clusters, d);
    std::vector<std::size_t> count(clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[assign[i]];
      auto src = points.row_span(i);
      auto dst = next.row_span(assign[i]);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < clusters; ++c) {
      if (count[c] > 0) {
        for (double& v : next.row_span(c)) v /= static_cast<double>(count[c]);
        continue;
      }
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i] && point_d[i] > far_d) {
          far_d = point_d[i];
          far = i;
        }
      taken[far] = true;
      point_d[far] = 0.0;
      auto src = points.row_span(far);
      std::copy(src.begin(), src.end(), next.row_span(c).begin());
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < clusters; ++c)
      shift = std::max(shift, std::sqrt(sq_dist(next.row_span(c), res.centroids.row_span(c))));
    res.centroids = std::move(next);
    res.iterations = iter + 1;
    if (shift < 1e-6) break;
  }
  res.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    nearest_row(points.row_span(i), res.centroids, &best);
    res.inertia += best;
  }
  return res;
}

Tensor kmeans_init(const Tensor& points, std::size_t clusters, std::uint64_t seed) {
  return kmeans(points, clusters, seed).centroids;
}

ad::Var proto_distribution(ad::Var z, ad::Var prototypes, double temperature) {
  if (z.cols() != prototypes.cols()) {
    throw ValidationError("proto_distribution: embedding dim " + std::to_string(z.cols()) +
                          " does not match prototype dim " + std::to_string(prototypes.cols()));
  }
  return ad::row_softmax(ad::scale(ad::pairwise_sq_dist(z, prototypes), -1.0 / temperature));
}

Tensor proto_distribution(const Tensor& z, const Tensor& prototypes, double temperature) {
  if (z.cols() != prototypes.cols()) throw ValidationError("proto_distribution: dimension mismatch");
  Tensor d2 = Tensor::matrix(z.rows(), prototypes.rows());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t m = 0; m < prototypes.rows(); ++m) d2(i, m) = sq_dist(z.row_span(i), prototypes.row_span(m));
  return softmax_neg_dist(d2, temperature);
}

ad::Var kl_rows(ad::Var p, ad::Var q) {
  return ad::row_sum(ad::mul(p, ad::sub(ad::log(p), ad::log(q))));
}

ad::Var psd_loss(std::span<const ad::Var> teacher_probs, std::span<const ad::Var> student_probs) {
  if (teacher_probs.size() != student_probs.size() || teacher_probs.empty()) {
    throw ValidationError("psd_loss: need one teacher and one student distribution per branch");
  }
  ad::Var total;
  const std::size_t n = teacher_probs.front().rows();
  for (std::size_t b = 0; b < teacher_probs.size(); ++b) {
    if (!teacher_probs[b].value().same_shape(student_probs[b].value()) || teacher_probs[b].rows() != n) {
      throw ValidationError("psd_loss: shape mismatch in branch " + std::to_string(b));
    }
    ad::Var term = ad::sum(kl_rows(ad::stop_gradient(teacher_probs[b]), student_probs[b]));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(n));
}

Quantization quantize(const Tensor& z, const Tensor& prototypes) {
  if (z.cols() != prototypes.cols()) throw ValidationError("quantize: dimension mismatch");
  Quantization q;
  q.indices.resize(z.rows());
  q.quantized = Tensor::matrix(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    q.indices[i] = nearest_row(z.row_span(i), prototypes);
    auto src = prototypes.row_span(q.indices[i]);
    std::copy(src.begin(), src.end(), q.quantized.row_span(i).begin());
  }
  return q;
}

Tensor relation_matrix(const Tensor& prototypes, double temperature) {
  return proto_distribution(prototypes, prototypes, temperature);
}

ReliabilityWeights reliability_weights(const Tensor& teacher_probs, const Tensor& relation,
                                       std::span<const std::size_t> nearest, double beta, double mu,
                                       double epsilon) {
  const std::size_t n = teacher_probs.rows();
  if (nearest.size() != n) throw ValidationError("reliability_weights: index count mismatch");
  if (relation.cols() != teacher_probs.cols()) throw ValidationError("reliability_weights: relation width mismatch");
  if (beta < 0.0) throw ValidationError("reliability_weights: beta must be non-negative");
  ReliabilityWeights w;
  w.beta = beta;
  w.mu = mu;
  w.epsilon = epsilon;
  w.raw.resize(n);
  w.divergence.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w.divergence[i] = kl(teacher_probs.row_span(i), relation.row_span(nearest[i]));
    w.raw[i] = 1.0 / (1.0 + std::exp(beta * (w.divergence[i] - mu)));
    total += w.raw[i];
  }
  w.normalized.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.normalized[i] = w.raw[i] / (total + epsilon);
  return w;
}

ad::Var dcr_loss(ad::Var z, std::span<const DcrBranch> branches) {
  if (branches.empty()) throw ValidationError("dcr_loss: no branches");
  const std::size_t n = z.rows();
  ad::Tape& tape = *z.tape();
  ad::Var zs = ad::stop_gradient(z);
  ad::Var total;
  for (const auto& br : branches) {
    if (br.nearest.size() != n || br.weights.size() != n) throw ValidationError("dcr_loss: per-node size mismatch");
    ad::Var pq = ad::gather_rows(br.prototypes, br.nearest);
    ad::Var commit = ad::sub(z, ad::stop_gradient(pq));
    ad::Var refine = ad::sub(zs, pq);
    ad::Var per_node = ad::add(ad::row_sum(ad::mul(commit, commit)), ad::row_sum(ad::mul(refine, refine)));
    Tensor w = Tensor::matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) w[i] = br.weights[i];
    ad::Var term = ad::sum(ad::mul_col(per_node, tape.constant(std::move(w))));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

ad::Var div_loss(ad::Var h_top1, ad::Var h_top2, ad::Var prototypes, double temperature) {
  if (!h_top1.value().same_shape(h_top2.value())) throw ValidationError("div_loss: shape mismatch");
  ad::Var a = proto_distribution(h_top1, prototypes, temperature);
  ad::Var b = proto_distribution(h_top2, prototypes, temperature);
  ad::Var sym = ad::add(ad::sum(kl_rows(a, b)), ad::sum(kl_rows(b, a)));
  return ad::scale(sym, -0.5 / static_cast<double>(h_top1.rows()));
}

}  // namespace promos
