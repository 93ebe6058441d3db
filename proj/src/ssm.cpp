#include "mmunet/ssm.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "mmunet/error.hpp"

namespace mmunet::ssm {

void SsmParams::validate() const {
  const auto n = a.rows();
  if (n < 1 || a.cols() != n) throw ConfigError("ssm: A must be a non-empty square matrix");
  if (b.size() != n || c.size() != n)
    throw ShapeError("ssm: B and C must have " + std::to_string(n) + " entries");
  if (!(delta > 0)) throw ConfigError("ssm: step size delta must be positive");
}

Matrix hippo_legs(std::size_t n) {
  if (n < 1) throw ConfigError("hippo_legs: state dimension must be at least 1");
  Matrix a = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k)
      a(i, k) = -std::sqrt(Real(2 * i + 1)) * std::sqrt(Real(2 * k + 1));
    a(i, i) = -Real(i + 1);
  }
  return a;
}

namespace {
Real induced_one_norm(const Matrix& m) { return m.cwiseAbs().colwise().sum().maxCoeff(); }
}  // namespace

ExpPhi exp_and_phi1(const Matrix& m) {
  const auto n = m.rows();
  const Matrix id = Matrix::Identity(n, n);
  int squarings = 0;
  Real norm = induced_one_norm(m);
  if (!std::isfinite(norm)) throw NumericalError("matrix exponential: non-finite input");
  while (norm >= Real(0.5)) {
    norm /= 2;
    ++squarings;
  }
  const Matrix x = m / std::ldexp(Real(1), squarings);

  Matrix e = id, phi = id, term = id;
  for (int k = 1; k < 64; ++k) {
    term = term * x / Real(k);
    e += term;
    phi += term / Real(k + 1);
    if (induced_one_norm(term) < Real(1e-16)) break;
  }
  // phi1(2X) = (exp(X) + I) phi1(X) / 2
  for (int s = 0; s < squarings; ++s) {
    phi = Real(0.5) * (e + id) * phi;
    e = e * e;
  }
  if (!e.allFinite() || !phi.allFinite()) throw NumericalError("matrix exponential overflowed (delta*A too large)");
  return {std::move(e), std::move(phi)};
}

DiscreteSsm zoh_discretize(const SsmParams& p) {
  p.validate();
  const Matrix da = p.delta * p.a;
  auto [e, phi] = exp_and_phi1(da);
  DiscreteSsm d;
  d.a_bar = std::move(e);
  d.b_bar = p.delta * (phi * p.b);
  d.c = p.c;
  if (!d.b_bar.allFinite()) throw NumericalError("zoh_discretize: non-finite B_bar");
  return d;
}

std::vector<Real> recurrent_scan(const DiscreteSsm& d, std::span<const Real> x, std::span<const Real> h0) {
  if (x.empty()) throw ConfigError("recurrent_scan: empty sequence");
  const auto n = d.a_bar.rows();
  Vector h = Vector::Zero(n);
  if (!h0.empty()) {
    if (static_cast<Eigen::Index>(h0.size()) != n) throw ShapeError("recurrent_scan: h0 has wrong length");
    for (Eigen::Index i = 0; i < n; ++i) h(i) = h0[i];
  }
  std::vector<Real> y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    h = d.a_bar * h + d.b_bar * x[t];
    y[t] = d.c.dot(h);
  }
  return y;
}

SsmKernel kernel_materialize(const DiscreteSsm& d, std::size_t length) {
  if (length < 1) throw ConfigError("kernel_materialize: length must be at least 1");
  SsmKernel k;
  k.k.resize(length);
  Vector v = d.b_bar;
  for (std::size_t i = 0; i < length; ++i) {
    k.k[i] = d.c.dot(v);
    v = d.a_bar * v;
  }
  return k;
}

std::vector<Real> kernel_apply(const SsmKernel& k, std::span<const Real> x) {
  if (k.k.size() != x.size())
    throw ShapeError("kernel_apply: kernel length " + std::to_string(k.k.size()) + " vs sequence length " +
                     std::to_string(x.size()));
  std::vector<Real> y(x.size(), Real(0));
  for (std::size_t t = 0; t < x.size(); ++t) {
    Real s = 0;
    for (std::size_t i = 0; i <= t; ++i) s += k.k[i] * x[t - i];
    y[t] = s;
  }
  return y;
}

Matrix attention_matrix(const DiscreteSsm& d, std::size_t length) {
  const auto k = kernel_materialize(d, length);
  const auto l = static_cast<Eigen::Index>(length);
  Matrix m = Matrix::Zero(l, l);
  for (Eigen::Index t = 0; t < l; ++t)
    for (Eigen::Index s = 0; s <= t; ++s) m(t, s) = k.k[t - s];
  return m;
}

Real spectral_radius(const Matrix& m) {
  Eigen::EigenSolver<Matrix> solver(m, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

Tensor ssm_kernel(const Matrix& a_bar, const Matrix& input_map, const Tensor& b, const Tensor& c,
                  std::size_t length) {
  const auto n = a_bar.rows();
  if (static_cast<Eigen::Index>(b.numel()) != n || static_cast<Eigen::Index>(c.numel()) != n ||
      input_map.rows() != n || input_map.cols() != n)
    throw ShapeError("ssm_kernel: parameter sizes disagree with state dimension " + std::to_string(n));
  const Vector bv = Eigen::Map<const Vector>(b.data().data(), n);
  const Vector cv = Eigen::Map<const Vector>(c.data().data(), n);

  // States v_i = A_bar^i B_bar, kept for the C gradient.
  Matrix states(n, static_cast<Eigen::Index>(length));
  std::vector<Real> k(length);
  Vector v = input_map * bv;
  for (std::size_t i = 0; i < length; ++i) {
    states.col(static_cast<Eigen::Index>(i)) = v;
    k[i] = cv.dot(v);
    v = a_bar * v;
  }
  return make_result(Shape{length}, std::move(k), {b, c},
                     [a_bar, input_map, states = std::move(states), cv, length](detail::Node& node) {
                       const Eigen::Map<const Vector> gk(node.grad.data(), static_cast<Eigen::Index>(length));
                       if (node.inputs[1]->requires_grad) {
                         Eigen::Map<Vector> gc(node.inputs[1]->ensure_grad().data(), cv.size());
                         gc += states * gk;
                       }
                       if (node.inputs[0]->requires_grad) {
                         // Horner form of sum_i gK_i (A_bar^T)^i C^T.
                         Vector r = Vector::Zero(cv.size());
                         for (std::size_t i = length; i-- > 0;) r = a_bar.transpose() * r + gk(i) * cv;
                         Eigen::Map<Vector> gb(node.inputs[0]->ensure_grad().data(), cv.size());
                         gb += input_map.transpose() * r;
                       }
                     });
}

Tensor causal_conv(const Tensor& kernel, const Tensor& x) {
  if (kernel.numel() != x.numel())
    throw ShapeError("causal_conv: kernel " + shape_str(kernel.shape()) + " vs input " + shape_str(x.shape()));
  const std::size_t l = x.numel();
  auto kv = kernel.data();
  auto xv = x.data();
  std::vector<Real> y(l, Real(0));
  for (std::size_t t = 0; t < l; ++t) {
    Real s = 0;
    for (std::size_t i = 0; i <= t; ++i) s += kv[i] * xv[t - i];
    y[t] = s;
  }
  return make_result(x.shape(), std::move(y), {kernel, x}, [l](detail::Node& n) {
    const auto& kv = n.inputs[0]->value;
    const auto& xv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      auto& g = n.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < l; ++i) {
        Real s = 0;
        for (std::size_t t = i; t < l; ++t) s += n.grad[t] * xv[t - i];
        g[i] += s;
      }
    }
    if (n.inputs[1]->requires_grad) {
      auto& g = n.inputs[1]->ensure_grad();
      for (std::size_t j = 0; j < l; ++j) {
        Real s = 0;
        for (std::size_t t = j; t < l; ++t) s += n.grad[t] * kv[t - j];
        g[j] += s;
      }
    }
  });
}

}  // namespace mmunet::ssm
