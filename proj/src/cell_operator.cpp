#include <algorithm>
#include <cmath>
#include <map>

#include "cell_internal.hpp"
#include "twoscale/cell_spectral.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/fft.hpp"

namespace twoscale {

const char* scheme_name(Scheme s) {
  return s == Scheme::pseudo_spectral ? "pseudo_spectral" : "finite_difference_2";
}

Scheme parse_scheme(const std::string& s) {
  if (s == "pseudo_spectral" || s == "spectral") return Scheme::pseudo_spectral;
  if (s == "finite_difference_2" || s == "fd2") return Scheme::finite_difference_2;
  throw InvalidArgument("unknown scheme '" + s + "'");
}

void CellDiscretization::check() const {
  if (dimension != 1 && dimension != 2) throw InvalidArgument("cell dimension must be 1 or 2");
  if (points < 16) throw DiscretizationTooCoarse("M = " + std::to_string(points) + " < 16");
  if ((points & (points - 1)) != 0) throw InvalidArgument("M must be a power of two");
  if (points > 512) throw InvalidArgument("M must not exceed 512");
  if (size() > (1 << 18)) throw InvalidArgument("M^N must not exceed 2^18");
}

SmallVec wrap_theta(const SmallVec& theta) {
  SmallVec t = theta;
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    t(k) -= std::floor(t(k) + 0.5);
    if (t(k) >= 0.5) t(k) -= 1.0;
  }
  return t;
}

namespace {

enum class DiffKind { spectral, forward, backward };

struct DiffOp {
  DiffKind kind;
  int axis;
};

struct TermShape {
  DiffOp left;
  DiffOp right;
  int a, b;       // coefficient entry A_ab
  bool average;   // average nodes j and j + e_a (flux midpoint)
  double factor;
};

struct VariantData {
  std::vector<RVec> A;       // row-major N x N entries at nodes
  RVec c;
  std::vector<RVec> weights; // per term
};

struct Key {
  DiffKind kind;
  int axis;
  int order;
  bool operator<(const Key& o) const {
    return std::tie(kind, axis, order) < std::tie(o.kind, o.axis, o.order);
  }
};

}  // namespace

struct CellOperator::Impl {
  int dim = 1;
  int M = 16;
  int size = 16;
  const FftGrid* grid = nullptr;
  std::vector<TermShape> terms;
  std::vector<std::vector<int>> plus, minus;  // neighbour indices per axis
  std::vector<RVec> spectral_symbol;          // kappa_a + theta_a per Fourier index
  std::vector<cplx> phase;                    // e^{2 i pi theta_a h}

  mutable std::mutex variant_mutex;
  mutable std::map<int, std::shared_ptr<const VariantData>> variants;
  mutable std::mutex spectrum_mutex;
  mutable std::shared_ptr<const Spectrum> spectrum;

  int variant_index(const FormVariant& v) const {
    if (v.order == 0) return 0;
    if (v.order == 1) return 1 + v.h;
    return 1 + dim + v.l * dim + v.h;
  }

  CVec shift(const CVec& u, int axis, bool up) const {
    const auto& idx = up ? plus[axis] : minus[axis];
    CVec out(size);
    for (int j = 0; j < size; ++j) out(j) = u(idx[j]);
    return out;
  }

  // Applies the order-d theta-derivative of D (or its adjoint) to u.
  CVec diff(const DiffOp& op, int d, bool adjoint, const CVec& u) const {
    const double h = 1.0 / M;
    const int a = op.axis;
    if (op.kind == DiffKind::spectral) {
      if (d == 1) return (adjoint ? -kTwoPiI : kTwoPiI) * u;
      if (d == 2) return CVec::Zero(size);
      CVec f = grid->forward(u);
      const RVec& s = spectral_symbol[a];
      for (int j = 0; j < size; ++j) f(j) *= (adjoint ? -kTwoPiI : kTwoPiI) * s(j);
      CVec out = grid->backward(f);
      out /= double(size);
      return out;
    }
    // forward: e^{i phi} S_+ ; backward: e^{-i phi} S_- ; adjoints conjugate and invert.
    bool up = (op.kind == DiffKind::forward) != adjoint;
    cplx ph = (op.kind == DiffKind::forward) != adjoint ? phase[a] : std::conj(phase[a]);
    CVec base = ph * shift(u, a, up);
    if (d == 0) {
      if (op.kind == DiffKind::forward) return (base - u) / h;
      return (u - base) / h;
    }
    cplx coef;
    if (op.kind == DiffKind::forward) {
      coef = d == 1 ? kTwoPiI : kTwoPiI * kTwoPiI * h;
    } else {
      coef = d == 1 ? kTwoPiI : cplx(4 * kPi * kPi * h, 0.0);
    }
    if (adjoint) coef = std::conj(coef);
    return coef * base;
  }

  static int derivative_order(const DiffOp& op, const std::vector<int>& idx) {
    for (int k : idx)
      if (k != op.axis) return -1;
    int d = int(idx.size());
    if (op.kind == DiffKind::spectral && d == 2) return -1;
    return d;
  }
};

namespace {

VariantData sample_variant(const CoefficientField& field, const SmallVec& x, int dim, int M, int variant,
                           const std::vector<TermShape>& terms, const std::vector<std::vector<int>>& plus) {
  const int size = dim == 1 ? M : M * M;
  VariantData v;
  v.A.assign(dim * dim, RVec(size));
  v.c.resize(size);
  int order = 0, l = 0, h = 0;
  if (variant >= 1 && variant <= dim) {
    order = 1;
    h = variant - 1;
  } else if (variant > dim) {
    order = 2;
    l = (variant - 1 - dim) / dim;
    h = (variant - 1 - dim) % dim;
  }
  SmallVec y(dim);
  for (int j = 0; j < size; ++j) {
    if (dim == 1) {
      y(0) = double(j) / M;
    } else {
      y(0) = double(j / M) / M;
      y(1) = double(j % M) / M;
    }
    SmallMat a;
    double c;
    if (order == 0) {
      a = field.A(x, y);
      c = field.c(x, y);
    } else if (order == 1) {
      a = field.A_dx(h, x, y);
      c = field.c_dx(h, x, y);
    } else {
      a = field.A_dxx(l, h, x, y);
      c = field.c_dxx(l, h, x, y);
    }
    for (int p = 0; p < dim; ++p)
      for (int q = 0; q < dim; ++q) v.A[p * dim + q](j) = a(p, q);
    v.c(j) = c;
  }
  for (const auto& t : terms) {
    const RVec& src = v.A[t.a * dim + t.b];
    RVec w(size);
    if (t.average) {
      for (int j = 0; j < size; ++j) w(j) = 0.5 * (src(j) + src(plus[t.a][j]));
    } else {
      w = src;
    }
    v.weights.push_back(t.factor * w);
  }
  return v;
}

}  // namespace

CellOperator::CellOperator(const CoefficientField& field, const BlochPoint& point, const CellDiscretization& disc)
    : field_(field), point_(point), disc_(disc), impl_(std::make_unique<Impl>()) {
  disc_.check();
  if (field.dimension() != disc.dimension || point.x.size() != disc.dimension ||
      point.theta.size() != disc.dimension)
    throw InvalidArgument("dimension mismatch between field, Bloch point and discretization");
  Impl& m = *impl_;
  m.dim = disc.dimension;
  m.M = disc.points;
  m.size = disc.size();
  m.grid = &fft_grid(m.dim, m.M);

  m.plus.assign(m.dim, std::vector<int>(m.size));
  m.minus.assign(m.dim, std::vector<int>(m.size));
  for (int j = 0; j < m.size; ++j) {
    auto mi = m.grid->multi_index(j);
    for (int a = 0; a < m.dim; ++a) {
      auto up = mi, dn = mi;
      up[a] = (mi[a] + 1) % m.M;
      dn[a] = (mi[a] + m.M - 1) % m.M;
      auto flat = [&](const std::array<int, 2>& q) { return m.dim == 1 ? q[0] : q[0] * m.M + q[1]; };
      m.plus[a][j] = flat(up);
      m.minus[a][j] = flat(dn);
    }
  }
  m.spectral_symbol.assign(m.dim, RVec(m.size));
  m.phase.resize(m.dim);
  for (int a = 0; a < m.dim; ++a) {
    for (int j = 0; j < m.size; ++j) m.spectral_symbol[a](j) = m.grid->wavenumber(m.grid->multi_index(j)[a]) + point_.theta(a);
    m.phase[a] = std::exp(cplx(0.0, 2 * kPi * point_.theta(a) / m.M));
  }

  if (disc.scheme == Scheme::pseudo_spectral) {
    for (int a = 0; a < m.dim; ++a)
      for (int b = 0; b < m.dim; ++b)
        m.terms.push_back({{DiffKind::spectral, a}, {DiffKind::spectral, b}, a, b, false, 1.0});
  } else {
    for (int a = 0; a < m.dim; ++a)
      for (int b = 0; b < m.dim; ++b) {
        if (a == b) {
          m.terms.push_back({{DiffKind::forward, a}, {DiffKind::forward, a}, a, a, true, 1.0});
        } else {
          m.terms.push_back({{DiffKind::forward, a}, {DiffKind::forward, b}, a, b, false, 0.5});
          m.terms.push_back({{DiffKind::backward, a}, {DiffKind::backward, b}, a, b, false, 0.5});
        }
      }
  }
  auto base = std::make_shared<VariantData>(sample_variant(field_, point_.x, m.dim, m.M, 0, m.terms, m.plus));
  m.variants[0] = std::move(base);
}

CellOperator::~CellOperator() = default;
CellOperator::CellOperator(CellOperator&&) noexcept = default;
CellOperator& CellOperator::operator=(CellOperator&&) noexcept = default;

namespace {

std::shared_ptr<const VariantData> variant_data(const CellOperator::Impl& m, const CoefficientField& field,
                                                const SmallVec& x, const FormVariant& v) {
  int idx = m.variant_index(v);
  std::lock_guard lock(m.variant_mutex);
  auto it = m.variants.find(idx);
  if (it != m.variants.end()) return it->second;
  auto data = std::make_shared<VariantData>(sample_variant(field, x, m.dim, m.M, idx, m.terms, m.plus));
  m.variants[idx] = data;
  return data;
}

}  // namespace

CVec CellOperator::apply_form(const FormVariant& v, const CVec& u, int k, int l) const {
  const Impl& m = *impl_;
  if (u.size() != m.size) throw InvalidArgument("grid vector has wrong size");
  auto data = variant_data(m, field_, point_.x, v);
  std::vector<int> S;
  if (k >= 0) S.push_back(k);
  if (l >= 0) S.push_back(l);
  const int s = int(S.size());

  std::map<Key, CVec> right_cache;
  std::map<Key, CVec> left_acc;
  for (std::size_t t = 0; t < m.terms.size(); ++t) {
    const TermShape& term = m.terms[t];
    for (int mask = 0; mask < (1 << s); ++mask) {
      std::vector<int> SL, SR;
      for (int i = 0; i < s; ++i) ((mask >> i) & 1 ? SL : SR).push_back(S[i]);
      int dl = Impl::derivative_order(term.left, SL);
      int dr = Impl::derivative_order(term.right, SR);
      if (dl < 0 || dr < 0) continue;
      Key rk{term.right.kind, term.right.axis, dr};
      auto rit = right_cache.find(rk);
      if (rit == right_cache.end()) rit = right_cache.emplace(rk, m.diff(term.right, dr, false, u)).first;
      Key lk{term.left.kind, term.left.axis, dl};
      CVec contrib = data->weights[t].cast<cplx>().cwiseProduct(rit->second);
      auto lit = left_acc.find(lk);
      if (lit == left_acc.end()) {
        left_acc.emplace(lk, std::move(contrib));
      } else {
        lit->second += contrib;
      }
    }
  }
  CVec out = CVec::Zero(m.size);
  for (const auto& [key, acc] : left_acc) out += m.diff({key.kind, key.axis}, key.order, true, acc);
  if (s == 0) out += data->c.cast<cplx>().cwiseProduct(u);
  return out;
}

cplx CellOperator::left_derivative_pairing(const FormVariant& v, int k, const CVec& u, const CVec& w) const {
  const Impl& m = *impl_;
  auto data = variant_data(m, field_, point_.x, v);
  cplx total = 0;
  for (std::size_t t = 0; t < m.terms.size(); ++t) {
    const TermShape& term = m.terms[t];
    if (term.left.axis != k) continue;
    CVec r = data->weights[t].cast<cplx>().cwiseProduct(m.diff(term.right, 0, false, u));
    CVec lv = m.diff(term.left, 1, false, w);
    total += mean_inner(r, lv);
  }
  return total;
}

CMat CellOperator::dense_grid() const {
  const int n = impl_->size;
  CMat H(n, n);
  CVec e = CVec::Zero(n);
  for (int j = 0; j < n; ++j) {
    e(j) = 1.0;
    H.col(j) = apply(e);
    e(j) = 0.0;
  }
  return H;
}

double CellOperator::hermitian_residual() const {
  CMat H = dense_grid();
  double scale = H.cwiseAbs().maxCoeff();
  return (H - H.adjoint()).cwiseAbs().maxCoeff() / (scale > 0 ? scale : 1.0);
}

const RVec& CellOperator::coefficient_samples(const FormVariant& v, int a, int b) const {
  return variant_data(*impl_, field_, point_.x, v)->A[a * impl_->dim + b];
}

const RVec& CellOperator::potential_samples(const FormVariant& v) const {
  return variant_data(*impl_, field_, point_.x, v)->c;
}

double CellOperator::potential_min() const { return potential_samples({}).minCoeff(); }

CVec CellOperator::precondition(const CVec& u, double shift) const {
  const Impl& m = *impl_;
  auto data = variant_data(m, field_, point_.x, {});
  RMat abar(m.dim, m.dim);
  for (int a = 0; a < m.dim; ++a)
    for (int b = 0; b < m.dim; ++b) abar(a, b) = data->A[a * m.dim + b].mean();
  const double cbar = data->c.mean() - shift;
  const double h = 1.0 / m.M;
  CVec f = m.grid->forward(u);
  std::vector<cplx> g(m.dim);
  for (int j = 0; j < m.size; ++j) {
    for (int a = 0; a < m.dim; ++a) {
      double s = m.spectral_symbol[a](j);
      g[a] = disc_.scheme == Scheme::pseudo_spectral ? kTwoPiI * s
                                                     : (std::exp(kTwoPiI * s * h) - 1.0) / h;
    }
    double sym = 0;
    for (int a = 0; a < m.dim; ++a)
      for (int b = 0; b < m.dim; ++b) sym += (std::conj(g[a]) * abar(a, b) * g[b]).real();
    f(j) /= std::max(sym + cbar, 1e-8);
  }
  CVec out = m.grid->backward(f);
  return out / double(m.size);
}

namespace {

std::shared_ptr<CellOperator::Spectrum> dense_spectrum(const CellOperator& op, const CellOperator::Impl& m,
                                                       const VariantData& data) {
  const int n = m.size;
  CMat H(n, n);
  const bool spectral = op.disc().scheme == Scheme::pseudo_spectral;
  if (spectral) {
    std::vector<CVec> what;
    for (const auto& w : data.weights) what.push_back(m.grid->forward(w.cast<cplx>()) / double(n));
    CVec chat = m.grid->forward(data.c.cast<cplx>()) / double(n);
    std::vector<std::array<int, 2>> mi(n);
    for (int p = 0; p < n; ++p) mi[p] = m.grid->multi_index(p);
    auto diff_index = [&](int p, int q) {
      int d0 = (mi[p][0] - mi[q][0] + m.M) % m.M;
      if (m.dim == 1) return d0;
      int d1 = (mi[p][1] - mi[q][1] + m.M) % m.M;
      return d0 * m.M + d1;
    };
    for (int q = 0; q < n; ++q)
      for (int p = 0; p < n; ++p) {
        int d = diff_index(p, q);
        cplx v = chat(d);
        for (std::size_t t = 0; t < m.terms.size(); ++t) {
          const auto& term = m.terms[t];
          cplx gl = kTwoPiI * m.spectral_symbol[term.left.axis](p);
          cplx gr = kTwoPiI * m.spectral_symbol[term.right.axis](q);
          v += std::conj(gl) * what[t](d) * gr;
        }
        H(p, q) = v;
      }
  } else {
    H = op.dense_grid();
  }
  CMat Hs = 0.5 * (H + H.adjoint());
  Eigen::SelfAdjointEigenSolver<CMat> es(Hs);
  if (es.info() != Eigen::Success) throw EigensolverFailure("dense Hermitian eigensolver failed");
  auto spec = std::make_shared<CellOperator::Spectrum>();
  spec->values = es.eigenvalues();
  spec->complete = true;
  spec->vectors.resize(n, n);
  spec->anchors.resize(n);
  for (int j = 0; j < n; ++j) {
    CVec col = spectral ? CVec(m.grid->backward(es.eigenvectors().col(j)))
                        : CVec(es.eigenvectors().col(j) * std::sqrt(double(n)));
    spec->anchors[j] = fix_gauge(col);
    spec->vectors.col(j) = col;
  }
  // Dense eigenvalues carry O(eps ||H||) roundoff; Rayleigh quotients of the smooth low
  // eigenvectors are accurate to O(eps |lambda|).
  const int refine = std::min(n, 40);
  for (int j = 0; j < refine; ++j)
    spec->values(j) = mean_inner(op.apply(spec->vectors.col(j)), spec->vectors.col(j)).real();
  for (int j = 1; j < refine; ++j)
    if (spec->values(j) < spec->values(j - 1)) {
      std::swap(spec->values(j), spec->values(j - 1));
      spec->vectors.col(j).swap(spec->vectors.col(j - 1));
      std::swap(spec->anchors[j], spec->anchors[j - 1]);
    }
  return spec;
}

}  // namespace

std::shared_ptr<const CellOperator::Spectrum> CellOperator::spectrum(int count) const {
  Impl& m = *impl_;
  std::lock_guard lock(m.spectrum_mutex);
  if (m.spectrum && (m.spectrum->complete || m.spectrum->values.size() >= count)) return m.spectrum;
  if (count > m.size) throw InvalidArgument("more bands requested than grid unknowns");
  if (disc_.uses_dense()) {
    m.spectrum = dense_spectrum(*this, m, *variant_data(m, field_, point_.x, {}));
  } else {
    m.spectrum = detail::lanczos_spectrum(*this, count);
  }
  return m.spectrum;
}

CellOperator assemble_cell_operator(const CoefficientField& field, const BlochPoint& point,
                                    const CellDiscretization& disc) {
  return CellOperator(field, point, disc);
}

int fix_gauge(CVec& psi) {
  Eigen::Index anchor = 0;
  psi.cwiseAbs2().maxCoeff(&anchor);
  cplx v = psi(anchor);
  if (std::abs(v) > 0) psi *= std::conj(v) / std::abs(v);
  psi(anchor) = cplx(psi(anchor).real(), 0.0);
  return int(anchor);
}

}  // namespace twoscale
