#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "twoscale/coefficients.hpp"
#include "twoscale/errors.hpp"

namespace twoscale {

namespace {

// Natural cubic spline through (nodes, values); evaluates the value or its first two
// derivatives. A single node means a constant.
double spline_eval(const std::vector<double>& nodes, const std::vector<double>& values, double t, int order) {
  const std::size_t n = nodes.size();
  if (n == 1) return order == 0 ? values[0] : 0.0;
  if (n == 2) {
    double slope = (values[1] - values[0]) / (nodes[1] - nodes[0]);
    if (order == 0) return values[0] + slope * (t - nodes[0]);
    return order == 1 ? slope : 0.0;
  }
  // Second-derivative moments via the Thomas algorithm.
  std::vector<double> m(n, 0.0), cp(n, 0.0), dp(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    double h0 = nodes[i] - nodes[i - 1], h1 = nodes[i + 1] - nodes[i];
    double a = h0 / 6.0, b = (h0 + h1) / 3.0, c = h1 / 6.0;
    double d = (values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0;
    double denom = b - a * cp[i - 1];
    cp[i] = c / denom;
    dp[i] = (d - a * dp[i - 1]) / denom;
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m[i] = dp[i] - cp[i] * m[i + 1];
    if (i == 1) break;
  }
  std::size_t k = std::upper_bound(nodes.begin(), nodes.end(), t) - nodes.begin();
  k = std::clamp<std::size_t>(k, 1, n - 1);
  const double x0 = nodes[k - 1], x1 = nodes[k], h = x1 - x0;
  const double A = (x1 - t) / h, B = (t - x0) / h;
  const double y0 = values[k - 1], y1 = values[k], m0 = m[k - 1], m1 = m[k];
  switch (order) {
    case 0:
      return A * y0 + B * y1 + ((A * A * A - A) * m0 + (B * B * B - B) * m1) * h * h / 6.0;
    case 1:
      return (y1 - y0) / h - (3 * A * A - 1) * h * m0 / 6.0 + (3 * B * B - 1) * h * m1 / 6.0;
    default:
      return A * m0 + B * m1;
  }
}

// Periodic Dirichlet kernel on n uniform nodes (Nyquist mode split symmetrically).
double dirichlet(int n, double t) {
  t -= std::floor(t);
  if (t > 0.5) t -= 1.0;
  const double s = std::sin(kPi * t);
  if (std::abs(s) < 1e-14) return 1.0;
  if (n % 2 == 0) return std::sin(kPi * n * t) * std::cos(kPi * t) / (n * s);
  return std::sin(kPi * n * t) / (n * s);
}

struct Table {
  int dim = 1;
  int ny = 0;
  int ncomp = 0;
  std::vector<std::vector<double>> xnodes;  // per axis
  std::vector<double> data;                 // [(ix flat) * ny^dim + iy flat] * ncomp + comp

  int ny_total() const { return dim == 1 ? ny : ny * ny; }
  int nx_total() const { return dim == 1 ? int(xnodes[0].size()) : int(xnodes[0].size() * xnodes[1].size()); }

  double at(int ix, int iy, int comp) const { return data[(std::size_t(ix) * ny_total() + iy) * ncomp + comp]; }

  // Component value or x-derivative (orders per axis) at (x, y).
  double eval(int comp, const SmallVec& x, const SmallVec& y, std::array<int, 2> orders) const {
    const int nyt = ny_total();
    double total = 0;
    for (int iy = 0; iy < nyt; ++iy) {
      double w;
      if (dim == 1) {
        w = dirichlet(ny, y(0) - double(iy) / ny);
      } else {
        w = dirichlet(ny, y(0) - double(iy / ny) / ny) * dirichlet(ny, y(1) - double(iy % ny) / ny);
      }
      if (w == 0.0) continue;
      double v;
      if (dim == 1) {
        std::vector<double> vals(xnodes[0].size());
        for (std::size_t ix = 0; ix < vals.size(); ++ix) vals[ix] = at(int(ix), iy, comp);
        v = spline_eval(xnodes[0], vals, x(0), orders[0]);
      } else {
        const std::size_t n0 = xnodes[0].size(), n1 = xnodes[1].size();
        std::vector<double> along0(n0), row(n1);
        for (std::size_t i0 = 0; i0 < n0; ++i0) {
          for (std::size_t i1 = 0; i1 < n1; ++i1) row[i1] = at(int(i0 * n1 + i1), iy, comp);
          along0[i0] = spline_eval(xnodes[1], row, x(1), orders[1]);
        }
        v = spline_eval(xnodes[0], along0, x(0), orders[0]);
      }
      total += w * v;
    }
    return total;
  }

  SmallMat matrix(const SmallVec& x, const SmallVec& y, std::array<int, 2> orders) const {
    SmallMat a(dim, dim);
    if (dim == 1) {
      a(0, 0) = eval(0, x, y, orders);
    } else {
      a(0, 0) = eval(0, x, y, orders);
      a(0, 1) = a(1, 0) = eval(1, x, y, orders);
      a(1, 1) = eval(2, x, y, orders);
    }
    return a;
  }
  double scalar(const SmallVec& x, const SmallVec& y, std::array<int, 2> orders) const {
    return eval(ncomp - 1, x, y, orders);
  }
};

std::array<int, 2> orders_for(int l, int h, int order) {
  std::array<int, 2> o{0, 0};
  o[h] += 1;
  if (order == 2) o[l] += 1;
  return o;
}

int locate(const std::vector<double>& nodes, double v) {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (std::abs(nodes[i] - v) <= 1e-10 * (1.0 + std::abs(v))) return int(i);
  return -1;
}

}  // namespace

CoefficientField tabulated_field_from_text(const std::string& csv_text, int dimension, double coercivity_floor,
                                           std::string name) {
  if (dimension != 1 && dimension != 2) throw InvalidArgument("tabulated field dimension must be 1 or 2");
  const int ncomp = dimension == 1 ? 2 : 4;
  const int ncols = 2 * dimension + ncomp;

  std::vector<std::vector<double>> rows;
  std::istringstream in(csv_text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty()) continue;  // header
      throw InvalidArgument("non-numeric row in tabulated field: " + line);
    }
    if (int(row.size()) != ncols)
      throw InvalidArgument("tabulated field rows need " + std::to_string(ncols) + " columns");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidArgument("tabulated field has no data rows");

  auto table = std::make_shared<Table>();
  table->dim = dimension;
  table->ncomp = ncomp;
  table->xnodes.resize(dimension);
  std::vector<double> yvals;
  for (const auto& r : rows) {
    for (int k = 0; k < dimension; ++k)
      if (locate(table->xnodes[k], r[k]) < 0) table->xnodes[k].push_back(r[k]);
    if (locate(yvals, r[dimension]) < 0) yvals.push_back(r[dimension]);
  }
  for (auto& nodes : table->xnodes) std::sort(nodes.begin(), nodes.end());
  table->ny = int(yvals.size());
  if (table->ny < 2) throw InvalidArgument("tabulated field needs at least two y nodes");
  std::vector<double> ynodes;
  for (int j = 0; j < table->ny; ++j) ynodes.push_back(double(j) / table->ny);

  const std::size_t expected = std::size_t(table->nx_total()) * table->ny_total();
  if (rows.size() != expected)
    throw InvalidArgument("tabulated field is not a full tensor grid (" + std::to_string(rows.size()) + " rows, " +
                          std::to_string(expected) + " expected)");
  table->data.assign(expected * ncomp, std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : rows) {
    int ix = locate(table->xnodes[0], r[0]);
    if (dimension == 2) ix = ix * int(table->xnodes[1].size()) + locate(table->xnodes[1], r[1]);
    int iy = -1;
    int iy0 = locate(ynodes, r[dimension]);
    if (dimension == 1) {
      iy = iy0;
    } else {
      int iy1 = locate(ynodes, r[dimension + 1]);
      iy = (iy0 < 0 || iy1 < 0) ? -1 : iy0 * table->ny + iy1;
    }
    if (iy < 0) throw InvalidArgument("tabulated y nodes must be the uniform grid j/ny on [0, 1)");
    for (int k = 0; k < ncomp; ++k) table->data[(std::size_t(ix) * table->ny_total() + iy) * ncomp + k] =
        r[2 * dimension + k];
  }
  for (double v : table->data)
    if (std::isnan(v)) throw InvalidArgument("tabulated field has duplicate or missing grid points");

  CoefficientField::Spec s;
  s.name = std::move(name);
  s.dimension = dimension;
  s.coercivity_floor = coercivity_floor;
  s.A = [table](const SmallVec& x, const SmallVec& y) { return table->matrix(x, y, {0, 0}); };
  s.c = [table](const SmallVec& x, const SmallVec& y) { return table->scalar(x, y, {0, 0}); };
  s.A_dx = [table](int h, const SmallVec& x, const SmallVec& y) { return table->matrix(x, y, orders_for(h, h, 1)); };
  s.A_dxx = [table](int l, int h, const SmallVec& x, const SmallVec& y) {
    return table->matrix(x, y, orders_for(l, h, 2));
  };
  s.c_dx = [table](int h, const SmallVec& x, const SmallVec& y) { return table->scalar(x, y, orders_for(h, h, 1)); };
  s.c_dxx = [table](int l, int h, const SmallVec& x, const SmallVec& y) {
    return table->scalar(x, y, orders_for(l, h, 2));
  };
  return CoefficientField(std::move(s));
}

CoefficientField load_tabulated_field(const std::string& path, int dimension, double coercivity_floor) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("cannot open tabulated field " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return tabulated_field_from_text(buf.str(), dimension, coercivity_floor, path);
}

}  // namespace twoscale
