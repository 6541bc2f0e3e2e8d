#include <algorithm>
#include <cmath>

#include "screenfb/kernels.hpp"

namespace screenfb::kernels {

double pairwise_sum(const double* a, std::size_t n) {
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += a[k];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(a, half) + pairwise_sum(a + half, n - half);
}

namespace serial {

void csr_apply(const Csr& m, const double* x, double* y) {
  for (int r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (int k = m.ptr[r]; k < m.ptr[r + 1]; ++k) s += m.val[k] * x[m.col[k]];
    y[r] = s;
  }
}

void quad_terms(const double* g, const double* w, const double* c, std::size_t n, double* term) {
  for (std::size_t i = 0; i < n; ++i) term[i] = w[i] * (c[i] * g[i] - 0.5 * g[i] * g[i]);
}

void mass_terms(const double* u, const double* w, const unsigned char* mask, std::size_t n,
                double* term) {
  for (std::size_t i = 0; i < n; ++i) term[i] = mask[i] ? -w[i] * u[i] : 0.0;
}

void psor_sweep(double* v, const double* f, const unsigned char* active, int nx, int ny, double h2,
                double omega, int color) {
  for (int j = 1; j < ny - 1; ++j) {
    for (int i = 1 + ((j + color) & 1); i < nx - 1; i += 2) {
      const int id = j * nx + i;
      if (!active[id]) continue;
      const double gs = 0.25 * (v[id - 1] + v[id + 1] + v[id - nx] + v[id + nx] - h2 * f[id]);
      v[id] = std::max(0.0, (1.0 - omega) * v[id] + omega * gs);
    }
  }
}

}  // namespace serial
}  // namespace screenfb::kernels
