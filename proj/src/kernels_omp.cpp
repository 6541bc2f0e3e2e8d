#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "screenfb/kernels.hpp"

namespace screenfb::kernels {

namespace {
bool g_parallel = true;
}

void set_parallel(bool enabled) { g_parallel = enabled; }
bool parallel_enabled() {
#ifdef _OPENMP
  return g_parallel;
#else
  return false;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace par {

void csr_apply(const Csr& m, const double* x, double* y) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (int k = m.ptr[r]; k < m.ptr[r + 1]; ++k) s += m.val[k] * x[m.col[k]];
    y[r] = s;
  }
}

void quad_terms(const double* g, const double* w, const double* c, std::size_t n, double* term) {
  const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < nn; ++i) term[i] = w[i] * (c[i] * g[i] - 0.5 * g[i] * g[i]);
}

void mass_terms(const double* u, const double* w, const unsigned char* mask, std::size_t n,
                double* term) {
  const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < nn; ++i) term[i] = mask[i] ? -w[i] * u[i] : 0.0;
}

void psor_sweep(double* v, const double* f, const unsigned char* active, int nx, int ny, double h2,
                double omega, int color) {
  // Nodes of one color only read the other color: order within the sweep is
  // immaterial, so the result is thread-count independent.
#pragma omp parallel for schedule(static)
  for (int j = 1; j < ny - 1; ++j) {
    for (int i = 1 + ((j + color) & 1); i < nx - 1; i += 2) {
      const int id = j * nx + i;
      if (!active[id]) continue;
      const double gs = 0.25 * (v[id - 1] + v[id + 1] + v[id - nx] + v[id + nx] - h2 * f[id]);
      v[id] = std::max(0.0, (1.0 - omega) * v[id] + omega * gs);
    }
  }
}

}  // namespace par

void csr_apply(const Csr& m, const double* x, double* y) {
  parallel_enabled() ? par::csr_apply(m, x, y) : serial::csr_apply(m, x, y);
}

void quad_terms(const double* g, const double* w, const double* c, std::size_t n, double* term) {
  parallel_enabled() ? par::quad_terms(g, w, c, n, term) : serial::quad_terms(g, w, c, n, term);
}

void mass_terms(const double* u, const double* w, const unsigned char* mask, std::size_t n,
                double* term) {
  parallel_enabled() ? par::mass_terms(u, w, mask, n, term)
                     : serial::mass_terms(u, w, mask, n, term);
}

void psor_sweep(double* v, const double* f, const unsigned char* active, int nx, int ny, double h2,
                double omega, int color) {
  parallel_enabled() ? par::psor_sweep(v, f, active, nx, ny, h2, omega, color)
                     : serial::psor_sweep(v, f, active, nx, ny, h2, omega, color);
}

}  // namespace screenfb::kernels
