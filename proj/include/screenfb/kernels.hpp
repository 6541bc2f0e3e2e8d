#pragma once

#include <cstddef>
#include <vector>

namespace screenfb::kernels {

// Runtime switch between the OpenMP kernels and the serial reference path.
// Results are bit-identical either way: parallel loops only do independent
// per-node writes, and every reduction goes through the fixed pairwise tree.
void set_parallel(bool enabled);
bool parallel_enabled();
void set_threads(int n);
int thread_count();

struct Csr {
  int rows = 0;
  std::vector<int> ptr;  // size rows+1
  std::vector<int> col;
  std::vector<double> val;
};

// Deterministic pairwise-tree summation, independent of thread count.
double pairwise_sum(const double* a, std::size_t n);

namespace serial {

void csr_apply(const Csr& m, const double* x, double* y);

// Per-quadrature-point integrand w * (c * g - g^2 / 2) into term[].
void quad_terms(const double* g, const double* w, const double* c, std::size_t n, double* term);

// Per-node integrand -w * u into term[]; zero off-mask.
void mass_terms(const double* u, const double* w, const unsigned char* mask, std::size_t n,
                double* term);

// One red-black PSOR half-sweep on the 5-point complementarity system.
void psor_sweep(double* v, const double* f, const unsigned char* active, int nx, int ny, double h2,
                double omega, int color);

}  // namespace serial

namespace par {

void csr_apply(const Csr& m, const double* x, double* y);
void quad_terms(const double* g, const double* w, const double* c, std::size_t n, double* term);
void mass_terms(const double* u, const double* w, const unsigned char* mask, std::size_t n,
                double* term);
void psor_sweep(double* v, const double* f, const unsigned char* active, int nx, int ny, double h2,
                double omega, int color);

}  // namespace par

// Dispatchers honouring set_parallel().
void csr_apply(const Csr& m, const double* x, double* y);
void quad_terms(const double* g, const double* w, const double* c, std::size_t n, double* term);
void mass_terms(const double* u, const double* w, const unsigned char* mask, std::size_t n,
                double* term);
void psor_sweep(double* v, const double* f, const unsigned char* active, int nx, int ny, double h2,
                double omega, int color);

}  // namespace screenfb::kernels
