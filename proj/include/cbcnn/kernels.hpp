#pragma once

#include <cstddef>

// Data-parallel inner loops shared by the tensor, sketch, net and retrieval
// code. A scalar reference implementation always exists; on x86 an AVX2+FMA
// variant is selected once at startup. Both variants use a fixed reduction
// order, so results are reproducible run to run on the same machine.

namespace cbcnn::kernels {

struct Ops {
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*scale)(double alpha, const double* x, double* out, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
};

// Scalar reference kernels; the equivalence oracle for every variant.
const Ops& scalar();

// Best variant for this CPU. Honors CBP_FORCE_SCALAR=1 in the environment.
const Ops& active();

}  // namespace cbcnn::kernels
