#include "hran/threading.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hran {

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int apply_thread_env() {
  const char* env = std::getenv("HRAN_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  const int n = std::atoi(env);
  if (n > 0) set_num_threads(n);
  return n;
}

}  // namespace hran
