#pragma once

namespace hran {

// Caps the worker count for all data-parallel kernels. 0 keeps the runtime
// default. Results never depend on this by construction.
void set_num_threads(int n);

int max_threads();

// Applies HRAN_THREADS if set; returns the resulting cap (0 = unchanged).
int apply_thread_env();

}  // namespace hran
