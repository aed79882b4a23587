#pragma once

#include <span>
#include <vector>

#include "dimmpf/filter_types.hpp"
#include "dimmpf/rng.hpp"
#include "dimmpf/tensor.hpp"

namespace dimmpf {

// Ancestor selection from the regime-tilted coupling matrix. coupling[m][q]
// holds the unnormalized resampling mass of source particle m for regime q
// (wbar_m * K(q | r_m)); col_mass[q] is its column sum. Particles are
// regime-sorted: the stratum of regime q is [q*S, (q+1)*S) with S = N/n_reg.
//
// multinomial: one independent uniform per particle, drawn in particle order.
// systematic: one uniform per regime stratum (drawn in regime order); the
// stratum's S ancestors come from a shifted 1/S grid over the column's
// cumulative weights.
void sample_ancestors(const Tensor& coupling, std::span<const double> col_mass,
                      ResamplerKind kind, int n_reg, int step, RandomStream& rng,
                      std::vector<int>& out);

}  // namespace dimmpf
