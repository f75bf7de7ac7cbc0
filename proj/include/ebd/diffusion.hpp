#pragma once

#include <stdexcept>

#include "ebd/coarse.hpp"
#include "ebd/geometry.hpp"
#include "ebd/molio.hpp"
#include "ebd/rng.hpp"

namespace ebd {

struct DiffusionSchedule {
    int T = 50;
    double sigma = 0.01;    // forward noise std, Angstrom
    double delta = 0.0125;  // reverse/prior noise std, Angstrom

    void validate() const {
        if (T < 1 || sigma < 0 || delta < 0)
            throw std::invalid_argument("DiffusionSchedule: T >= 1, sigma >= 0, delta >= 0 required");
    }
};

/// Deterministic blurring operator: linear interpolation between the ground
/// truth and the lifted coarse structure. Exact at both endpoints.
inline Coords blur(const Coords& x0, const CoarseStructure& coarse, const MappingMatrix& map,
                   int t, int t_max) {
    if (t < 0 || t > t_max) throw std::invalid_argument("blur: t out of range");
    const Coords lifted = map.lift(coarse.frag_coords);
    if (lifted.size() != x0.size()) throw std::invalid_argument("blur: shape mismatch");
    if (t == 0) return x0;
    if (t == t_max) return lifted;
    const double w = static_cast<double>(t) / static_cast<double>(t_max);
    Coords out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = (1.0 - w) * x0[i] + w * lifted[i];
    return out;
}

/// Zero center-of-mass gaussian noise of the given scale.
inline Coords centered_noise(std::size_t n, double scale, Rng& rng) {
    Coords eps(n);
    for (auto& r : eps)
        for (int c = 0; c < 3; ++c) r[c] = scale * rng.gaussian();
    return remove_mean(eps);
}

/// Forward sample: blur plus centered noise of scale sigma.
inline Coords forward_sample(const Coords& x0, const CoarseStructure& coarse, const MappingMatrix& map,
                             int t, const DiffusionSchedule& schedule, Rng& rng) {
    Coords out = blur(x0, coarse, map, t, schedule.T);
    if (schedule.sigma == 0.0) return out;
    const Coords eps = centered_noise(out.size(), schedule.sigma, rng);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + eps[i];
    return out;
}

/// Prior sample: lifted coarse structure plus centered noise of scale delta.
inline Coords prior_sample(const CoarseStructure& coarse, const MappingMatrix& map,
                           const DiffusionSchedule& schedule, Rng& rng) {
    Coords out = map.lift(coarse.frag_coords);
    if (schedule.delta == 0.0) return out;
    const Coords eps = centered_noise(out.size(), schedule.delta, rng);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + eps[i];
    return out;
}

} // namespace ebd
