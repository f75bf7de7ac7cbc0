#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebd/geometry.hpp"
#include "ebd/molio.hpp"

namespace ebd {

struct CoverageMatching {
    double cov_r = 0, mat_r = 0, cov_p = 0, mat_p = 0;
};

/// Coverage / matching metrics between a generated set and a ground-truth set.
/// D is the |gt| x |gen| aligned-RMSD matrix; recall variants use row minima,
/// precision variants the column minima. Coverage uses <= on the threshold.
inline CoverageMatching coverage_matching(const std::vector<Conformer>& gen,
                                          const std::vector<Conformer>& gt, double delta_cov,
                                          bool heavy_only = false,
                                          const std::vector<Atom>* atoms = nullptr) {
    if (gen.empty() || gt.empty())
        throw std::invalid_argument("coverage_matching: empty conformer set");
    const std::size_t n = gt[0].size();
    for (const auto& c : gen)
        if (c.size() != n) throw std::invalid_argument("coverage_matching: atom-count mismatch");
    for (const auto& c : gt)
        if (c.size() != n) throw std::invalid_argument("coverage_matching: atom-count mismatch");

    std::vector<std::size_t> keep;
    if (heavy_only) {
        if (!atoms || atoms->size() != n)
            throw std::invalid_argument("coverage_matching: heavy-only needs atom elements");
        for (std::size_t i = 0; i < n; ++i)
            if ((*atoms)[i].element != "H") keep.push_back(i);
        if (keep.empty()) throw std::invalid_argument("coverage_matching: no heavy atoms");
    }
    const auto select = [&](const Conformer& c) {
        if (!heavy_only) return c;
        Conformer out;
        out.reserve(keep.size());
        for (std::size_t i : keep) out.push_back(c[i]);
        return out;
    };

    std::vector<std::vector<double>> d(gt.size(), std::vector<double>(gen.size()));
    for (std::size_t r = 0; r < gt.size(); ++r) {
        const Conformer gtc = select(gt[r]);
        for (std::size_t c = 0; c < gen.size(); ++c)
            d[r][c] = aligned_rmsd(select(gen[c]), gtc);
    }

    CoverageMatching out;
    for (std::size_t r = 0; r < gt.size(); ++r) {
        const double m = *std::min_element(d[r].begin(), d[r].end());
        if (m <= delta_cov) out.cov_r += 1;
        out.mat_r += m;
    }
    out.cov_r /= static_cast<double>(gt.size());
    out.mat_r /= static_cast<double>(gt.size());
    for (std::size_t c = 0; c < gen.size(); ++c) {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < gt.size(); ++r) m = std::min(m, d[r][c]);
        if (m <= delta_cov) out.cov_p += 1;
        out.mat_p += m;
    }
    out.cov_p /= static_cast<double>(gen.size());
    out.mat_p /= static_cast<double>(gen.size());
    return out;
}

struct EnsembleReport {
    std::vector<std::string> mol_ids;
    std::vector<CoverageMatching> per_molecule;
    CoverageMatching mean;
    CoverageMatching median;
    double delta_cov = 0;
};

namespace detail {
inline double midpoint_median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
} // namespace detail

/// Per-molecule metrics plus corpus mean and midpoint median. Ground truth is
/// reference_conformers when present, otherwise conformers; generated sets
/// come from generated_conformers.
inline EnsembleReport corpus_report(const std::vector<MoleculeRecord>& corpus, double delta_cov,
                                    bool heavy_only = false) {
    EnsembleReport rep;
    rep.delta_cov = delta_cov;
    for (const auto& mol : corpus) {
        const std::vector<Conformer>& gt =
            mol.conformers.empty() ? mol.reference_conformers : mol.conformers;
        if (mol.generated_conformers.empty() || gt.empty())
            throw std::invalid_argument("corpus_report: molecule " + mol.id +
                                        " missing a conformer set");
        rep.mol_ids.push_back(mol.id);
        rep.per_molecule.push_back(
            coverage_matching(mol.generated_conformers, gt, delta_cov, heavy_only, &mol.atoms));
    }
    if (rep.per_molecule.empty()) throw std::invalid_argument("corpus_report: empty corpus");

    std::vector<double> cr, mr, cp, mp;
    for (const auto& m : rep.per_molecule) {
        cr.push_back(m.cov_r);
        mr.push_back(m.mat_r);
        cp.push_back(m.cov_p);
        mp.push_back(m.mat_p);
    }
    const double inv = 1.0 / static_cast<double>(rep.per_molecule.size());
    for (const auto& m : rep.per_molecule) {
        rep.mean.cov_r += m.cov_r * inv;
        rep.mean.mat_r += m.mat_r * inv;
        rep.mean.cov_p += m.cov_p * inv;
        rep.mean.mat_p += m.mat_p * inv;
    }
    rep.median.cov_r = detail::midpoint_median(cr);
    rep.median.mat_r = detail::midpoint_median(mr);
    rep.median.cov_p = detail::midpoint_median(cp);
    rep.median.mat_p = detail::midpoint_median(mp);
    return rep;
}

inline void write_report_csv(const std::string& path, const EnsembleReport& rep) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open report output: " + path);
    out << "mol_id,cov_r,mat_r,cov_p,mat_p\n";
    char buf[40];
    const auto emit = [&](const std::string& id, const CoverageMatching& m) {
        out << id;
        for (double v : {m.cov_r, m.mat_r, m.cov_p, m.mat_p}) {
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            out << ',' << buf;
        }
        out << '\n';
    };
    for (std::size_t i = 0; i < rep.mol_ids.size(); ++i) emit(rep.mol_ids[i], rep.per_molecule[i]);
    emit("mean", rep.mean);
    emit("median", rep.median);
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test (one-sided: a < b, i.e. a scores lower)
// ---------------------------------------------------------------------------

/// One-sided signed-rank p-value for the alternative "a tends to be smaller
/// than b". Zero differences are discarded; ties get mid-ranks. Exact 2^n
/// enumeration for n <= 12, normal approximation with continuity and tie
/// correction above.
inline double wilcoxon_one_sided(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: length mismatch");
    if (a.size() < 5) throw std::invalid_argument("wilcoxon: need at least 5 pairs");

    std::vector<double> diffs;   // b - a; positive favors the alternative
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = b[i] - a[i];
        if (d != 0.0) diffs.push_back(d);
    }
    if (diffs.empty()) throw std::invalid_argument("wilcoxon: all differences zero");
    const std::size_t n = diffs.size();

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return std::abs(diffs[x]) < std::abs(diffs[y]);
    });
    std::vector<double> rank(n);
    double tie_correction = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
        const double mid = 0.5 * static_cast<double>(i + j + 1);   // ranks are 1-based
        for (std::size_t k = i; k < j; ++k) rank[order[k]] = mid;
        const double g = static_cast<double>(j - i);
        tie_correction += g * g * g - g;
        i = j;
    }

    double w_plus = 0;   // rank sum of positive differences (evidence for a < b)
    for (std::size_t i = 0; i < n; ++i)
        if (diffs[i] > 0) w_plus += rank[i];

    if (n <= 12) {
        // Exact: P(W+ >= w_plus) over all 2^n equally likely sign assignments.
        std::size_t ge = 0;
        const std::size_t total = std::size_t{1} << n;
        for (std::size_t mask = 0; mask < total; ++mask) {
            double w = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (mask & (std::size_t{1} << i)) w += rank[i];
            if (w >= w_plus) ++ge;
        }
        return static_cast<double>(ge) / static_cast<double>(total);
    }

    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_correction / 48.0;
    if (var <= 0) throw std::invalid_argument("wilcoxon: degenerate variance");
    const double z = (w_plus - mean - 0.5) / std::sqrt(var);
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

} // namespace ebd
