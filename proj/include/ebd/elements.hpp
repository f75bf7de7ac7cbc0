#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ebd {

// Covalent radii in Angstrom (single-bond textbook values).
inline double covalent_radius(std::string_view element) {
    if (element == "C") return 0.77;
    if (element == "N") return 0.75;
    if (element == "O") return 0.73;
    if (element == "H") return 0.37;
    if (element == "S") return 1.02;
    if (element == "F") return 0.71;
    if (element == "Cl") return 0.99;
    if (element == "Br") return 1.14;
    if (element == "P") return 1.06;
    if (element == "I") return 1.33;
    throw std::invalid_argument("unknown element: " + std::string(element));
}

// Ideal bond length: covalent-radius sum, contracted for higher bond orders.
// order: 0 single, 1 double, 2 triple, 3 aromatic.
inline double ideal_bond_length(std::string_view a, std::string_view b, int order) {
    const double base = covalent_radius(a) + covalent_radius(b);
    switch (order) {
        case 0: return base;
        case 1: return 0.90 * base;
        case 2: return 0.85 * base;
        case 3: return 0.95 * base;   // aromatic: between single and double
        default: throw std::invalid_argument("bad bond order");
    }
}

// Feature buckets: hydrophobic / h-bond center / negative charge center.
inline int feature_bucket(std::string_view element) {
    if (element == "C") return 0;
    if (element == "O" || element == "N" || element == "S" || element == "P") return 1;
    if (element == "F" || element == "Cl" || element == "Br" || element == "I") return 2;
    return -1;   // unlisted elements contribute to no bucket
}

inline int default_valence(std::string_view element) {
    if (element == "C") return 4;
    if (element == "N") return 3;
    if (element == "O") return 2;
    if (element == "S") return 2;
    if (element == "P") return 3;
    return 1;
}

} // namespace ebd
