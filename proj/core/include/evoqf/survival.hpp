#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evoqf/graph.hpp"

namespace evoqf {

struct SurvivalRecord {
  double time = 1.0;   // days, > 0
  bool event = false;  // true = death observed, false = censored
};

// Throws NonPositiveTime for time <= 0 or non-finite time.
void validate_records(std::span<const SurvivalRecord> records);

/// Negative log Cox partial likelihood with Breslow ties:
///   sum over events i of -(eta_i - log sum_{j : t_j >= t_i} exp(eta_j)).
/// All-censored input returns 0 and logs a warning.
double cox_partial_likelihood(std::span<const double> etas, std::span<const SurvivalRecord> records);

/// Graph form. `etas` holds one risk per record (n x 1 or length n); the
/// result is a scalar node with the analytic gradient attached.
Var cox_partial_likelihood(Var etas, std::span<const SurvivalRecord> records);

struct ConcordanceCounts {
  std::uint64_t concordant = 0;
  std::uint64_t tied = 0;
  std::uint64_t permissible = 0;

  // (concordant + tied / 2) / permissible
  double index() const;
};

/// Harrell's c-index. A pair (i, j) is permissible iff t_i < t_j and i had
/// the event; it scores 1 when eta_i > eta_j, 1/2 on tied eta, else 0.
/// O(n log n) via a Fenwick tree over risk ranks.
ConcordanceCounts concordance_counts(std::span<const double> etas, std::span<const SurvivalRecord> records);
double concordance_index(std::span<const double> etas, std::span<const SurvivalRecord> records);

/// Literal O(n^2) enumeration with the same pair rules. Reference oracle.
ConcordanceCounts concordance_counts_bruteforce(std::span<const double> etas,
                                                std::span<const SurvivalRecord> records);
double concordance_bruteforce(std::span<const double> etas, std::span<const SurvivalRecord> records);

/// Arithmetic mean rounded to 3 decimals, as in a results table MEAN column.
double aggregate_mean(std::span<const double> per_split_cindex);

inline constexpr const char* kConcordanceVariant = "harrell";

}  // namespace evoqf
