#include "evoqf/survival.hpp"

#include <algorithm>
#include <memory>
#include <cmath>
#include <numeric>
#include <string>

#include "evoqf/error.hpp"
#include "evoqf/log.hpp"

namespace evoqf {

namespace {

void check_inputs(std::span<const double> etas, std::span<const SurvivalRecord> records, std::size_t min_len) {
  if (etas.size() != records.size()) {
    fail(ErrorCode::LengthMismatch,
         std::to_string(etas.size()) + " risk scores for " + std::to_string(records.size()) + " records");
  }
  if (etas.size() < min_len) {
    fail(ErrorCode::LengthMismatch, "need at least " + std::to_string(min_len) + " records");
  }
  validate_records(records);
  for (double e : etas) {
    if (!std::isfinite(e)) fail(ErrorCode::NonFiniteInput, "risk score is not finite");
  }
}

std::vector<std::size_t> order_by_time_desc(std::span<const SurvivalRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].time > records[b].time; });
  return order;
}

struct CoxPass {
  double loss = 0.0;
  std::vector<double> grad;
};

// Sweeps time-descending groups so each risk set is a running sum.
CoxPass cox_pass(std::span<const double> etas, std::span<const SurvivalRecord> records, bool want_grad) {
  const std::size_t n = etas.size();
  CoxPass out;
  if (want_grad) out.grad.assign(n, 0.0);
  const std::size_t events = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.event; });
  if (events == 0) {
    log_warn("cox partial likelihood on an all-censored batch; loss is 0");
    return out;
  }

  const double shift = *std::max_element(etas.begin(), etas.end());
  const auto order = order_by_time_desc(records);

  // Per group (time-descending): shifted risk-set sum and event count.
  std::vector<std::pair<std::size_t, std::size_t>> groups;  // [begin, end) in order
  std::vector<double> group_sum;
  std::vector<std::size_t> group_events;
  double running = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t ev = 0;
    while (j < n && records[order[j]].time == records[order[i]].time) {
      running += std::exp(etas[order[j]] - shift);
      ev += records[order[j]].event ? 1 : 0;
      ++j;
    }
    groups.emplace_back(i, j);
    group_sum.push_back(running);
    group_events.push_back(ev);
    for (std::size_t m = i; m < j; ++m) {
      const std::size_t p = order[m];
      if (records[p].event) out.loss += shift + std::log(running) - etas[p];
    }
    i = j;
  }
  if (!want_grad) return out;

  // d/d eta_k = -event_k + exp(eta_k) * sum over event groups at or before t_k of events / S.
  double acc = 0.0;
  for (std::size_t g = groups.size(); g-- > 0;) {
    acc += static_cast<double>(group_events[g]) / group_sum[g];
    for (std::size_t m = groups[g].first; m < groups[g].second; ++m) {
      const std::size_t p = order[m];
      out.grad[p] = std::exp(etas[p] - shift) * acc - (records[p].event ? 1.0 : 0.0);
    }
  }
  return out;
}

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Count of inserted ranks < i.
  std::uint64_t prefix(std::size_t i) const {
    std::uint64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::uint64_t> tree_;
};

}  // namespace

void validate_records(std::span<const SurvivalRecord> records) {
  for (const auto& r : records) {
    if (!(r.time > 0.0) || !std::isfinite(r.time)) {
      fail(ErrorCode::NonPositiveTime, "survival time must be positive and finite, got " + std::to_string(r.time));
    }
  }
}

double cox_partial_likelihood(std::span<const double> etas, std::span<const SurvivalRecord> records) {
  check_inputs(etas, records, 1);
  return cox_pass(etas, records, false).loss;
}

Var cox_partial_likelihood(Var etas, std::span<const SurvivalRecord> records) {
  const Tensor& ev = etas.value();
  check_inputs(ev.data(), records, 1);
  std::vector<SurvivalRecord> recs(records.begin(), records.end());
  CoxPass pass = cox_pass(ev.data(), recs, true);
  auto grad = std::make_shared<std::vector<double>>(std::move(pass.grad));
  return etas.graph->record(OpKind::Custom, {etas}, Tensor::scalar(pass.loss), [grad](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    for (std::size_t i = 0; i < grad->size(); ++i) g.grad_inputs[0][i] += g.grad_output[0] * (*grad)[i];
  });
}

double ConcordanceCounts::index() const {
  if (permissible == 0) fail(ErrorCode::NoPermissiblePairs, "no permissible pairs");
  return (2.0 * static_cast<double>(concordant) + static_cast<double>(tied)) /
         (2.0 * static_cast<double>(permissible));
}

ConcordanceCounts concordance_counts(std::span<const double> etas, std::span<const SurvivalRecord> records) {
  check_inputs(etas, records, 2);
  const std::size_t n = etas.size();

  std::vector<double> levels(etas.begin(), etas.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  const auto rank_of = [&](double e) {
    return static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), e) - levels.begin());
  };

  const auto order = order_by_time_desc(records);
  Fenwick tree(levels.size());
  ConcordanceCounts c;
  std::size_t inserted = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && records[order[j]].time == records[order[i]].time) ++j;
    // The tree holds exactly the patients with strictly larger times.
    for (std::size_t m = i; m < j; ++m) {
      const std::size_t p = order[m];
      if (!records[p].event) continue;
      const std::size_t r = rank_of(etas[p]);
      const std::uint64_t below = tree.prefix(r);
      const std::uint64_t equal = tree.prefix(r + 1) - below;
      c.concordant += below;
      c.tied += equal;
      c.permissible += inserted;
    }
    for (std::size_t m = i; m < j; ++m) tree.add(rank_of(etas[order[m]]));
    inserted += j - i;
    i = j;
  }
  return c;
}

double concordance_index(std::span<const double> etas, std::span<const SurvivalRecord> records) {
  return concordance_counts(etas, records).index();
}

ConcordanceCounts concordance_counts_bruteforce(std::span<const double> etas,
                                                std::span<const SurvivalRecord> records) {
  check_inputs(etas, records, 2);
  ConcordanceCounts c;
  for (std::size_t i = 0; i < etas.size(); ++i) {
    if (!records[i].event) continue;
    for (std::size_t j = 0; j < etas.size(); ++j) {
      if (!(records[i].time < records[j].time)) continue;
      ++c.permissible;
      if (etas[i] > etas[j]) {
        ++c.concordant;
      } else if (etas[i] == etas[j]) {
        ++c.tied;
      }
    }
  }
  return c;
}

double concordance_bruteforce(std::span<const double> etas, std::span<const SurvivalRecord> records) {
  return concordance_counts_bruteforce(etas, records).index();
}

double aggregate_mean(std::span<const double> per_split_cindex) {
  if (per_split_cindex.empty()) fail(ErrorCode::EmptyInput, "aggregate_mean of an empty list");
  double total = 0.0;
  for (double v : per_split_cindex) total += v;
  const double mean = total / static_cast<double>(per_split_cindex.size());
  return std::round(mean * 1000.0) / 1000.0;
}

}  // namespace evoqf
