#include "lflow/sampler.hpp"

#include <cmath>
#include <cstring>

namespace lflow {

double ChainRecord::acceptance_rate() const {
  if (accepted.empty()) return 0.0;
  long n = 0;
  for (auto a : accepted) n += a;
  return static_cast<double>(n) / static_cast<double>(accepted.size());
}

double acceptance_rate(const ChainRecord& record) {
  return record.acceptance_rate();
}

FlowProposalSource::FlowProposalSource(const FlowModel& model,
                                       std::uint64_t seed, int chunk_size)
    : model_(model),
      rng_(seed, Stream::kMhProposal),
      chunk_size_(chunk_size),
      chunk_(model.geometry(), 0) {
  if (chunk_size_ < 1) throw ValidationError("chunk size must be positive");
}

const LatticeGeometry& FlowProposalSource::geometry() const {
  return model_.geometry();
}

void FlowProposalSource::refill() {
  FieldBatch z(model_.geometry(), chunk_size_);
  fill_gaussian(z, rng_);
  PushForward fwd = model_.forward(z);
  chunk_log_q_ = log_q_of_forward(z, fwd);
  chunk_ = std::move(fwd.field);
  cursor_ = 0;
}

double FlowProposalSource::next(FieldBatch& field) {
  if (cursor_ >= chunk_.count) refill();
  if (field.geo != chunk_.geo || field.count != 1) {
    field = FieldBatch(chunk_.geo, 1);
  }
  auto src = chunk_.sample(cursor_);
  std::memcpy(field.values.data(), src.data(), src.size() * sizeof(double));
  return chunk_log_q_[cursor_++];
}

ChainRecord mh_chain(ProposalSource& source, const TargetLogDensity& target,
                     long steps, std::uint64_t seed, int burn_in) {
  if (steps < 1) throw ValidationError("chain needs at least one step");
  if (burn_in < 0 || burn_in >= steps) {
    throw ValidationError("burn-in must lie inside the chain");
  }
  const auto& geo = source.geometry();
  Rng accept_rng(seed, Stream::kMhAccept);

  const long kept = steps - burn_in;
  ChainRecord rec;
  rec.samples = FieldBatch(geo, static_cast<int>(kept));
  rec.accepted.resize(kept);
  rec.log_q.resize(kept);
  rec.log_p.resize(kept);

  FieldBatch current(geo, 1);
  FieldBatch proposal(geo, 1);
  double cur_log_q = 0.0, cur_log_p = 0.0;
  bool have_state = false;

  for (long i = 0; i < steps; ++i) {
    const double prop_log_q = source.next(proposal);
    const double prop_log_p = target(proposal.sample(0));
    const double u = accept_rng.uniform();

    bool accept;
    if (!std::isfinite(prop_log_q) || std::isnan(prop_log_p) ||
        prop_log_p == std::numeric_limits<double>::infinity()) {
      ++rec.invalid_proposals;
      accept = false;
    } else if (!have_state) {
      accept = true;  // chain starts at the first proposal
    } else {
      // log rho = (log q_prev - log p_prev) + (log p_new - log q_new)
      const double log_rho =
          (cur_log_q - cur_log_p) + (prop_log_p - prop_log_q);
      accept = log_rho >= 0.0 || std::log(u) < log_rho;
    }

    if (accept) {
      std::memcpy(current.values.data(), proposal.values.data(),
                  current.values.size() * sizeof(double));
      cur_log_q = prop_log_q;
      cur_log_p = prop_log_p;
      have_state = true;
    }
    if (!have_state) {
      // Pathological start: every proposal so far was invalid. Keep zeros.
      cur_log_q = prop_log_q;
      cur_log_p = prop_log_p;
    }

    if (i >= burn_in) {
      const long j = i - burn_in;
      std::memcpy(rec.samples.sample(static_cast<int>(j)).data(),
                  current.values.data(),
                  current.values.size() * sizeof(double));
      rec.accepted[j] = accept ? 1 : 0;
      rec.log_q[j] = cur_log_q;
      rec.log_p[j] = cur_log_p;
    }
  }
  return rec;
}

}  // namespace lflow
