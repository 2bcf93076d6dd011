#pragma once

#include <functional>

#include "lflow/model.hpp"

namespace lflow {

// Output of an independence-sampler chain. A rejected step repeats the
// previous configuration exactly.
struct ChainRecord {
  FieldBatch samples;
  std::vector<std::uint8_t> accepted;
  std::vector<double> log_q;  // proposal density of the chain state
  std::vector<double> log_p;  // unnormalised target of the chain state
  long invalid_proposals = 0;  // proposals rejected for non-finite logs

  double acceptance_rate() const;
};

double acceptance_rate(const ChainRecord& record);

// Source of i.i.d. proposals with exact proposal log-density. Implementations
// may generate ahead in batches; consumers see one proposal at a time.
class ProposalSource {
 public:
  virtual ~ProposalSource() = default;
  virtual const LatticeGeometry& geometry() const = 0;
  // Fills `field` (a single-sample batch) and returns the proposal log q.
  virtual double next(FieldBatch& field) = 0;
};

// Flow-backed proposals, integrated in chunks so the ODE solves amortise:
// proposals are i.i.d., so chunking cannot change the chain.
class FlowProposalSource final : public ProposalSource {
 public:
  FlowProposalSource(const FlowModel& model, std::uint64_t seed,
                     int chunk_size = 100);
  const LatticeGeometry& geometry() const override;
  double next(FieldBatch& field) override;

 private:
  void refill();
  const FlowModel& model_;
  Rng rng_;
  int chunk_size_;
  FieldBatch chunk_;
  std::vector<double> chunk_log_q_;
  int cursor_ = 0;
};

using TargetLogDensity = std::function<double(std::span<const double>)>;

// Independence Metropolis-Hastings: propose from `source`, accept with
// probability min(1, [q(prev) p(new)] / [p(prev) q(new)]), all in log space.
// The first state is the first proposal, accepted unconditionally.
ChainRecord mh_chain(ProposalSource& source, const TargetLogDensity& target,
                     long steps, std::uint64_t seed, int burn_in = 0);

}  // namespace lflow
