#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lflow/tensor.hpp"

namespace lflow::grad {

// Handle to one output of a tape node. Most ops produce a single value;
// sin_cos produces two (slot 0 = sine, slot 1 = cosine).
struct ValueRef {
  int node = -1;
  int slot = 0;
  bool valid() const { return node >= 0; }
};

// Reverse-mode differentiation over a fixed program. A Tape is built once per
// model/loss combination and then re-run: leaves get fresh values, forward()
// recomputes every node in place (no allocation on the steady-state path) and
// backward() accumulates exact gradients of the discretised computation into
// the parameter leaves. Gradient accumulation order is fixed, so single-worker
// runs are bit-reproducible.
class Tape {
 public:
  using IndexTable = std::shared_ptr<const std::vector<int>>;
  using WeightTable = std::shared_ptr<const std::vector<double>>;

  // Leaves. Inputs are re-bound between runs; params are bound by name from a
  // ParameterSet.
  ValueRef input(std::vector<int> shape, std::string name = "");
  ValueRef param(const std::string& name, std::vector<int> shape);

  // Elementwise (shapes must match exactly).
  ValueRef add(ValueRef a, ValueRef b);
  ValueRef sub(ValueRef a, ValueRef b);
  ValueRef mul(ValueRef a, ValueRef b);
  ValueRef scale(ValueRef a, double c);
  ValueRef add_scaled(ValueRef a, ValueRef b, double c);  // a + c * b
  std::pair<ValueRef, ValueRef> sin_cos(ValueRef a);
  ValueRef exp(ValueRef a);
  ValueRef tanh(ValueRef a);
  ValueRef leaky_relu(ValueRef a, double negative_slope);

  // Structure ops. Site-indexed tensors carry the lattice side through the
  // op attributes; the batch axis is always trailing.
  ValueRef outer_scale(ValueRef field, ValueRef freqs);  // (D,B)x(F)->(F,D,B)
  ValueRef slice_axis0(ValueRef a, int index);           // (N,rest)->(rest)
  ValueRef gather_last(ValueRef a, IndexTable idx);      // (...,S)->(...,|idx|)
  ValueRef pick_last0(ValueRef a);                       // (lead,D)->(lead)
  ValueRef contract_first(ValueRef a, ValueRef w);       // (F,B)x(F)->(B)
  ValueRef circ_corr(ValueRef feat, ValueRef ker, int side);  // ->(D,B)
  ValueRef permute_sites(ValueRef a, IndexTable perm);   // out[x]=in[perm[x]]
  ValueRef scale_sites(ValueRef a, WeightTable w);       // per-site constant
  ValueRef conv3x3(ValueRef in, ValueRef w, int side);   // circular padding
  ValueRef bias_channels(ValueRef a, ValueRef bias);     // (C,D,B)+(C)

  // Reductions.
  ValueRef sum_sites(ValueRef a);  // (...,D,B)->(...,B)
  ValueRef mean_vec(ValueRef a);   // (B)->scalar

  // Program control.
  void set_loss(ValueRef v);
  void bind_input(ValueRef in, const Tensor& v);
  void bind_input(ValueRef in, std::span<const double> v);
  void bind_params(const ParameterSet& ps);
  double forward();
  void backward();

  const Tensor& value(ValueRef v) const;
  const Tensor& grad(ValueRef v) const;
  GradientRecord gradients() const;  // named param grads + last loss

  std::size_t node_count() const { return nodes_.size(); }
  // When enabled (default), reduction outputs are checked and a non-finite
  // value raises NumericError naming the primitive that produced it.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  enum class Op {
    kInput,
    kParam,
    kAdd,
    kSub,
    kMul,
    kScale,
    kAddScaled,
    kSinCos,
    kExp,
    kTanh,
    kLeakyRelu,
    kOuterScale,
    kSliceAxis0,
    kGatherLast,
    kPickLast0,
    kContractFirst,
    kCircCorr,
    kPermuteSites,
    kScaleSites,
    kConv3x3,
    kBiasChannels,
    kSumSites,
    kMeanVec,
  };
  static const char* op_name(Op op);

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    int i0 = 0;
    double c0 = 0.0;
    IndexTable itab;
    WeightTable wtab;
    Tensor val;
    Tensor val2;   // second output (sin_cos)
    Tensor grad;
    Tensor grad2;
    bool needs_grad = false;
    std::string name;
  };

  int push(Node n);
  const Tensor& val_of(ValueRef v) const;
  Tensor& grad_of(ValueRef v);
  ValueRef unary(Op op, ValueRef a, double c0 = 0.0);
  void check_built(ValueRef v) const;
  void eval_node(int i);
  void back_node(int i);
  void ensure_finite(int i);

  std::vector<Node> nodes_;
  ValueRef loss_;
  double loss_value_ = 0.0;
  bool finalized_ = false;
  bool check_finite_ = true;
  // Site index tables shared by conv ops, keyed by lattice side.
  std::vector<std::pair<int, std::vector<int>>> corr_tables_;
  std::vector<std::pair<int, std::vector<int>>> conv_tables_;
  const std::vector<int>& corr_table(int side);
  const std::vector<int>& conv_table(int side);
};

// Binds params, runs forward and backward, and collects named gradients.
GradientRecord value_and_grad(Tape& program, const ParameterSet& params);

}  // namespace lflow::grad
