#include "lflow/tape.hpp"

#include <cmath>
#include <cstring>

namespace lflow::grad {

namespace {

inline void axpy(double* dst, const double* src, double c, int n) {
  for (int i = 0; i < n; ++i) dst[i] += c * src[i];
}

inline double dot(const double* a, const double* b, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScaled: return "add_scaled";
    case Op::kSinCos: return "sin_cos";
    case Op::kExp: return "exp";
    case Op::kTanh: return "tanh";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kOuterScale: return "outer_scale";
    case Op::kSliceAxis0: return "slice_axis0";
    case Op::kGatherLast: return "gather_last";
    case Op::kPickLast0: return "pick_last0";
    case Op::kContractFirst: return "contract_first";
    case Op::kCircCorr: return "circ_corr";
    case Op::kPermuteSites: return "permute_sites";
    case Op::kScaleSites: return "scale_sites";
    case Op::kConv3x3: return "conv3x3";
    case Op::kBiasChannels: return "bias_channels";
    case Op::kSumSites: return "sum_sites";
    case Op::kMeanVec: return "mean_vec";
  }
  return "?";
}

int Tape::push(Node n) {
  if (finalized_) {
    throw ValidationError("tape already finalized; cannot add nodes");
  }
  if (n.op != Op::kInput && n.op != Op::kParam) {
    n.needs_grad = (n.a >= 0 && nodes_[n.a].needs_grad) ||
                   (n.b >= 0 && nodes_[n.b].needs_grad);
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tensor& Tape::val_of(ValueRef v) const {
  const Node& n = nodes_[v.node];
  return v.slot == 0 ? n.val : n.val2;
}

Tensor& Tape::grad_of(ValueRef v) {
  Node& n = nodes_[v.node];
  return v.slot == 0 ? n.grad : n.grad2;
}

void Tape::check_built(ValueRef v) const {
  if (v.node < 0 || v.node >= static_cast<int>(nodes_.size())) {
    throw ValidationError("value reference into foreign or empty tape");
  }
}

ValueRef Tape::input(std::vector<int> shape, std::string name) {
  Node n;
  n.op = Op::kInput;
  n.val = Tensor(std::move(shape));
  n.name = std::move(name);
  n.needs_grad = false;
  return {push(std::move(n)), 0};
}

ValueRef Tape::param(const std::string& name, std::vector<int> shape) {
  for (const auto& node : nodes_) {
    if (node.op == Op::kParam && node.name == name) {
      throw ValidationError("duplicate tape parameter: " + name);
    }
  }
  Node n;
  n.op = Op::kParam;
  n.val = Tensor(std::move(shape));
  n.name = name;
  n.needs_grad = true;
  return {push(std::move(n)), 0};
}

ValueRef Tape::unary(Op op, ValueRef a, double c0) {
  check_built(a);
  Node n;
  n.op = op;
  n.a = a.node;
  n.i0 = a.slot;
  n.c0 = c0;
  n.val = Tensor(val_of(a).shape);
  return {push(std::move(n)), 0};
}

ValueRef Tape::add(ValueRef a, ValueRef b) {
  check_built(a);
  check_built(b);
  if (!same_shape(val_of(a), val_of(b))) {
    throw ValidationError("add: shape mismatch");
  }
  Node n;
  n.op = Op::kAdd;
  n.a = a.node;
  n.b = b.node;
  n.i0 = a.slot | (b.slot << 1);
  n.val = Tensor(val_of(a).shape);
  return {push(std::move(n)), 0};
}

ValueRef Tape::sub(ValueRef a, ValueRef b) {
  auto r = add(a, b);
  nodes_[r.node].op = Op::kSub;
  return r;
}

ValueRef Tape::mul(ValueRef a, ValueRef b) {
  auto r = add(a, b);
  nodes_[r.node].op = Op::kMul;
  return r;
}

ValueRef Tape::add_scaled(ValueRef a, ValueRef b, double c) {
  auto r = add(a, b);
  nodes_[r.node].op = Op::kAddScaled;
  nodes_[r.node].c0 = c;
  return r;
}

ValueRef Tape::scale(ValueRef a, double c) {
  return unary(Op::kScale, a, c);
}

std::pair<ValueRef, ValueRef> Tape::sin_cos(ValueRef a) {
  check_built(a);
  Node n;
  n.op = Op::kSinCos;
  n.a = a.node;
  n.i0 = a.slot;
  n.val = Tensor(val_of(a).shape);
  n.val2 = Tensor(val_of(a).shape);
  int id = push(std::move(n));
  return {{id, 0}, {id, 1}};
}

ValueRef Tape::exp(ValueRef a) { return unary(Op::kExp, a); }
ValueRef Tape::tanh(ValueRef a) { return unary(Op::kTanh, a); }
ValueRef Tape::leaky_relu(ValueRef a, double negative_slope) {
  return unary(Op::kLeakyRelu, a, negative_slope);
}

ValueRef Tape::outer_scale(ValueRef field, ValueRef freqs) {
  check_built(field);
  check_built(freqs);
  const Tensor& fv = val_of(field);
  const Tensor& wv = val_of(freqs);
  if (fv.rank() != 2 || wv.rank() != 1) {
    throw ValidationError("outer_scale: expected (D,B) field and (F) freqs");
  }
  Node n;
  n.op = Op::kOuterScale;
  n.a = field.node;
  n.b = freqs.node;
  n.i0 = field.slot | (freqs.slot << 1);
  n.val = Tensor({wv.dim(0), fv.dim(0), fv.dim(1)});
  return {push(std::move(n)), 0};
}

ValueRef Tape::slice_axis0(ValueRef a, int index) {
  check_built(a);
  const Tensor& av = val_of(a);
  if (av.rank() < 2 || index < 0 || index >= av.dim(0)) {
    throw ValidationError("slice_axis0: index out of range");
  }
  Node n;
  n.op = Op::kSliceAxis0;
  n.a = a.node;
  n.i0 = a.slot;
  n.c0 = index;
  n.val = Tensor(std::vector<int>(av.shape.begin() + 1, av.shape.end()));
  return {push(std::move(n)), 0};
}

ValueRef Tape::gather_last(ValueRef a, IndexTable idx) {
  check_built(a);
  const Tensor& av = val_of(a);
  const int src_dim = av.dim(-1);
  for (int j : *idx) {
    if (j < 0 || j >= src_dim) {
      throw ValidationError("gather_last: index out of range");
    }
  }
  Node n;
  n.op = Op::kGatherLast;
  n.a = a.node;
  n.i0 = a.slot;
  n.itab = std::move(idx);
  auto shape = av.shape;
  shape.back() = static_cast<int>(n.itab->size());
  n.val = Tensor(std::move(shape));
  return {push(std::move(n)), 0};
}

ValueRef Tape::pick_last0(ValueRef a) {
  check_built(a);
  const Tensor& av = val_of(a);
  if (av.rank() < 2) throw ValidationError("pick_last0: rank must be >= 2");
  Node n;
  n.op = Op::kPickLast0;
  n.a = a.node;
  n.i0 = a.slot;
  n.val = Tensor(std::vector<int>(av.shape.begin(), av.shape.end() - 1));
  return {push(std::move(n)), 0};
}

ValueRef Tape::contract_first(ValueRef a, ValueRef w) {
  check_built(a);
  check_built(w);
  const Tensor& av = val_of(a);
  const Tensor& wv = val_of(w);
  if (av.rank() != 2 || wv.rank() != 1 || av.dim(0) != wv.dim(0)) {
    throw ValidationError("contract_first: expected (F,B) and (F)");
  }
  Node n;
  n.op = Op::kContractFirst;
  n.a = a.node;
  n.b = w.node;
  n.i0 = a.slot | (w.slot << 1);
  n.val = Tensor({av.dim(1)});
  return {push(std::move(n)), 0};
}

ValueRef Tape::circ_corr(ValueRef feat, ValueRef ker, int side) {
  check_built(feat);
  check_built(ker);
  const Tensor& fv = val_of(feat);
  const Tensor& kv = val_of(ker);
  const int sites = side * side;
  if (fv.rank() != 3 || kv.rank() != 2 || fv.dim(0) != kv.dim(0) ||
      fv.dim(1) != sites || kv.dim(1) != sites) {
    throw ValidationError("circ_corr: expected (F,D,B) features and (F,D) kernel");
  }
  corr_table(side);  // build now so forward never allocates
  Node n;
  n.op = Op::kCircCorr;
  n.a = feat.node;
  n.b = ker.node;
  n.i0 = feat.slot | (ker.slot << 1);
  n.c0 = side;
  n.val = Tensor({sites, fv.dim(2)});
  return {push(std::move(n)), 0};
}

ValueRef Tape::permute_sites(ValueRef a, IndexTable perm) {
  check_built(a);
  const Tensor& av = val_of(a);
  if (av.rank() != 2 || static_cast<int>(perm->size()) != av.dim(0)) {
    throw ValidationError("permute_sites: permutation size mismatch");
  }
  Node n;
  n.op = Op::kPermuteSites;
  n.a = a.node;
  n.i0 = a.slot;
  n.itab = std::move(perm);
  n.val = Tensor(av.shape);
  return {push(std::move(n)), 0};
}

ValueRef Tape::scale_sites(ValueRef a, WeightTable w) {
  check_built(a);
  const Tensor& av = val_of(a);
  if (av.rank() < 2 || static_cast<int>(w->size()) != av.dim(-2)) {
    throw ValidationError("scale_sites: weight size mismatch");
  }
  Node n;
  n.op = Op::kScaleSites;
  n.a = a.node;
  n.i0 = a.slot;
  n.wtab = std::move(w);
  n.val = Tensor(av.shape);
  return {push(std::move(n)), 0};
}

ValueRef Tape::conv3x3(ValueRef in, ValueRef w, int side) {
  check_built(in);
  check_built(w);
  const Tensor& iv = val_of(in);
  const Tensor& wv = val_of(w);
  const int sites = side * side;
  const int ci = iv.rank() == 3 ? iv.dim(0) : 1;
  const int d = iv.rank() == 3 ? iv.dim(1) : iv.dim(0);
  if (wv.rank() != 4 || wv.dim(1) != ci || wv.dim(2) != 3 || wv.dim(3) != 3 ||
      d != sites) {
    throw ValidationError("conv3x3: weight/input shape mismatch");
  }
  conv_table(side);
  Node n;
  n.op = Op::kConv3x3;
  n.a = in.node;
  n.b = w.node;
  n.i0 = in.slot | (w.slot << 1);
  n.c0 = side;
  n.val = Tensor({wv.dim(0), sites, iv.dim(-1)});
  return {push(std::move(n)), 0};
}

ValueRef Tape::bias_channels(ValueRef a, ValueRef bias) {
  check_built(a);
  check_built(bias);
  const Tensor& av = val_of(a);
  const Tensor& bv = val_of(bias);
  if (av.rank() != 3 || bv.rank() != 1 || av.dim(0) != bv.dim(0)) {
    throw ValidationError("bias_channels: expected (C,D,B) and (C)");
  }
  Node n;
  n.op = Op::kBiasChannels;
  n.a = a.node;
  n.b = bias.node;
  n.i0 = a.slot | (bias.slot << 1);
  n.val = Tensor(av.shape);
  return {push(std::move(n)), 0};
}

ValueRef Tape::sum_sites(ValueRef a) {
  check_built(a);
  const Tensor& av = val_of(a);
  if (av.rank() < 2) throw ValidationError("sum_sites: rank must be >= 2");
  Node n;
  n.op = Op::kSumSites;
  n.a = a.node;
  n.i0 = a.slot;
  auto shape = av.shape;
  shape.erase(shape.end() - 2);
  n.val = Tensor(std::move(shape));
  return {push(std::move(n)), 0};
}

ValueRef Tape::mean_vec(ValueRef a) {
  check_built(a);
  if (val_of(a).rank() != 1) throw ValidationError("mean_vec: expected (B)");
  Node n;
  n.op = Op::kMeanVec;
  n.a = a.node;
  n.i0 = a.slot;
  n.val = Tensor({1});
  return {push(std::move(n)), 0};
}

void Tape::set_loss(ValueRef v) {
  check_built(v);
  if (val_of(v).size() != 1) {
    throw ValidationError("loss must be a scalar");
  }
  loss_ = v;
  finalized_ = true;
  for (Node& n : nodes_) {
    if (!n.needs_grad) continue;
    n.grad = Tensor(n.val.shape);
    if (n.op == Op::kSinCos) n.grad2 = Tensor(n.val2.shape);
  }
}

void Tape::bind_input(ValueRef in, const Tensor& v) {
  check_built(in);
  Node& n = nodes_[in.node];
  if (n.op != Op::kInput) throw ValidationError("bind_input: not an input");
  if (!same_shape(n.val, v)) throw ValidationError("bind_input: shape mismatch");
  n.val.data = v.data;
}

void Tape::bind_input(ValueRef in, std::span<const double> v) {
  check_built(in);
  Node& n = nodes_[in.node];
  if (n.op != Op::kInput) throw ValidationError("bind_input: not an input");
  if (n.val.size() != v.size()) {
    throw ValidationError("bind_input: size mismatch");
  }
  std::copy(v.begin(), v.end(), n.val.data.begin());
}

void Tape::bind_params(const ParameterSet& ps) {
  for (Node& n : nodes_) {
    if (n.op != Op::kParam) continue;
    const Tensor& src = ps.at(n.name);
    if (!same_shape(n.val, src)) {
      throw ValidationError("parameter shape changed: " + n.name);
    }
    n.val.data = src.data;
  }
}

const std::vector<int>& Tape::corr_table(int side) {
  for (const auto& [s, t] : corr_tables_) {
    if (s == side) return t;
  }
  const int sites = side * side;
  std::vector<int> t(static_cast<std::size_t>(sites) * sites);
  for (int d = 0; d < sites; ++d) {
    const int d1 = d / side, d2 = d % side;
    for (int x = 0; x < sites; ++x) {
      const int x1 = x / side, x2 = x % side;
      t[static_cast<std::size_t>(d) * sites + x] =
          ((x1 + d1) % side) * side + (x2 + d2) % side;
    }
  }
  corr_tables_.emplace_back(side, std::move(t));
  return corr_tables_.back().second;
}

const std::vector<int>& Tape::conv_table(int side) {
  for (const auto& [s, t] : conv_tables_) {
    if (s == side) return t;
  }
  const int sites = side * side;
  std::vector<int> t(9u * sites);
  for (int k = 0; k < 9; ++k) {
    const int u = k / 3 - 1, v = k % 3 - 1;
    for (int x = 0; x < sites; ++x) {
      const int x1 = x / side, x2 = x % side;
      t[static_cast<std::size_t>(k) * sites + x] =
          ((x1 + u + side) % side) * side + (x2 + v + side) % side;
    }
  }
  conv_tables_.emplace_back(side, std::move(t));
  return conv_tables_.back().second;
}

void Tape::eval_node(int i) {
  Node& n = nodes_[i];
  const double* A = n.a >= 0 ? ((n.i0 & 1) ? nodes_[n.a].val2.data.data()
                                           : nodes_[n.a].val.data.data())
                             : nullptr;
  const double* B = n.b >= 0 ? ((n.i0 & 2) ? nodes_[n.b].val2.data.data()
                                           : nodes_[n.b].val.data.data())
                             : nullptr;
  double* O = n.val.data.data();
  const std::size_t sz = n.val.size();

  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      break;
    case Op::kAdd:
      for (std::size_t j = 0; j < sz; ++j) O[j] = A[j] + B[j];
      break;
    case Op::kSub:
      for (std::size_t j = 0; j < sz; ++j) O[j] = A[j] - B[j];
      break;
    case Op::kMul:
      for (std::size_t j = 0; j < sz; ++j) O[j] = A[j] * B[j];
      break;
    case Op::kScale:
      for (std::size_t j = 0; j < sz; ++j) O[j] = n.c0 * A[j];
      break;
    case Op::kAddScaled:
      for (std::size_t j = 0; j < sz; ++j) O[j] = A[j] + n.c0 * B[j];
      break;
    case Op::kSinCos: {
      double* O2 = n.val2.data.data();
      for (std::size_t j = 0; j < sz; ++j) {
#if defined(__GNUC__)
        ::sincos(A[j], &O[j], &O2[j]);
#else
        O[j] = std::sin(A[j]);
        O2[j] = std::cos(A[j]);
#endif
      }
      break;
    }
    case Op::kExp:
      for (std::size_t j = 0; j < sz; ++j) O[j] = std::exp(A[j]);
      break;
    case Op::kTanh:
      for (std::size_t j = 0; j < sz; ++j) O[j] = std::tanh(A[j]);
      break;
    case Op::kLeakyRelu:
      for (std::size_t j = 0; j < sz; ++j) {
        O[j] = A[j] >= 0.0 ? A[j] : n.c0 * A[j];
      }
      break;
    case Op::kOuterScale: {
      const int F = n.val.dim(0);
      const std::size_t inner = nodes_[n.a].val.size();
      for (int f = 0; f < F; ++f) {
        const double w = B[f];
        double* out = O + f * inner;
        for (std::size_t j = 0; j < inner; ++j) out[j] = w * A[j];
      }
      break;
    }
    case Op::kSliceAxis0:
      std::memcpy(O, A + static_cast<std::size_t>(n.c0) * sz,
                  sz * sizeof(double));
      break;
    case Op::kGatherLast: {
      const auto& idx = *n.itab;
      const int D = static_cast<int>(idx.size());
      const int S = nodes_[n.a].val.dim(-1);
      const std::size_t lead = sz / D;
      for (std::size_t l = 0; l < lead; ++l) {
        const double* src = A + l * S;
        double* out = O + l * D;
        for (int j = 0; j < D; ++j) out[j] = src[idx[j]];
      }
      break;
    }
    case Op::kPickLast0: {
      const int D = nodes_[n.a].val.dim(-1);
      for (std::size_t l = 0; l < sz; ++l) O[l] = A[l * D];
      break;
    }
    case Op::kContractFirst: {
      const int F = nodes_[n.a].val.dim(0);
      const int Bn = static_cast<int>(sz);
      std::memset(O, 0, sz * sizeof(double));
      for (int f = 0; f < F; ++f) axpy(O, A + f * Bn, B[f], Bn);
      break;
    }
    case Op::kCircCorr: {
      const int side = static_cast<int>(n.c0);
      const int D = side * side;
      const int Bs = n.val.dim(1);
      const int F = nodes_[n.b].val.dim(0);
      const auto& tidx = corr_table(side);
      std::memset(O, 0, sz * sizeof(double));
      for (int f = 0; f < F; ++f) {
        const double* featf = A + static_cast<std::size_t>(f) * D * Bs;
        const double* kerf = B + static_cast<std::size_t>(f) * D;
        for (int d = 0; d < D; ++d) {
          const double k = kerf[d];
          if (k == 0.0) continue;
          const int* t = tidx.data() + static_cast<std::size_t>(d) * D;
          for (int x = 0; x < D; ++x) {
            axpy(O + static_cast<std::size_t>(x) * Bs,
                 featf + static_cast<std::size_t>(t[x]) * Bs, k, Bs);
          }
        }
      }
      break;
    }
    case Op::kPermuteSites: {
      const auto& perm = *n.itab;
      const int D = n.val.dim(0);
      const int Bs = n.val.dim(1);
      for (int x = 0; x < D; ++x) {
        std::memcpy(O + static_cast<std::size_t>(x) * Bs,
                    A + static_cast<std::size_t>(perm[x]) * Bs,
                    static_cast<std::size_t>(Bs) * sizeof(double));
      }
      break;
    }
    case Op::kScaleSites: {
      const auto& w = *n.wtab;
      const int D = n.val.dim(-2);
      const int Bs = n.val.dim(-1);
      const std::size_t lead = sz / (static_cast<std::size_t>(D) * Bs);
      for (std::size_t l = 0; l < lead; ++l) {
        for (int x = 0; x < D; ++x) {
          const double c = w[x];
          const std::size_t off = (l * D + x) * Bs;
          for (int b = 0; b < Bs; ++b) O[off + b] = c * A[off + b];
        }
      }
      break;
    }
    case Op::kConv3x3: {
      const int side = static_cast<int>(n.c0);
      const int D = side * side;
      const int Bs = n.val.dim(2);
      const int Co = n.val.dim(0);
      const int Ci = nodes_[n.b].val.dim(1);
      const auto& ctab = conv_table(side);
      std::memset(O, 0, sz * sizeof(double));
      for (int co = 0; co < Co; ++co) {
        double* dst = O + static_cast<std::size_t>(co) * D * Bs;
        for (int ci = 0; ci < Ci; ++ci) {
          const double* src = A + static_cast<std::size_t>(ci) * D * Bs;
          const double* w = B + (static_cast<std::size_t>(co) * Ci + ci) * 9;
          for (int k = 0; k < 9; ++k) {
            const double wv = w[k];
            if (wv == 0.0) continue;
            const int* t = ctab.data() + static_cast<std::size_t>(k) * D;
            for (int x = 0; x < D; ++x) {
              axpy(dst + static_cast<std::size_t>(x) * Bs,
                   src + static_cast<std::size_t>(t[x]) * Bs, wv, Bs);
            }
          }
        }
      }
      break;
    }
    case Op::kBiasChannels: {
      const int C = n.val.dim(0);
      const std::size_t inner = sz / C;
      for (int c = 0; c < C; ++c) {
        const double bv = B[c];
        const std::size_t off = c * inner;
        for (std::size_t j = 0; j < inner; ++j) O[off + j] = A[off + j] + bv;
      }
      break;
    }
    case Op::kSumSites: {
      const Tensor& av = nodes_[n.a].val;
      const int D = av.dim(-2);
      const int Bs = av.dim(-1);
      const std::size_t lead = sz / Bs;
      for (std::size_t l = 0; l < lead; ++l) {
        double* out = O + l * Bs;
        const double* src = A + l * static_cast<std::size_t>(D) * Bs;
        std::memcpy(out, src, static_cast<std::size_t>(Bs) * sizeof(double));
        for (int x = 1; x < D; ++x) {
          const double* row = src + static_cast<std::size_t>(x) * Bs;
          for (int b = 0; b < Bs; ++b) out[b] += row[b];
        }
      }
      break;
    }
    case Op::kMeanVec: {
      const std::size_t count = nodes_[n.a].val.size();
      double acc = 0.0;
      for (std::size_t j = 0; j < count; ++j) acc += A[j];
      O[0] = acc / static_cast<double>(count);
      break;
    }
  }

  if (check_finite_ && (n.op == Op::kSumSites || n.op == Op::kMeanVec ||
                        n.op == Op::kContractFirst)) {
    for (std::size_t j = 0; j < sz; ++j) {
      if (!std::isfinite(O[j])) {
        ensure_finite(i);
      }
    }
  }
}

void Tape::ensure_finite(int upto) {
  // Locate the first node that produced a non-finite value so the error
  // names the offending primitive rather than a downstream reduction.
  for (int i = 0; i <= upto; ++i) {
    for (const Tensor* t : {&nodes_[i].val, &nodes_[i].val2}) {
      for (double v : t->data) {
        if (!std::isfinite(v)) {
          throw NumericError(std::string("non-finite value produced by '") +
                             op_name(nodes_[i].op) + "' (node " +
                             std::to_string(i) + ")");
        }
      }
    }
  }
}

double Tape::forward() {
  if (!finalized_) throw ValidationError("tape has no loss node");
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) eval_node(i);
  loss_value_ = val_of(loss_)[0];
  if (!std::isfinite(loss_value_)) {
    ensure_finite(static_cast<int>(nodes_.size()) - 1);
  }
  return loss_value_;
}

void Tape::backward() {
  if (!finalized_) throw ValidationError("tape has no loss node");
  for (Node& n : nodes_) {
    n.grad.fill(0.0);
    n.grad2.fill(0.0);
  }
  if (!nodes_[loss_.node].needs_grad) return;  // loss constant in params
  grad_of(loss_)[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[i].needs_grad) back_node(i);
  }
}

void Tape::back_node(int i) {
  Node& n = nodes_[i];
  const bool ga_on = n.a >= 0 && nodes_[n.a].needs_grad;
  const bool gb_on = n.b >= 0 && nodes_[n.b].needs_grad;
  if (!ga_on && !gb_on) return;

  const double* A = n.a >= 0 ? ((n.i0 & 1) ? nodes_[n.a].val2.data.data()
                                           : nodes_[n.a].val.data.data())
                             : nullptr;
  const double* B = n.b >= 0 ? ((n.i0 & 2) ? nodes_[n.b].val2.data.data()
                                           : nodes_[n.b].val.data.data())
                             : nullptr;
  double* GA = ga_on ? ((n.i0 & 1) ? nodes_[n.a].grad2.data.data()
                                   : nodes_[n.a].grad.data.data())
                     : nullptr;
  double* GB = gb_on ? ((n.i0 & 2) ? nodes_[n.b].grad2.data.data()
                                   : nodes_[n.b].grad.data.data())
                     : nullptr;
  const double* G = n.grad.data.data();
  const std::size_t sz = n.val.size();

  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      break;
    case Op::kAdd:
      if (ga_on) axpy(GA, G, 1.0, static_cast<int>(sz));
      if (gb_on) axpy(GB, G, 1.0, static_cast<int>(sz));
      break;
    case Op::kSub:
      if (ga_on) axpy(GA, G, 1.0, static_cast<int>(sz));
      if (gb_on) axpy(GB, G, -1.0, static_cast<int>(sz));
      break;
    case Op::kMul:
      if (ga_on) {
        for (std::size_t j = 0; j < sz; ++j) GA[j] += G[j] * B[j];
      }
      if (gb_on) {
        for (std::size_t j = 0; j < sz; ++j) GB[j] += G[j] * A[j];
      }
      break;
    case Op::kScale:
      if (ga_on) axpy(GA, G, n.c0, static_cast<int>(sz));
      break;
    case Op::kAddScaled:
      if (ga_on) axpy(GA, G, 1.0, static_cast<int>(sz));
      if (gb_on) axpy(GB, G, n.c0, static_cast<int>(sz));
      break;
    case Op::kSinCos: {
      if (!ga_on) break;
      const double* G2 = n.grad2.data.data();
      const double* S = n.val.data.data();
      const double* C = n.val2.data.data();
      for (std::size_t j = 0; j < sz; ++j) {
        GA[j] += G[j] * C[j] - G2[j] * S[j];
      }
      break;
    }
    case Op::kExp:
      if (ga_on) {
        const double* Y = n.val.data.data();
        for (std::size_t j = 0; j < sz; ++j) GA[j] += G[j] * Y[j];
      }
      break;
    case Op::kTanh:
      if (ga_on) {
        const double* Y = n.val.data.data();
        for (std::size_t j = 0; j < sz; ++j) {
          GA[j] += G[j] * (1.0 - Y[j] * Y[j]);
        }
      }
      break;
    case Op::kLeakyRelu:
      if (ga_on) {
        for (std::size_t j = 0; j < sz; ++j) {
          GA[j] += G[j] * (A[j] >= 0.0 ? 1.0 : n.c0);
        }
      }
      break;
    case Op::kOuterScale: {
      const int F = n.val.dim(0);
      const std::size_t inner = nodes_[n.a].val.size();
      for (int f = 0; f < F; ++f) {
        const double* g = G + f * inner;
        if (ga_on) axpy(GA, g, B[f], static_cast<int>(inner));
        if (gb_on) GB[f] += dot(A, g, static_cast<int>(inner));
      }
      break;
    }
    case Op::kSliceAxis0:
      if (ga_on) {
        axpy(GA + static_cast<std::size_t>(n.c0) * sz, G, 1.0,
             static_cast<int>(sz));
      }
      break;
    case Op::kGatherLast: {
      if (!ga_on) break;
      const auto& idx = *n.itab;
      const int D = static_cast<int>(idx.size());
      const int S = nodes_[n.a].val.dim(-1);
      const std::size_t lead = sz / D;
      for (std::size_t l = 0; l < lead; ++l) {
        double* ga = GA + l * S;
        const double* g = G + l * D;
        for (int j = 0; j < D; ++j) ga[idx[j]] += g[j];
      }
      break;
    }
    case Op::kPickLast0: {
      if (!ga_on) break;
      const int D = nodes_[n.a].val.dim(-1);
      for (std::size_t l = 0; l < sz; ++l) GA[l * D] += G[l];
      break;
    }
    case Op::kContractFirst: {
      const int F = nodes_[n.a].val.dim(0);
      const int Bn = static_cast<int>(sz);
      for (int f = 0; f < F; ++f) {
        if (ga_on) axpy(GA + f * Bn, G, B[f], Bn);
        if (gb_on) GB[f] += dot(A + f * Bn, G, Bn);
      }
      break;
    }
    case Op::kCircCorr: {
      const int side = static_cast<int>(n.c0);
      const int D = side * side;
      const int Bs = n.val.dim(1);
      const int F = nodes_[n.b].val.dim(0);
      const auto& tidx = corr_table(side);
      for (int f = 0; f < F; ++f) {
        const std::size_t foff = static_cast<std::size_t>(f) * D * Bs;
        const double* featf = A + foff;
        const double* kerf = B + static_cast<std::size_t>(f) * D;
        double* gfeatf = ga_on ? GA + foff : nullptr;
        for (int d = 0; d < D; ++d) {
          const double k = kerf[d];
          const int* t = tidx.data() + static_cast<std::size_t>(d) * D;
          double acc = 0.0;
          for (int x = 0; x < D; ++x) {
            const double* g = G + static_cast<std::size_t>(x) * Bs;
            const std::size_t soff = static_cast<std::size_t>(t[x]) * Bs;
            if (ga_on && k != 0.0) axpy(gfeatf + soff, g, k, Bs);
            if (gb_on) acc += dot(featf + soff, g, Bs);
          }
          if (gb_on) GB[static_cast<std::size_t>(f) * D + d] += acc;
        }
      }
      break;
    }
    case Op::kPermuteSites: {
      if (!ga_on) break;
      const auto& perm = *n.itab;
      const int D = n.val.dim(0);
      const int Bs = n.val.dim(1);
      for (int x = 0; x < D; ++x) {
        axpy(GA + static_cast<std::size_t>(perm[x]) * Bs,
             G + static_cast<std::size_t>(x) * Bs, 1.0, Bs);
      }
      break;
    }
    case Op::kScaleSites: {
      if (!ga_on) break;
      const auto& w = *n.wtab;
      const int D = n.val.dim(-2);
      const int Bs = n.val.dim(-1);
      const std::size_t lead = sz / (static_cast<std::size_t>(D) * Bs);
      for (std::size_t l = 0; l < lead; ++l) {
        for (int x = 0; x < D; ++x) {
          const double c = w[x];
          const std::size_t off = (l * D + x) * Bs;
          for (int b = 0; b < Bs; ++b) GA[off + b] += c * G[off + b];
        }
      }
      break;
    }
    case Op::kConv3x3: {
      const int side = static_cast<int>(n.c0);
      const int D = side * side;
      const int Bs = n.val.dim(2);
      const int Co = n.val.dim(0);
      const int Ci = nodes_[n.b].val.dim(1);
      const auto& ctab = conv_table(side);
      for (int co = 0; co < Co; ++co) {
        const double* g = G + static_cast<std::size_t>(co) * D * Bs;
        for (int ci = 0; ci < Ci; ++ci) {
          const std::size_t coff = static_cast<std::size_t>(ci) * D * Bs;
          const double* src = A + coff;
          const std::size_t woff = (static_cast<std::size_t>(co) * Ci + ci) * 9;
          for (int k = 0; k < 9; ++k) {
            const double wv = B[woff + k];
            const int* t = ctab.data() + static_cast<std::size_t>(k) * D;
            double acc = 0.0;
            for (int x = 0; x < D; ++x) {
              const double* gx = g + static_cast<std::size_t>(x) * Bs;
              const std::size_t soff = static_cast<std::size_t>(t[x]) * Bs;
              if (ga_on && wv != 0.0) axpy(GA + coff + soff, gx, wv, Bs);
              if (gb_on) acc += dot(src + soff, gx, Bs);
            }
            if (gb_on) GB[woff + k] += acc;
          }
        }
      }
      break;
    }
    case Op::kBiasChannels: {
      const int C = n.val.dim(0);
      const std::size_t inner = sz / C;
      for (int c = 0; c < C; ++c) {
        const double* g = G + c * inner;
        if (ga_on) axpy(GA + c * inner, g, 1.0, static_cast<int>(inner));
        if (gb_on) {
          double acc = 0.0;
          for (std::size_t j = 0; j < inner; ++j) acc += g[j];
          GB[c] += acc;
        }
      }
      break;
    }
    case Op::kSumSites: {
      if (!ga_on) break;
      const Tensor& av = nodes_[n.a].val;
      const int D = av.dim(-2);
      const int Bs = av.dim(-1);
      const std::size_t lead = sz / Bs;
      for (std::size_t l = 0; l < lead; ++l) {
        const double* g = G + l * Bs;
        double* ga = GA + l * static_cast<std::size_t>(D) * Bs;
        for (int x = 0; x < D; ++x) {
          axpy(ga + static_cast<std::size_t>(x) * Bs, g, 1.0, Bs);
        }
      }
      break;
    }
    case Op::kMeanVec: {
      if (!ga_on) break;
      const std::size_t count = nodes_[n.a].val.size();
      const double g = G[0] / static_cast<double>(count);
      for (std::size_t j = 0; j < count; ++j) GA[j] += g;
      break;
    }
  }
}

const Tensor& Tape::value(ValueRef v) const {
  check_built(v);
  return val_of(v);
}

const Tensor& Tape::grad(ValueRef v) const {
  check_built(v);
  const Node& n = nodes_[v.node];
  if (!n.needs_grad) {
    throw ValidationError("node does not track gradients");
  }
  return v.slot == 0 ? n.grad : n.grad2;
}

GradientRecord Tape::gradients() const {
  GradientRecord rec;
  rec.loss = loss_value_;
  for (const Node& n : nodes_) {
    if (n.op == Op::kParam) rec.grads.emplace_back(n.name, n.grad);
  }
  return rec;
}

GradientRecord value_and_grad(Tape& program, const ParameterSet& params) {
  program.bind_params(params);
  program.forward();
  program.backward();
  return program.gradients();
}

}  // namespace lflow::grad
