#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelprop/common.hpp"
#include "labelprop/embeddings.hpp"
#include "labelprop/linalg.hpp"
#include "labelprop/param_store.hpp"
#include "labelprop/typed_graph.hpp"
#include "labelprop/vocab.hpp"

namespace labelprop {

// ---------------------------------------------------------------------------
// Gated graph propagation model over a typed label graph.
//
// Forward path per instance x:
//   h_v(0)   = tanh(W2 tanh(W1 [x; w_v] + b1) + b2)          (input net)
//   a_v(t)   = sum over senders u of block(v<-u)^T h_u(t-1)
//   u_v(t)   = tanh(a_v(t))
//   z, r     = sigmoid gates;  cand = tanh(Wh u + Uh (r*h) + bh)
//   h_v(t)   = (1-z)*h_v(t-1) + z*cand
//   p_v(t)   = sigmoid(output net(h_v(t)))  for every t = 0..T
//
// block(v<-u) for an edge of type k is a d_hid x d_hid matrix whose (i,j)
// entry is the bilinear form w_v^T M_k[i][j] w_u (receiver embedding on the
// left). With tie_symmetric, M_k[j][i] is shared as the transpose of
// M_k[i][j] and diagonal slots are used in symmetrized form, which makes
// block(u<-v) exactly block(v<-u)^T.
// ---------------------------------------------------------------------------

struct ModelConfig {
  int d_feat = 0;
  int d_emb = 0;
  int d_hid = 5;
  int T = 5;
  int fi_hidden = 16;
  int fo_hidden = 0;      // 0 = linear output net
  int relation_rank = 0;  // 0 = full bilinear tensors
  bool tie_symmetric = true;

  void validate() const {
    if (d_feat < 1 || d_emb < 1) throw InvalidConfigError("d_feat and d_emb must be >= 1");
    if (d_hid < 1) throw InvalidConfigError("d_hid must be >= 1");
    if (T < 0) throw InvalidConfigError("T must be >= 0");
    if (fi_hidden < 1) throw InvalidConfigError("fi_hidden must be >= 1");
    if (fo_hidden < 0) throw InvalidConfigError("fo_hidden must be >= 0");
    if (relation_rank < 0 || relation_rank > d_emb)
      throw InvalidConfigError("relation_rank must be in [0, d_emb]");
  }

  nlohmann::json to_json() const {
    return {{"d_feat", d_feat},       {"d_emb", d_emb},
            {"d_hid", d_hid},         {"T", T},
            {"fi_hidden", fi_hidden}, {"fo_hidden", fo_hidden},
            {"relation_rank", relation_rank}, {"tie_symmetric", tie_symmetric}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_feat = j.at("d_feat").get<int>();
    c.d_emb = j.at("d_emb").get<int>();
    c.d_hid = j.at("d_hid").get<int>();
    c.T = j.at("T").get<int>();
    c.fi_hidden = j.at("fi_hidden").get<int>();
    c.fo_hidden = j.at("fo_hidden").get<int>();
    c.relation_rank = j.at("relation_rank").get<int>();
    c.tie_symmetric = j.at("tie_symmetric").get<bool>();
    c.validate();
    return c;
  }
};

inline constexpr std::array<EdgeKind, 3> kEdgeKinds = {
    EdgeKind::SuperSub, EdgeKind::Positive, EdgeKind::Negative};

inline std::string relation_tensor_name(EdgeKind k, const char* part, int i, int j) {
  return std::string("rel.") + edge_kind_name(k) + "." + part + "." + std::to_string(i) +
         "." + std::to_string(j);
}

inline std::vector<TensorSpec> model_param_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<TensorSpec> specs;
  const auto mat = [&](std::string name, int r, int c) {
    specs.push_back({std::move(name), {r, c}, InitKind::ScaledUniform});
  };
  const auto bias = [&](std::string name, int n) {
    specs.push_back({std::move(name), {n}, InitKind::Zeros});
  };

  mat("fi.W1", cfg.fi_hidden, cfg.d_feat + cfg.d_emb);
  bias("fi.b1", cfg.fi_hidden);
  mat("fi.W2", cfg.d_hid, cfg.fi_hidden);
  bias("fi.b2", cfg.d_hid);

  for (EdgeKind k : kEdgeKinds) {
    for (int i = 0; i < cfg.d_hid; ++i) {
      for (int j = cfg.tie_symmetric ? i : 0; j < cfg.d_hid; ++j) {
        if (cfg.relation_rank == 0) {
          mat(relation_tensor_name(k, "M", i, j), cfg.d_emb, cfg.d_emb);
        } else {
          mat(relation_tensor_name(k, "P", i, j), cfg.d_emb, cfg.relation_rank);
          mat(relation_tensor_name(k, "Q", i, j), cfg.d_emb, cfg.relation_rank);
        }
      }
    }
  }

  for (const char* g : {"z", "r", "h"}) {
    mat(std::string("gru.W") + g, cfg.d_hid, cfg.d_hid);
    mat(std::string("gru.U") + g, cfg.d_hid, cfg.d_hid);
    bias(std::string("gru.b") + g, cfg.d_hid);
  }

  if (cfg.fo_hidden > 0) {
    mat("fo.W1", cfg.fo_hidden, cfg.d_hid);
    bias("fo.b1", cfg.fo_hidden);
    mat("fo.W2", 1, cfg.fo_hidden);
    bias("fo.b2", 1);
  } else {
    mat("fo.W", 1, cfg.d_hid);
    bias("fo.b", 1);
  }
  return specs;
}

class Model {
 public:
  ModelConfig cfg;
  ParamStore store;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    Model m;
    m.cfg = cfg;
    m.store = init_params(model_param_specs(cfg), seed);
    m.build_slots();
    return m;
  }

  // Wraps a checkpoint store; shapes and names must match the config.
  static Model from_store(const ModelConfig& cfg, ParamStore store) {
    Model m;
    m.cfg = cfg;
    m.store = std::move(store);
    for (const auto& spec : model_param_specs(cfg)) {
      if (!m.store.has(spec.name))
        throw ParseError("checkpoint is missing parameter " + spec.name);
      if (m.store.at(spec.name).shape != spec.shape)
        throw DimensionMismatchError("checkpoint shape mismatch for " + spec.name);
    }
    m.build_slots();
    return m;
  }

  // Relation slot lookup: which stored tensor realizes block entry (i,j) of
  // edge type k, and how (direct / transposed / symmetrized diagonal).
  struct RelSlot {
    int a = -1;  // M for full rank, P for low rank
    int b = -1;  // Q for low rank
    bool transposed = false;
    bool diagonal_tied = false;
  };

  const RelSlot& rel_slot(EdgeKind k, int i, int j) const {
    return rel_slots_[static_cast<int>(k)][i * cfg.d_hid + j];
  }

  Tensor& tensor(int idx) { return store.entries()[idx]; }
  const Tensor& tensor(int idx) const { return store.entries()[idx]; }

  int tensor_index(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(store.entries().size()); ++i) {
      if (store.entries()[i].name == name) return i;
    }
    throw UnknownLabelError("parameter " + name);
  }

 private:
  void build_slots() {
    for (int ki = 0; ki < 3; ++ki) {
      rel_slots_[ki].assign(static_cast<std::size_t>(cfg.d_hid) * cfg.d_hid, {});
      const EdgeKind k = kEdgeKinds[ki];
      for (int i = 0; i < cfg.d_hid; ++i) {
        for (int j = 0; j < cfg.d_hid; ++j) {
          RelSlot slot;
          const bool mirror = cfg.tie_symmetric && i > j;
          const int si = mirror ? j : i;
          const int sj = mirror ? i : j;
          if (cfg.relation_rank == 0) {
            slot.a = tensor_index(relation_tensor_name(k, "M", si, sj));
          } else {
            slot.a = tensor_index(relation_tensor_name(k, "P", si, sj));
            slot.b = tensor_index(relation_tensor_name(k, "Q", si, sj));
          }
          slot.transposed = mirror;
          slot.diagonal_tied = cfg.tie_symmetric && i == j;
          rel_slots_[ki][i * cfg.d_hid + j] = slot;
        }
      }
    }
  }

  std::array<std::vector<RelSlot>, 3> rel_slots_;
};

// ---------------------------------------------------------------------------
// Relation blocks and the assembled propagation matrix
// ---------------------------------------------------------------------------

namespace detail {

// a^T M b, evaluated as dot(a, M b) with a fixed accumulation order.
inline double bilinear(CMatView m, const double* a, const double* b,
                       std::vector<double>& scratch) {
  scratch.resize(m.rows);
  la::matvec(m, b, scratch.data());
  return la::dot(a, scratch.data(), m.rows);
}

// (P^T a) . (Q^T b)
inline double bilinear_lowrank(CMatView p, CMatView q, const double* a, const double* b,
                               std::vector<double>& s1, std::vector<double>& s2) {
  const int r = p.cols;
  s1.assign(r, 0.0);
  s2.assign(r, 0.0);
  la::mattvec_acc(p, a, s1.data());
  la::mattvec_acc(q, b, s2.data());
  return la::dot(s1.data(), s2.data(), r);
}

}  // namespace detail

// Propagation block for one edge: entry (i,j) = w_v^T M_k[i][j] w_u with the
// receiver's embedding as the left argument.
inline Mat relation_block(const Model& model, EdgeKind kind, const double* w_v,
                          const double* w_u) {
  const int d = model.cfg.d_hid;
  Mat block(d, d);
  std::vector<double> s1, s2;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      const auto& slot = model.rel_slot(kind, i, j);
      const double* a = slot.transposed ? w_u : w_v;
      const double* b = slot.transposed ? w_v : w_u;
      double e;
      if (model.cfg.relation_rank == 0) {
        CMatView m = model.tensor(slot.a).mat();
        if (slot.diagonal_tied) {
          e = 0.5 * (detail::bilinear(m, a, b, s1) + detail::bilinear(m, b, a, s1));
        } else {
          e = detail::bilinear(m, a, b, s1);
        }
      } else {
        CMatView p = model.tensor(slot.a).mat();
        CMatView q = model.tensor(slot.b).mat();
        if (slot.diagonal_tied) {
          e = 0.5 * (detail::bilinear_lowrank(p, q, a, b, s1, s2) +
                     detail::bilinear_lowrank(p, q, b, a, s1, s2));
        } else {
          e = detail::bilinear_lowrank(p, q, a, b, s1, s2);
        }
      }
      block(i, j) = e;
    }
  }
  return block;
}

inline Mat relation_block(const Model& model, EdgeKind kind, const std::vector<double>& w_v,
                          const std::vector<double>& w_u) {
  if (static_cast<int>(w_v.size()) != model.cfg.d_emb ||
      static_cast<int>(w_u.size()) != model.cfg.d_emb)
    throw DimensionMismatchError("relation_block embedding dimension mismatch");
  return relation_block(model, kind, w_v.data(), w_u.data());
}

// Block-sparse propagation matrix: one d_hid x d_hid block per directed
// graph adjacency, nothing stored for non-adjacent pairs and no diagonal
// blocks. With zsl_mask, blocks whose receiver is seen and sender unseen are
// omitted (propagation across the seen/unseen boundary is one-way).
struct PropagationMatrix {
  struct BlockEntry {
    int receiver = 0;
    int sender = 0;
    EdgeKind kind = EdgeKind::Positive;
    bool direct = true;     // false: block was materialized as the mirror's transpose
    int mirror_index = -1;  // on direct entries: index of the tied mirror, if any
    Mat block;
  };

  int node_count = 0;
  int d_hid = 0;
  bool zsl_mask = false;
  std::vector<BlockEntry> entries;
  std::vector<std::vector<int>> incoming;  // per receiver: entry indices, sorted by sender

  std::size_t block_count() const { return entries.size(); }

  const Mat* block(int receiver, int sender) const {
    if (receiver < 0 || receiver >= node_count || sender < 0 || sender >= node_count)
      throw IndexOutOfRangeError("block index out of range");
    for (int idx : incoming[receiver]) {
      if (entries[idx].sender == sender) return &entries[idx].block;
    }
    return nullptr;
  }
};

// n_active < 0 means all vocabulary nodes; training on the seen slice passes
// n_active = vocab.seen_count() (edges touching inactive nodes are dropped).
inline PropagationMatrix assemble_propagation_matrix(const Model& model,
                                                     const TypedGraph& graph,
                                                     const EmbeddingTable& emb,
                                                     const LabelVocabulary& vocab,
                                                     bool zsl_mask, int n_active = -1) {
  if (graph.node_count() != vocab.size())
    throw DimensionMismatchError("graph/vocabulary node count mismatch");
  if (emb.size() != vocab.size())
    throw DimensionMismatchError("embedding/vocabulary size mismatch");
  if (emb.dim() != model.cfg.d_emb)
    throw DimensionMismatchError("embedding dim does not match model d_emb");
  const int n = n_active < 0 ? vocab.size() : n_active;
  if (n < 0 || n > vocab.size()) throw IndexOutOfRangeError("n_active out of range");

  PropagationMatrix A;
  A.node_count = n;
  A.d_hid = model.cfg.d_hid;
  A.zsl_mask = zsl_mask;
  A.incoming.assign(n, {});

  const int seen = vocab.seen_count();
  const auto masked = [&](int receiver, int sender) {
    return zsl_mask && receiver < seen && sender >= seen;
  };

  for (const auto& e : graph.edges()) {
    if (e.u >= n || e.v >= n) continue;
    const bool keep_primary = !masked(e.v, e.u);
    const bool keep_mirror = !masked(e.u, e.v);
    int primary_index = -1;
    if (keep_primary) {
      PropagationMatrix::BlockEntry be;
      be.receiver = e.v;
      be.sender = e.u;
      be.kind = e.kind;
      be.block = relation_block(model, e.kind, emb.data(e.v), emb.data(e.u));
      primary_index = static_cast<int>(A.entries.size());
      A.entries.push_back(std::move(be));
      A.incoming[e.v].push_back(primary_index);
    }
    if (keep_mirror) {
      PropagationMatrix::BlockEntry be;
      be.receiver = e.u;
      be.sender = e.v;
      be.kind = e.kind;
      if (model.cfg.tie_symmetric && primary_index >= 0) {
        // Tying makes the mirror the exact transpose; materialize it that way.
        be.direct = false;
        be.mirror_index = primary_index;
        be.block = A.entries[primary_index].block.transposed();
        A.entries[primary_index].mirror_index = static_cast<int>(A.entries.size());
      } else {
        be.block = relation_block(model, e.kind, emb.data(e.u), emb.data(e.v));
      }
      A.incoming[e.u].push_back(static_cast<int>(A.entries.size()));
      A.entries.push_back(std::move(be));
    }
  }

  for (auto& in : A.incoming) {
    std::sort(in.begin(), in.end(), [&](int x, int y) {
      return A.entries[x].sender < A.entries[y].sender;
    });
  }
  return A;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct BeliefState {
  int t = 0;
  Mat h;  // n x d_hid
};

struct StepTrace {
  Mat u;       // update vectors, post-tanh, in (-1,1)
  Mat z;       // update gate, in (0,1)
  Mat r;       // reset gate, in (0,1)
  Mat htilde;  // candidate state, in (-1,1)
};

struct PredictionTrace {
  int T = 0;
  int n = 0;
  Mat p;                            // (T+1) x n confidences
  std::vector<StepTrace> steps;     // size T
  std::vector<Mat> states;          // h(0..T), each n x d_hid
  Mat fi_hidden_act;                // n x fi_hidden
  std::vector<Mat> fo_hidden_act;   // per t when fo_hidden > 0, each n x fo_hidden
  std::vector<double> x;            // input copy, used by the backward pass
};

inline BeliefState initial_beliefs(const Model& model, const std::vector<double>& x,
                                   const EmbeddingTable& emb, const LabelVocabulary& vocab,
                                   int n_active = -1, Mat* hidden_out = nullptr) {
  const ModelConfig& cfg = model.cfg;
  if (static_cast<int>(x.size()) != cfg.d_feat)
    throw DimensionMismatchError("input feature dimension mismatch");
  if (emb.dim() != cfg.d_emb) throw DimensionMismatchError("embedding dim mismatch");
  if (emb.size() != vocab.size())
    throw DimensionMismatchError("embedding/vocabulary size mismatch");
  for (double v : x) require_finite(v, "input features");
  const int n = n_active < 0 ? vocab.size() : n_active;
  if (n < 0 || n > vocab.size()) throw IndexOutOfRangeError("n_active out of range");

  CMatView w1 = model.store.at("fi.W1").mat();
  const auto& b1 = model.store.at("fi.b1").value;
  CMatView w2 = model.store.at("fi.W2").mat();
  const auto& b2 = model.store.at("fi.b2").value;

  BeliefState state;
  state.t = 0;
  state.h = Mat(n, cfg.d_hid);
  if (hidden_out) *hidden_out = Mat(n, cfg.fi_hidden);

  std::vector<double> input(cfg.d_feat + cfg.d_emb);
  std::copy(x.begin(), x.end(), input.begin());
  std::vector<double> a1(cfg.fi_hidden);
  for (int v = 0; v < n; ++v) {
    std::copy(emb.vec(v).begin(), emb.vec(v).end(), input.begin() + cfg.d_feat);
    la::matvec(w1, input.data(), a1.data());
    for (int i = 0; i < cfg.fi_hidden; ++i) a1[i] = std::tanh(a1[i] + b1[i]);
    if (hidden_out) std::copy(a1.begin(), a1.end(), hidden_out->row(v));
    double* h = state.h.row(v);
    la::matvec(w2, a1.data(), h);
    for (int i = 0; i < cfg.d_hid; ++i) h[i] = std::tanh(h[i] + b2[i]);
  }
  return state;
}

// One propagation step; returns the new state and fills `trace` if given.
inline BeliefState propagate_step(const Model& model, const PropagationMatrix& A,
                                  const BeliefState& state, StepTrace* trace = nullptr) {
  const ModelConfig& cfg = model.cfg;
  const int n = state.h.rows;
  if (A.node_count != n) throw DimensionMismatchError("matrix/state node count mismatch");
  for (double v : state.h.a) require_finite(v, "belief state");

  CMatView wz = model.store.at("gru.Wz").mat();
  CMatView uz = model.store.at("gru.Uz").mat();
  const auto& bz = model.store.at("gru.bz").value;
  CMatView wr = model.store.at("gru.Wr").mat();
  CMatView ur = model.store.at("gru.Ur").mat();
  const auto& br = model.store.at("gru.br").value;
  CMatView wh = model.store.at("gru.Wh").mat();
  CMatView uh = model.store.at("gru.Uh").mat();
  const auto& bh = model.store.at("gru.bh").value;

  BeliefState next;
  next.t = state.t + 1;
  next.h = Mat(n, cfg.d_hid);
  if (trace) {
    trace->u = Mat(n, cfg.d_hid);
    trace->z = Mat(n, cfg.d_hid);
    trace->r = Mat(n, cfg.d_hid);
    trace->htilde = Mat(n, cfg.d_hid);
  }

  std::vector<double> agg(cfg.d_hid), u(cfg.d_hid), z(cfg.d_hid), r(cfg.d_hid);
  std::vector<double> rh(cfg.d_hid), cand(cfg.d_hid), tmp(cfg.d_hid);
  for (int v = 0; v < n; ++v) {
    // u_v = tanh(sum_u block(v<-u)^T h_u); no incoming blocks leaves tanh(0)=0.
    std::fill(agg.begin(), agg.end(), 0.0);
    for (int idx : A.incoming[v]) {
      const auto& e = A.entries[idx];
      la::mattvec_acc(e.block, state.h.row(e.sender), agg.data());
    }
    for (int i = 0; i < cfg.d_hid; ++i) u[i] = std::tanh(agg[i]);

    const double* hprev = state.h.row(v);
    la::matvec(wz, u.data(), z.data());
    la::matvec_acc(uz, hprev, z.data());
    for (int i = 0; i < cfg.d_hid; ++i) z[i] = la::sigmoid(z[i] + bz[i]);

    la::matvec(wr, u.data(), r.data());
    la::matvec_acc(ur, hprev, r.data());
    for (int i = 0; i < cfg.d_hid; ++i) r[i] = la::sigmoid(r[i] + br[i]);

    for (int i = 0; i < cfg.d_hid; ++i) rh[i] = r[i] * hprev[i];
    la::matvec(wh, u.data(), cand.data());
    la::matvec_acc(uh, rh.data(), cand.data());
    for (int i = 0; i < cfg.d_hid; ++i) cand[i] = std::tanh(cand[i] + bh[i]);

    double* hnext = next.h.row(v);
    for (int i = 0; i < cfg.d_hid; ++i) {
      hnext[i] = (1.0 - z[i]) * hprev[i] + z[i] * cand[i];
    }
    if (trace) {
      std::copy(u.begin(), u.end(), trace->u.row(v));
      std::copy(z.begin(), z.end(), trace->z.row(v));
      std::copy(r.begin(), r.end(), trace->r.row(v));
      std::copy(cand.begin(), cand.end(), trace->htilde.row(v));
    }
  }
  return next;
}

namespace detail {

inline void apply_output_net(const Model& model, const Mat& h, double* p_row,
                             Mat* fo_hidden_row_store) {
  const ModelConfig& cfg = model.cfg;
  const int n = h.rows;
  if (cfg.fo_hidden == 0) {
    CMatView w = model.store.at("fo.W").mat();
    const double b = model.store.at("fo.b").value[0];
    for (int v = 0; v < n; ++v) {
      p_row[v] = la::sigmoid_prob(la::dot(w.row(0), h.row(v), cfg.d_hid) + b);
    }
  } else {
    CMatView w1 = model.store.at("fo.W1").mat();
    const auto& b1 = model.store.at("fo.b1").value;
    CMatView w2 = model.store.at("fo.W2").mat();
    const double b2 = model.store.at("fo.b2").value[0];
    std::vector<double> a1(cfg.fo_hidden);
    for (int v = 0; v < n; ++v) {
      la::matvec(w1, h.row(v), a1.data());
      for (int i = 0; i < cfg.fo_hidden; ++i) a1[i] = std::tanh(a1[i] + b1[i]);
      if (fo_hidden_row_store)
        std::copy(a1.begin(), a1.end(), fo_hidden_row_store->row(v));
      p_row[v] = la::sigmoid_prob(la::dot(w2.row(0), a1.data(), cfg.fo_hidden) + b2);
    }
  }
}

}  // namespace detail

// Full forward pass against a pre-assembled matrix (shared across a batch).
inline PredictionTrace forward_with_matrix(const Model& model, const PropagationMatrix& A,
                                           const EmbeddingTable& emb,
                                           const LabelVocabulary& vocab,
                                           const std::vector<double>& x) {
  const ModelConfig& cfg = model.cfg;
  const int n = A.node_count;

  PredictionTrace trace;
  trace.T = cfg.T;
  trace.n = n;
  trace.x = x;
  trace.p = Mat(cfg.T + 1, n);
  trace.states.reserve(cfg.T + 1);
  trace.steps.resize(cfg.T);
  if (cfg.fo_hidden > 0) {
    trace.fo_hidden_act.assign(cfg.T + 1, Mat(n, cfg.fo_hidden));
  }

  BeliefState state = initial_beliefs(model, x, emb, vocab, n, &trace.fi_hidden_act);
  trace.states.push_back(state.h);
  detail::apply_output_net(model, state.h, trace.p.row(0),
                           cfg.fo_hidden > 0 ? &trace.fo_hidden_act[0] : nullptr);

  for (int t = 1; t <= cfg.T; ++t) {
    state = propagate_step(model, A, state, &trace.steps[t - 1]);
    trace.states.push_back(state.h);
    detail::apply_output_net(model, state.h, trace.p.row(t),
                             cfg.fo_hidden > 0 ? &trace.fo_hidden_act[t] : nullptr);
  }
  return trace;
}

inline PredictionTrace forward(const Model& model, const TypedGraph& graph,
                               const EmbeddingTable& emb, const LabelVocabulary& vocab,
                               const std::vector<double>& x, bool zsl_mask = false,
                               int n_active = -1) {
  if (model.cfg.T == 0) {
    // No propagation: skip assembly entirely.
    PropagationMatrix empty;
    empty.node_count = n_active < 0 ? vocab.size() : n_active;
    empty.d_hid = model.cfg.d_hid;
    empty.zsl_mask = zsl_mask;
    empty.incoming.assign(empty.node_count, {});
    return forward_with_matrix(model, empty, emb, vocab, x);
  }
  PropagationMatrix A =
      assemble_propagation_matrix(model, graph, emb, vocab, zsl_mask, n_active);
  return forward_with_matrix(model, A, emb, vocab, x);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Per-block gradient accumulator, parallel to PropagationMatrix::entries.
// A batch shares one buffer so the block -> relation-tensor push happens
// once per assembly instead of once per instance.
struct BlockGradBuffer {
  std::vector<Mat> g;

  void reset(const PropagationMatrix& A) {
    g.assign(A.entries.size(), Mat(A.d_hid, A.d_hid));
  }
};

namespace detail {

// Backward of the output net at one timestep; accumulates parameter
// gradients and adds the state gradient into dh.
inline void output_net_backward(const Model& model, ParamStore& grads, const Mat& h,
                                const double* p_row, const double* dp_row,
                                const Mat* fo_hidden_act, Mat& dh) {
  const ModelConfig& cfg = model.cfg;
  const int n = h.rows;
  if (cfg.fo_hidden == 0) {
    CMatView w = model.store.at("fo.W").mat();
    MatView gw = grads.at("fo.W").grad_mat();
    auto& gb = grads.at("fo.b").grad;
    for (int v = 0; v < n; ++v) {
      const double p = p_row[v];
      const double dlogit = dp_row[v] * p * (1.0 - p);
      if (dlogit == 0.0) continue;
      la::axpy(dlogit, h.row(v), gw.row(0), cfg.d_hid);
      gb[0] += dlogit;
      la::axpy(dlogit, w.row(0), dh.row(v), cfg.d_hid);
    }
  } else {
    CMatView w1 = model.store.at("fo.W1").mat();
    CMatView w2 = model.store.at("fo.W2").mat();
    MatView gw1 = grads.at("fo.W1").grad_mat();
    auto& gb1 = grads.at("fo.b1").grad;
    MatView gw2 = grads.at("fo.W2").grad_mat();
    auto& gb2 = grads.at("fo.b2").grad;
    std::vector<double> dpre1(cfg.fo_hidden);
    for (int v = 0; v < n; ++v) {
      const double p = p_row[v];
      const double dlogit = dp_row[v] * p * (1.0 - p);
      if (dlogit == 0.0) continue;
      const double* a1 = fo_hidden_act->row(v);
      la::axpy(dlogit, a1, gw2.row(0), cfg.fo_hidden);
      gb2[0] += dlogit;
      for (int i = 0; i < cfg.fo_hidden; ++i) {
        dpre1[i] = dlogit * w2(0, i) * (1.0 - a1[i] * a1[i]);
      }
      la::add_outer(gw1, dpre1.data(), h.row(v));
      for (int i = 0; i < cfg.fo_hidden; ++i) gb1[i] += dpre1[i];
      la::mattvec_acc(w1, dpre1.data(), dh.row(v));
    }
  }
}

inline void input_net_backward(const Model& model, ParamStore& grads,
                               const PredictionTrace& trace, const EmbeddingTable& emb,
                               const Mat& dh0) {
  const ModelConfig& cfg = model.cfg;
  const int n = trace.n;
  CMatView w2 = model.store.at("fi.W2").mat();
  MatView gw1 = grads.at("fi.W1").grad_mat();
  auto& gb1 = grads.at("fi.b1").grad;
  MatView gw2 = grads.at("fi.W2").grad_mat();
  auto& gb2 = grads.at("fi.b2").grad;

  std::vector<double> input(cfg.d_feat + cfg.d_emb);
  std::copy(trace.x.begin(), trace.x.end(), input.begin());
  std::vector<double> dpre2(cfg.d_hid), da1(cfg.fi_hidden), dpre1(cfg.fi_hidden);
  for (int v = 0; v < n; ++v) {
    const double* h0 = trace.states[0].row(v);
    const double* a1 = trace.fi_hidden_act.row(v);
    for (int i = 0; i < cfg.d_hid; ++i) {
      dpre2[i] = dh0(v, i) * (1.0 - h0[i] * h0[i]);
    }
    la::add_outer(gw2, dpre2.data(), a1);
    for (int i = 0; i < cfg.d_hid; ++i) gb2[i] += dpre2[i];
    std::fill(da1.begin(), da1.end(), 0.0);
    la::mattvec_acc(w2, dpre2.data(), da1.data());
    for (int i = 0; i < cfg.fi_hidden; ++i) dpre1[i] = da1[i] * (1.0 - a1[i] * a1[i]);
    std::copy(emb.vec(v).begin(), emb.vec(v).end(), input.begin() + cfg.d_feat);
    la::add_outer(gw1, dpre1.data(), input.data());
    for (int i = 0; i < cfg.fi_hidden; ++i) gb1[i] += dpre1[i];
  }
}

}  // namespace detail

// Reverse pass for one instance. dLdp is (T+1) x n. Parameter gradients
// accumulate into model.store's grad buffers; block gradients accumulate
// into `bg` and are pushed into the relation tensors by relation_backward.
inline void backward(Model& model, const PropagationMatrix& A, const EmbeddingTable& emb,
                     const LabelVocabulary& vocab, const PredictionTrace& trace,
                     const Mat& dLdp, BlockGradBuffer& bg) {
  (void)vocab;
  const ModelConfig& cfg = model.cfg;
  const int n = trace.n;
  if (dLdp.rows != cfg.T + 1 || dLdp.cols != n)
    throw DimensionMismatchError("dLdp shape mismatch");
  if (bg.g.size() != A.entries.size())
    throw DimensionMismatchError("block gradient buffer not sized for this matrix");

  ParamStore& grads = model.store;
  CMatView wz = model.store.at("gru.Wz").mat();
  CMatView uz = model.store.at("gru.Uz").mat();
  CMatView wr = model.store.at("gru.Wr").mat();
  CMatView ur = model.store.at("gru.Ur").mat();
  CMatView wh = model.store.at("gru.Wh").mat();
  CMatView uh = model.store.at("gru.Uh").mat();
  MatView gwz = grads.at("gru.Wz").grad_mat();
  MatView guz = grads.at("gru.Uz").grad_mat();
  auto& gbz = grads.at("gru.bz").grad;
  MatView gwr = grads.at("gru.Wr").grad_mat();
  MatView gur = grads.at("gru.Ur").grad_mat();
  auto& gbr = grads.at("gru.br").grad;
  MatView gwh = grads.at("gru.Wh").grad_mat();
  MatView guh = grads.at("gru.Uh").grad_mat();
  auto& gbh = grads.at("gru.bh").grad;

  Mat dh(n, cfg.d_hid);
  detail::output_net_backward(model, grads, trace.states[cfg.T], trace.p.row(cfg.T),
                              dLdp.row(cfg.T),
                              cfg.fo_hidden > 0 ? &trace.fo_hidden_act[cfg.T] : nullptr,
                              dh);

  std::vector<double> dz(cfg.d_hid), dcand(cfg.d_hid), dch(cfg.d_hid), rh(cfg.d_hid);
  std::vector<double> du(cfg.d_hid), tmp(cfg.d_hid), dcz(cfg.d_hid), dcr(cfg.d_hid);
  std::vector<double> dr(cfg.d_hid), dagg(cfg.d_hid);

  for (int t = cfg.T; t >= 1; --t) {
    const StepTrace& st = trace.steps[t - 1];
    const Mat& hprev = trace.states[t - 1];
    Mat dhprev(n, cfg.d_hid);

    for (int v = 0; v < n; ++v) {
      const double* hp = hprev.row(v);
      const double* uvec = st.u.row(v);
      const double* zv = st.z.row(v);
      const double* rv = st.r.row(v);
      const double* cv = st.htilde.row(v);
      const double* dhv = dh.row(v);
      double* dhp = dhprev.row(v);

      // h_t = (1 - z) * h_{t-1} + z * cand
      for (int i = 0; i < cfg.d_hid; ++i) {
        dz[i] = dhv[i] * (cv[i] - hp[i]);
        dcand[i] = dhv[i] * zv[i];
        dhp[i] += dhv[i] * (1.0 - zv[i]);
      }
      // cand = tanh(Wh u + Uh (r*h) + bh)
      for (int i = 0; i < cfg.d_hid; ++i) dch[i] = dcand[i] * (1.0 - cv[i] * cv[i]);
      for (int i = 0; i < cfg.d_hid; ++i) rh[i] = rv[i] * hp[i];
      la::add_outer(gwh, dch.data(), uvec);
      la::add_outer(guh, dch.data(), rh.data());
      for (int i = 0; i < cfg.d_hid; ++i) gbh[i] += dch[i];
      std::fill(du.begin(), du.end(), 0.0);
      la::mattvec_acc(wh, dch.data(), du.data());
      std::fill(tmp.begin(), tmp.end(), 0.0);
      la::mattvec_acc(uh, dch.data(), tmp.data());
      for (int i = 0; i < cfg.d_hid; ++i) {
        dr[i] = tmp[i] * hp[i];
        dhp[i] += tmp[i] * rv[i];
      }
      // gates
      for (int i = 0; i < cfg.d_hid; ++i) dcz[i] = dz[i] * zv[i] * (1.0 - zv[i]);
      la::add_outer(gwz, dcz.data(), uvec);
      la::add_outer(guz, dcz.data(), hp);
      for (int i = 0; i < cfg.d_hid; ++i) gbz[i] += dcz[i];
      la::mattvec_acc(wz, dcz.data(), du.data());
      la::mattvec_acc(uz, dcz.data(), dhp);

      for (int i = 0; i < cfg.d_hid; ++i) dcr[i] = dr[i] * rv[i] * (1.0 - rv[i]);
      la::add_outer(gwr, dcr.data(), uvec);
      la::add_outer(gur, dcr.data(), hp);
      for (int i = 0; i < cfg.d_hid; ++i) gbr[i] += dcr[i];
      la::mattvec_acc(wr, dcr.data(), du.data());
      la::mattvec_acc(ur, dcr.data(), dhp);

      // u = tanh(agg); agg = sum block(v<-s)^T h_s
      for (int i = 0; i < cfg.d_hid; ++i) dagg[i] = du[i] * (1.0 - uvec[i] * uvec[i]);
      for (int idx : A.incoming[v]) {
        const auto& e = A.entries[idx];
        la::matvec_acc(e.block, dagg.data(), dhprev.row(e.sender));
        la::add_outer({bg.g[idx].a.data(), cfg.d_hid, cfg.d_hid}, hprev.row(e.sender),
                      dagg.data());
      }
    }

    if (t - 1 >= 1 || true) {
      detail::output_net_backward(
          model, grads, trace.states[t - 1], trace.p.row(t - 1), dLdp.row(t - 1),
          cfg.fo_hidden > 0 ? &trace.fo_hidden_act[t - 1] : nullptr, dhprev);
    }
    dh = std::move(dhprev);
  }

  detail::input_net_backward(model, grads, trace, emb, dh);
}

namespace detail {

// Gradient of one block entry through the bilinear form, honoring the slot
// layout used by relation_block.
inline void bilinear_entry_backward(Model& model, EdgeKind kind, int i, int j,
                                    const double* w_recv, const double* w_send, double g,
                                    std::vector<double>& s1, std::vector<double>& s2) {
  const auto& slot = model.rel_slot(kind, i, j);
  const double* a = slot.transposed ? w_send : w_recv;
  const double* b = slot.transposed ? w_recv : w_send;
  const int d_emb = model.cfg.d_emb;
  if (model.cfg.relation_rank == 0) {
    MatView gm = model.tensor(slot.a).grad_mat();
    if (slot.diagonal_tied) {
      la::add_outer(gm, a, b, 0.5 * g);
      la::add_outer(gm, b, a, 0.5 * g);
    } else {
      la::add_outer(gm, a, b, g);
    }
  } else {
    CMatView p = model.tensor(slot.a).mat();
    CMatView q = model.tensor(slot.b).mat();
    MatView gp = model.tensor(slot.a).grad_mat();
    MatView gq = model.tensor(slot.b).grad_mat();
    const int r = model.cfg.relation_rank;
    s1.assign(r, 0.0);
    s2.assign(r, 0.0);
    if (slot.diagonal_tied) {
      // entry = 0.5 [ (P^T a).(Q^T b) + (Q^T a).(P^T b) ]
      la::mattvec_acc(q, b, s1.data());  // Q^T b
      la::mattvec_acc(q, a, s2.data());  // Q^T a
      la::add_outer(gp, a, s1.data(), 0.5 * g);
      la::add_outer(gp, b, s2.data(), 0.5 * g);
      s1.assign(r, 0.0);
      s2.assign(r, 0.0);
      la::mattvec_acc(p, a, s1.data());  // P^T a
      la::mattvec_acc(p, b, s2.data());  // P^T b
      la::add_outer(gq, b, s1.data(), 0.5 * g);
      la::add_outer(gq, a, s2.data(), 0.5 * g);
    } else {
      la::mattvec_acc(q, b, s1.data());  // Q^T b
      la::mattvec_acc(p, a, s2.data());  // P^T a
      la::add_outer(gp, a, s1.data(), g);
      la::add_outer(gq, b, s2.data(), g);
    }
    (void)d_emb;
  }
}

}  // namespace detail

// Pushes accumulated block gradients into the relation tensors. Mirror
// blocks fold into their direct mate as a transpose, so each edge's tensors
// are touched exactly once in entry order (deterministic accumulation).
inline void relation_backward(Model& model, const PropagationMatrix& A,
                              const EmbeddingTable& emb, const BlockGradBuffer& bg) {
  const int d = model.cfg.d_hid;
  std::vector<double> s1, s2;
  Mat total(d, d);
  for (std::size_t idx = 0; idx < A.entries.size(); ++idx) {
    const auto& e = A.entries[idx];
    if (!e.direct) continue;
    total = bg.g[idx];
    if (e.mirror_index >= 0) {
      const Mat& mg = bg.g[e.mirror_index];
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) total(i, j) += mg(j, i);
    }
    const double* w_recv = emb.data(e.receiver);
    const double* w_send = emb.data(e.sender);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        const double g = total(i, j);
        if (g == 0.0) continue;
        detail::bilinear_entry_backward(model, e.kind, i, j, w_recv, w_send, g, s1, s2);
      }
    }
  }
}

// One-shot convenience for single-instance use (tests, gradient checks).
inline void backward_single(Model& model, const PropagationMatrix& A,
                            const EmbeddingTable& emb, const LabelVocabulary& vocab,
                            const PredictionTrace& trace, const Mat& dLdp) {
  BlockGradBuffer bg;
  bg.reset(A);
  backward(model, A, emb, vocab, trace, dLdp, bg);
  relation_backward(model, A, emb, bg);
}

}  // namespace labelprop
