#include "baar/retention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace baar {

namespace {

void check_layer_input(const Tensor& x, const RetentionLayer& layer, const PositionIndex& positions) {
  if (x.ndim() != 2) throw std::invalid_argument("retention: expected 2-D input, got " + shape_str(x.shape()));
  if (layer.heads.empty()) throw std::invalid_argument("retention: layer has no heads");
  if (x.dim(1) != layer.d_model()) {
    throw std::invalid_argument("retention: input width " + std::to_string(x.dim(1)) +
                                " does not match d_model " + std::to_string(layer.d_model()));
  }
  if (positions.size() != x.dim(0)) {
    throw std::invalid_argument("retention: " + std::to_string(positions.size()) + " positions for " +
                                std::to_string(x.dim(0)) + " rows");
  }
}

struct HeadProjection {
  Tensor q, k, v;  // N×head_dim, q/k already rotated
};

HeadProjection project_head(const Tensor& h, const RetentionHead& head, const RetentionLayer& layer,
                            const PositionIndex& rot_positions) {
  HeadProjection p;
  p.q = matmul(h, head.w_q);
  p.k = matmul(h, head.w_k);
  p.v = matmul(h, head.w_v);
  if (layer.use_rotary) {
    p.q = apply_rotation(p.q, rot_positions, layer.rotary, +1);
    p.k = apply_rotation(p.k, rot_positions, layer.rotary, -1);
  }
  return p;
}

PositionIndex sub_positions(const PositionIndex& positions, std::int64_t start, std::int64_t len) {
  std::vector<double> p(positions.values().begin() + start, positions.values().begin() + start + len);
  return PositionIndex(std::move(p));
}

Tensor decay_vector(const PositionIndex& positions, std::int64_t start, std::int64_t len, double gamma,
                    double anchor, bool anchor_is_past, Precision prec) {
  std::vector<double> v(static_cast<std::size_t>(len));
  for (std::int64_t i = 0; i < len; ++i) {
    const double delta = anchor_is_past ? positions[start + i] - anchor : anchor - positions[start + i];
    v[static_cast<std::size_t>(i)] = std::pow(gamma, delta);
  }
  return Tensor::from_data({len}, std::move(v), false, prec);
}

// Residual block around a retention core: pre-norm, multi-head core,
// output projection, then a pre-norm feed-forward sublayer.
template <typename Core>
RetentionResult run_block(const Tensor& x, const RetentionLayer& layer,
                          const PositionIndex& rot_positions, Core&& core) {
  RetentionResult result;
  Tensor h = layer_norm(x, layer.ln1_g, layer.ln1_b);
  std::vector<Tensor> head_outs;
  head_outs.reserve(layer.heads.size());
  for (std::size_t hi = 0; hi < layer.heads.size(); ++hi) {
    HeadProjection proj = project_head(h, layer.heads[hi], layer, rot_positions);
    head_outs.push_back(core(proj, layer.heads[hi], result));
  }
  Tensor merged = head_outs.size() == 1 ? head_outs[0] : concat(head_outs, 1);
  Tensor attn = add_rowvec(matmul(merged, layer.w_o), layer.b_o);
  Tensor x1 = add(x, attn);
  Tensor h2 = layer_norm(x1, layer.ln2_g, layer.ln2_b);
  Tensor f = add_rowvec(matmul(gelu(add_rowvec(matmul(h2, layer.ff_w1), layer.ff_b1)), layer.ff_w2),
                        layer.ff_b2);
  result.y = add(x1, f);
  return result;
}

}  // namespace

RetentionLayer RetentionLayer::init(std::int64_t d_model, int num_heads, std::int64_t head_dim,
                                    std::int64_t ff_dim, Direction direction, const DecaySpec& decay,
                                    const RotarySpec& rotary, std::mt19937_64& rng, Precision prec,
                                    double init_std) {
  if (num_heads <= 0 || d_model != num_heads * head_dim) {
    throw std::invalid_argument("RetentionLayer: d_model must equal num_heads*head_dim");
  }
  if (decay.direction != direction) {
    throw std::invalid_argument(std::string("RetentionLayer: decay direction ") +
                                direction_name(decay.direction) + " does not match layer direction " +
                                direction_name(direction));
  }
  if (static_cast<int>(decay.gammas.size()) != num_heads) {
    throw std::invalid_argument("RetentionLayer: " + std::to_string(decay.gammas.size()) + " gammas for " +
                                std::to_string(num_heads) + " heads");
  }
  if (rotary.head_dim != head_dim) {
    throw std::invalid_argument("RetentionLayer: rotary head_dim mismatch");
  }
  RetentionLayer layer;
  layer.direction = direction;
  layer.rotary = rotary;
  auto param = [&](Shape s) { return Tensor::randn(std::move(s), rng, init_std, true, prec); };
  for (int hh = 0; hh < num_heads; ++hh) {
    RetentionHead head;
    head.w_q = param({d_model, head_dim});
    head.w_k = param({d_model, head_dim});
    head.w_v = param({d_model, head_dim});
    head.gamma = decay.gammas[static_cast<std::size_t>(hh)];
    layer.heads.push_back(std::move(head));
  }
  layer.w_o = param({d_model, d_model});
  layer.b_o = Tensor::zeros({d_model}, true, prec);
  layer.ff_w1 = param({d_model, ff_dim});
  layer.ff_b1 = Tensor::zeros({ff_dim}, true, prec);
  layer.ff_w2 = param({ff_dim, d_model});
  layer.ff_b2 = Tensor::zeros({d_model}, true, prec);
  layer.ln1_g = Tensor::full({d_model}, 1.0, true, prec);
  layer.ln1_b = Tensor::zeros({d_model}, true, prec);
  layer.ln2_g = Tensor::full({d_model}, 1.0, true, prec);
  layer.ln2_b = Tensor::zeros({d_model}, true, prec);

  // Non-degenerate start: a projection with an all-zero row would zero the
  // retention diagonal and break full-rankness.
  for (const auto& head : layer.heads) {
    for (const Tensor* w : {&head.w_q, &head.w_k, &head.w_v}) {
      for (std::int64_t r = 0; r < w->dim(0); ++r) {
        bool all_zero = true;
        for (std::int64_t c = 0; c < w->dim(1) && all_zero; ++c) all_zero = w->at(r, c) == 0.0;
        if (all_zero) throw std::runtime_error("RetentionLayer: degenerate all-zero projection row");
      }
    }
  }
  return layer;
}

std::vector<std::pair<std::string, Tensor>> RetentionLayer::parameters(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t hh = 0; hh < heads.size(); ++hh) {
    const std::string hp = prefix + ".head" + std::to_string(hh);
    out.emplace_back(hp + ".w_q", heads[hh].w_q);
    out.emplace_back(hp + ".w_k", heads[hh].w_k);
    out.emplace_back(hp + ".w_v", heads[hh].w_v);
  }
  out.emplace_back(prefix + ".w_o", w_o);
  out.emplace_back(prefix + ".b_o", b_o);
  out.emplace_back(prefix + ".ff_w1", ff_w1);
  out.emplace_back(prefix + ".ff_b1", ff_b1);
  out.emplace_back(prefix + ".ff_w2", ff_w2);
  out.emplace_back(prefix + ".ff_b2", ff_b2);
  out.emplace_back(prefix + ".ln1_g", ln1_g);
  out.emplace_back(prefix + ".ln1_b", ln1_b);
  out.emplace_back(prefix + ".ln2_g", ln2_g);
  out.emplace_back(prefix + ".ln2_b", ln2_b);
  return out;
}

RetentionResult retention_parallel(const Tensor& x, const RetentionLayer& layer,
                                   const PositionIndex& positions, bool capture,
                                   const PositionIndex* rotary_positions) {
  check_layer_input(x, layer, positions);
  const PositionIndex& rp = rotary_positions ? *rotary_positions : positions;
  return run_block(x, layer, rp,
                   [&](HeadProjection& p, const RetentionHead& head, RetentionResult& result) {
                     Tensor scores = matmul(p.q, transpose(p.k));
                     Tensor d = build_decay_matrix(positions, head.gamma, layer.direction, x.precision());
                     Tensor r = mul(scores, d);
                     if (capture) result.retention.push_back(r);
                     return matmul(r, p.v);
                   });
}

RetentionResult retention_recurrent(const Tensor& x, const RetentionLayer& layer,
                                    const PositionIndex& positions,
                                    const PositionIndex* rotary_positions) {
  check_layer_input(x, layer, positions);
  if (layer.direction == Direction::bidirectional) {
    throw std::invalid_argument("retention_recurrent: bidirectional retention has no recurrent form");
  }
  const bool fwd = layer.direction == Direction::forward;
  const std::int64_t n = x.dim(0);
  const PositionIndex& rp = rotary_positions ? *rotary_positions : positions;
  RetentionState state;
  state.last_position = fwd ? positions[n - 1] : positions[0];
  RetentionResult result = run_block(
      x, layer, rp, [&](HeadProjection& p, const RetentionHead& head, RetentionResult&) {
        Tensor s;  // head_dim × head_dim accumulator
        std::vector<Tensor> rows(static_cast<std::size_t>(n));
        for (std::int64_t step = 0; step < n; ++step) {
          const std::int64_t i = fwd ? step : n - 1 - step;
          Tensor qi = slice(p.q, 0, i, 1);
          Tensor ki = slice(p.k, 0, i, 1);
          Tensor vi = slice(p.v, 0, i, 1);
          Tensor kv = matmul(transpose(ki), vi);
          if (step == 0) {
            s = kv;
          } else {
            const std::int64_t prev = fwd ? i - 1 : i + 1;
            const double gap = fwd ? positions[i] - positions[prev] : positions[prev] - positions[i];
            s = add(kv, scale(s, std::pow(head.gamma, gap)));
          }
          rows[static_cast<std::size_t>(i)] = matmul(qi, s);
        }
        state.s.push_back(s);
        return concat(rows, 0);
      });
  result.final_state = std::move(state);
  return result;
}

RetentionResult retention_chunkwise(const Tensor& x, const RetentionLayer& layer,
                                    const PositionIndex& positions, std::int64_t chunk_size,
                                    const PositionIndex* rotary_positions) {
  check_layer_input(x, layer, positions);
  if (layer.direction == Direction::bidirectional) {
    throw std::invalid_argument("retention_chunkwise: bidirectional retention has no chunkwise form");
  }
  if (chunk_size < 1) throw std::invalid_argument("retention_chunkwise: chunk_size must be >= 1");
  const bool fwd = layer.direction == Direction::forward;
  const std::int64_t n = x.dim(0);
  const Precision prec = x.precision();
  const PositionIndex& rp = rotary_positions ? *rotary_positions : positions;
  return run_block(x, layer, rp,
                   [&](HeadProjection& p, const RetentionHead& head, RetentionResult&) {
                     const std::int64_t n_chunks = (n + chunk_size - 1) / chunk_size;
                     std::vector<Tensor> chunks(static_cast<std::size_t>(n_chunks));
                     Tensor s;
                     double anchor = 0.0;
                     bool has_state = false;
                     for (std::int64_t ci = 0; ci < n_chunks; ++ci) {
                       const std::int64_t ix = fwd ? ci : n_chunks - 1 - ci;
                       const std::int64_t start = ix * chunk_size;
                       const std::int64_t len = std::min(chunk_size, n - start);
                       PositionIndex cpos = sub_positions(positions, start, len);
                       Tensor qc = slice(p.q, 0, start, len);
                       Tensor kc = slice(p.k, 0, start, len);
                       Tensor vc = slice(p.v, 0, start, len);
                       Tensor d = build_decay_matrix(cpos, head.gamma, layer.direction, prec);
                       Tensor y = matmul(mul(matmul(qc, transpose(kc)), d), vc);
                       if (has_state) {
                         Tensor cross = decay_vector(positions, start, len, head.gamma, anchor, fwd, prec);
                         y = add(y, scale_rows(matmul(qc, s), cross));
                       }
                       const double new_anchor = fwd ? positions[start + len - 1] : positions[start];
                       Tensor xi = decay_vector(positions, start, len, head.gamma, new_anchor, !fwd, prec);
                       Tensor s_new = matmul(transpose(scale_rows(kc, xi)), vc);
                       if (has_state) {
                         const double gap = fwd ? new_anchor - anchor : anchor - new_anchor;
                         s_new = add(s_new, scale(s, std::pow(head.gamma, gap)));
                       }
                       s = s_new;
                       anchor = new_anchor;
                       has_state = true;
                       chunks[static_cast<std::size_t>(ix)] = y;
                     }
                     return n_chunks == 1 ? chunks[0] : concat(chunks, 0);
                   });
}

RetentionResult retention_forward(const Tensor& x, const RetentionLayer& layer,
                                  const PositionIndex& positions, RetentionMode mode,
                                  std::int64_t chunk_size, bool capture,
                                  const PositionIndex* rotary_positions) {
  switch (mode) {
    case RetentionMode::parallel: return retention_parallel(x, layer, positions, capture, rotary_positions);
    case RetentionMode::recurrent: return retention_recurrent(x, layer, positions, rotary_positions);
    case RetentionMode::chunkwise: return retention_chunkwise(x, layer, positions, chunk_size, rotary_positions);
  }
  throw std::invalid_argument("retention_forward: unknown mode");
}

AttentionParams AttentionParams::init(std::int64_t d_model, std::int64_t d_k, std::mt19937_64& rng,
                                      Precision prec, double init_std) {
  AttentionParams p;
  p.w_q = Tensor::randn({d_model, d_k}, rng, init_std, true, prec);
  p.w_k = Tensor::randn({d_model, d_k}, rng, init_std, true, prec);
  p.w_v = Tensor::randn({d_model, d_k}, rng, init_std, true, prec);
  return p;
}

AttentionResult causal_attention(const Tensor& x, const AttentionParams& params, bool masked) {
  if (x.ndim() != 2) throw std::invalid_argument("causal_attention: expected 2-D input");
  if (x.dim(1) != params.w_q.dim(0)) {
    throw std::invalid_argument("causal_attention: input width " + std::to_string(x.dim(1)) +
                                " does not match projections " + shape_str(params.w_q.shape()));
  }
  const std::int64_t n = x.dim(0);
  const std::int64_t dk = params.w_q.dim(1);
  Tensor q = matmul(x, params.w_q);
  Tensor k = matmul(x, params.w_k);
  Tensor v = matmul(x, params.w_v);
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
  if (masked) {
    // -1e30 realizes the -inf mask: exp underflows to exactly zero above
    // the diagonal, so rows renormalize over the prefix.
    Tensor mask = Tensor::zeros({n, n}, false, x.precision());
    auto& md = mask.mutable_data();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = i + 1; j < n; ++j) md[static_cast<std::size_t>(i * n + j)] = -1e30;
    scores = add(scores, mask);
  }
  AttentionResult out;
  out.a = softmax_rows(scores);
  out.y = matmul(out.a, v);
  return out;
}

}  // namespace baar
