#pragma once

#include <cmath>
#include <vector>

#include "ocloc/graph.hpp"
#include "ocloc/model.hpp"

namespace ocloc {

// Posterior parameter handles. Shapes: S = B*M, K slots.
struct InferOut {
  Id mu_view, sigma_view;  // [S, E_view]
  Id mu_obj, sigma_obj;    // [B*K, E_obj]
  Id tau1, tau2;           // [B, K] Beta posterior over slot usage
  Id kappa;                // [B, K] presence probability
  Id mu_bck, sigma_bck;    // [B, E_bck]
};

// Final-iteration attention maps, copied out for diagnostics.
template <typename T>
struct InferTrace {
  Tensor<T> w;     // [S, N', K] competition over slots
  Tensor<T> attn;  // [S, K, N'] normalized location weights
};

namespace detail {

template <typename T>
Id sigma_head(Graph<T>& g, Id raw) {
  return g.add_scalar(g.softplus(raw), static_cast<T>(guard::kSigmaFloor));
}

// r = mu + sigma * eps with vector mu/rawsig broadcast over rows.
template <typename T>
Id state_init(Bound<T>& b, const std::string& mu_name, const std::string& sig_name,
              int64_t rows, NoiseSource<T>& noise) {
  auto& g = b.g;
  const int64_t dim = g.val(b(mu_name)).size();
  Id sig = sigma_head(g, b(sig_name));  // [dim]
  Id sig_rows = g.reshape(g.broadcast_mid(sig, 1, rows, dim), {rows, dim});
  Id eps = g.constant(noise.normal({rows, dim}));
  return g.add_bias(g.mul(eps, sig_rows), b(mu_name));
}

}  // namespace detail

// Iterative cross-attention inference over all views of a batch.
// images: [S, C, H, W]. Keys and values depend only on the features, so
// they are computed once and reused by every iteration.
template <typename T>
InferOut infer(Bound<T>& b, const ModelConfig& cfg, int64_t B, int64_t M,
               const Tensor<T>& images, NoiseSource<T>& noise,
               InferTrace<T>* trace = nullptr) {
  auto& g = b.g;
  const int64_t S = B * M;
  const int64_t K = cfg.K;
  const int64_t NP = cfg.n_prime();

  // shared feature grid
  Id h = g.silu(nn::conv2d(b, "enc.conv0", g.constant(images), 2, 1));
  for (int i = 1; i <= 4; ++i) {
    h = g.silu(nn::conv2d(b, "enc.conv" + std::to_string(i), h, 1, 2));
  }
  Id feats = g.nchw_to_nlc(h);  // [S, N', D_ft]
  Id coords = g.constant(nn::coord_grid<T>(cfg.feat_h(), cfg.feat_w()));
  Id pe = nn::linear(b, "enc.pos", coords);  // [N', D_ft]
  feats = g.reshape(g.add_bias(g.reshape(feats, {S, NP * cfg.D_ft}), g.reshape(pe, {NP * cfg.D_ft})),
                    {S * NP, cfg.D_ft});
  Id r_feat = nn::layer_norm(b, "enc.head.ln", feats);
  r_feat = g.silu(nn::linear(b, "enc.head.fc1", r_feat));
  r_feat = nn::linear(b, "enc.head.fc2", r_feat);  // [S*N', D_ft]

  Id keys = g.reshape(nn::linear_nobias(b, "enc.key.fc", nn::layer_norm(b, "enc.key.ln", r_feat)),
                      {S, NP, cfg.D_key});
  Id values = g.reshape(nn::linear_nobias(b, "enc.val.fc", nn::layer_norm(b, "enc.val.ln", r_feat)),
                        {S, NP, cfg.D_val});

  Id r_view = detail::state_init(b, "enc.init.mu_view", "enc.init.rawsig_view", S, noise);
  Id r_attr = detail::state_init(b, "enc.init.mu_attr", "enc.init.rawsig_attr", B * K, noise);

  const auto idx_view = pair_rows_left(B, M, K);
  const auto idx_attr = pair_rows_right(B, M, K);
  const T inv_sqrt_key = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.D_key)));

  for (int it = 0; it < cfg.T; ++it) {
    Id r_full = g.concat_lastdim(g.rows_gather(r_view, idx_view),
                                 g.rows_gather(r_attr, idx_attr));  // [S*K, D_val]
    Id q = nn::linear_nobias(b, "enc.qry.fc", nn::layer_norm(b, "enc.qry.ln", r_full));
    Id queries = g.reshape(q, {S, K, cfg.D_key});

    // softmax over slots, then renormalize each slot over locations
    Id logits = g.mul_scalar(g.bmm_nt(keys, queries), inv_sqrt_key);  // [S, N', K]
    Id w = g.softmax_lastdim(logits);
    Id attn = g.softmax_lastdim(g.transpose_mid(g.log_(w, static_cast<T>(guard::kLogFloor))));
    Id u = g.reshape(g.bmm(attn, values), {S * K, cfg.D_val});  // [S, K, N'] x [S, N', D_val]

    Id v = nn::gru_cell(b, "enc.gru", u, r_full);
    Id upd = nn::layer_norm(b, "enc.upd.ln", v);
    upd = g.silu(nn::linear(b, "enc.upd.fc1", upd));
    upd = nn::linear(b, "enc.upd.fc2", upd);
    v = g.add(v, upd);  // [S*K, D_val]

    Id v_view = g.slice_lastdim(v, 0, cfg.D_vw);
    Id v_attr = g.slice_lastdim(v, cfg.D_vw, cfg.D_at);
    r_view = g.mean_mid(g.reshape(v_view, {S, K, cfg.D_vw}), S, K, cfg.D_vw);
    // rows run (b, m, k); averaging over m needs the m axis in the middle
    r_attr = g.reshape(g.mean_mid(g.reshape(v_attr, {B, M, K * cfg.D_at}), B, M, K * cfg.D_at),
                       {B * K, cfg.D_at});

    if (trace != nullptr && it == cfg.T - 1) {
      trace->w = g.val(w);
      trace->attn = g.val(attn);
    }
  }

  InferOut out;

  Id hv = g.silu(nn::linear(b, "enc.view.fc1", r_view));
  hv = g.silu(nn::linear(b, "enc.view.fc2", hv));
  hv = nn::linear(b, "enc.view.fc3", hv);  // [S, 2*E_view]
  out.mu_view = g.slice_lastdim(hv, 0, cfg.E_view);
  out.sigma_view = detail::sigma_head(g, g.slice_lastdim(hv, cfg.E_view, cfg.E_view));

  Id ho = g.silu(nn::linear(b, "enc.obj.fc1", r_attr));
  ho = g.silu(nn::linear(b, "enc.obj.fc2", ho));
  ho = nn::linear(b, "enc.obj.fc3", ho);  // [B*K, 2*E_obj + 3]
  out.mu_obj = g.slice_lastdim(ho, 0, cfg.E_obj);
  out.sigma_obj = detail::sigma_head(g, g.slice_lastdim(ho, cfg.E_obj, cfg.E_obj));
  const T tau_floor = static_cast<T>(guard::kTauFloor);
  out.tau1 = g.reshape(g.add_scalar(g.softplus(g.slice_lastdim(ho, 2 * cfg.E_obj, 1)), tau_floor),
                       {B, K});
  out.tau2 = g.reshape(g.add_scalar(g.softplus(g.slice_lastdim(ho, 2 * cfg.E_obj + 1, 1)), tau_floor),
                       {B, K});
  const T kc = static_cast<T>(guard::kKappaClamp);
  out.kappa = g.clamp(g.reshape(g.sigmoid(g.slice_lastdim(ho, 2 * cfg.E_obj + 2, 1)), {B, K}),
                      kc, T(1) - kc);

  // slot embeddings pooled by a learned softmax before the background head
  Id hb = g.silu(nn::linear(b, "enc.bck.slot.fc1", r_attr));
  hb = nn::linear(b, "enc.bck.slot.fc2", hb);  // [B*K, hidden + 1]
  Id emb = g.slice_lastdim(hb, 0, cfg.head_hidden);
  Id wsel = g.softmax_lastdim(g.reshape(g.slice_lastdim(hb, cfg.head_hidden, 1), {B, K}));
  Id pooled = g.sum_mid(g.reshape(g.mul_bcast_last(g.reshape(wsel, {B * K}), emb),
                                  {B, K, cfg.head_hidden}),
                        B, K, cfg.head_hidden);  // [B, hidden]
  Id hb2 = g.silu(nn::linear(b, "enc.bck.out.fc1", pooled));
  hb2 = g.silu(nn::linear(b, "enc.bck.out.fc2", hb2));
  hb2 = nn::linear(b, "enc.bck.out.fc3", hb2);  // [B, 2*E_bck]
  out.mu_bck = g.slice_lastdim(hb2, 0, cfg.E_bck);
  out.sigma_bck = detail::sigma_head(g, g.slice_lastdim(hb2, cfg.E_bck, cfg.E_bck));
  return out;
}

}  // namespace ocloc
