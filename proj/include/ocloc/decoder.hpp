#pragma once

#include <cmath>
#include <vector>

#include "ocloc/graph.hpp"
#include "ocloc/model.hpp"

namespace ocloc {

// Node handles for everything downstream of the latents. Shapes use
// S = B*M rendered views, K slots, N = H*W pixels, C channels.
struct DecodeOut {
  Id s_sdw;     // [S, K, N] gated shadow silhouettes
  Id s_obj;     // [S, K, N] gated object silhouettes
  Id order;     // [S, K] depth scores, higher occludes
  Id zeta0;     // [S, N]
  Id zeta;      // [S, K, N]
  Id pi0;       // [S, N]
  Id pi;        // [S, K, N]
  Id bck;       // [S, N, C] shadow-free background
  Id shadowed;  // [S, N, C] background with shadows composited
  Id apc;       // [S, K, N*C] object appearances
  Id pi_full;   // [S, K+1, N] mixture weights, slot 0 = background
  Id a_full;    // [S, (K+1)*N*C] mixture means, slot 0 = shadowed background
};

namespace detail {

// token MLP -> broadcast grid -> sinusoidal position embed -> transformer
// blocks -> transposed-conv pyramid. Returns [rows, out_ch, H, W].
template <typename T>
Id decoder_branch(Bound<T>& b, const std::string& pfx, Id latent, int64_t rows,
                  int64_t tok, int heads, int64_t grid_h, int64_t grid_w, int64_t out_ch) {
  auto& g = b.g;
  Id h = nn::linear(b, pfx + ".fc1", latent);
  h = g.silu(h);
  h = nn::linear(b, pfx + ".fc2", h);
  h = g.silu(h);
  h = nn::linear(b, pfx + ".fc3", h);
  h = g.silu(h);

  const int64_t cells = grid_h * grid_w;
  Id grid = g.broadcast_mid(h, rows, cells, tok);  // [rows, cells, tok]
  Id coords = g.constant(nn::coord_grid<T>(grid_h, grid_w));
  Id pe = g.sin_(nn::linear(b, pfx + ".pos", coords));  // [cells, tok]
  Id flat = g.reshape(grid, {rows, cells * tok});
  flat = g.add_bias(flat, g.reshape(pe, {cells * tok}));
  Id tokens = g.reshape(flat, {rows, cells, tok});

  tokens = nn::transformer_block(b, pfx + ".tf0", tokens, heads);
  tokens = nn::transformer_block(b, pfx + ".tf1", tokens, heads);

  Id img = g.nlc_to_nchw(tokens, grid_h, grid_w);  // [rows, tok, gh, gw]
  img = g.silu(nn::conv_transpose2d(b, pfx + ".ct0", img, 2, 1));
  img = g.silu(nn::conv_transpose2d(b, pfx + ".ct1", img, 1, 1));
  img = g.silu(nn::conv_transpose2d(b, pfx + ".ct2", img, 2, 1));
  img = g.silu(nn::conv_transpose2d(b, pfx + ".ct3", img, 1, 1));
  img = g.silu(nn::conv_transpose2d(b, pfx + ".ct4", img, 2, 1));
  img = nn::conv_transpose2d(b, pfx + ".ct5", img, 1, 1);
  (void)out_ch;
  return img;
}

}  // namespace detail

// z_view [B*M, E_view], z_obj [B*K, E_obj], z_bck [B, E_bck],
// z_prs [B, K] in [0,1] (relaxed during training, hard at eval).
template <typename T>
DecodeOut decode(Bound<T>& b, const ModelConfig& cfg, int64_t B, int64_t M,
                 Id z_view, Id z_obj, Id z_bck, Id z_prs) {
  auto& g = b.g;
  const int64_t K = cfg.K;
  const int64_t S = B * M;
  const int64_t N = cfg.pixels();
  const int64_t C = cfg.channels;

  // object branch: one render per (view, slot)
  Id pair_v = g.rows_gather(z_view, pair_rows_left(B, M, K));   // [S*K, E_view]
  Id pair_o = g.rows_gather(z_obj, pair_rows_right(B, M, K));   // [S*K, E_obj]
  Id pair = g.concat_lastdim(pair_v, pair_o);

  Id obj_img = detail::decoder_branch(b, "dec.obj", pair, S * K, cfg.dec_tok_obj,
                                      cfg.dec_heads_obj, cfg.grid_h(), cfg.grid_w(), C + 3);
  Id obj_nlc = g.nchw_to_nlc(obj_img);  // [S*K, N, C+3]
  Id apc_obj = g.slice_lastdim(obj_nlc, 0, C);
  Id logit_obj = g.reshape(g.slice_lastdim(obj_nlc, C, 1), {S, K, N});
  Id logit_sdw = g.reshape(g.slice_lastdim(obj_nlc, C + 1, 1), {S, K, N});
  Id logit_dim = g.reshape(g.slice_lastdim(obj_nlc, C + 2, 1), {S * K, N});

  Id raw_obj = g.sigmoid(g.clamp(logit_obj, -guard::kLogitClamp, guard::kLogitClamp));
  Id raw_sdw = g.sigmoid(g.clamp(logit_sdw, -guard::kLogitClamp, guard::kLogitClamp));
  Id dim = g.sigmoid(logit_dim);  // [S*K, N] shadow darkening factor

  DecodeOut out;
  out.s_sdw = g.presence_gate(raw_sdw, z_prs, M);
  Id not_sdw = g.add_scalar(g.neg(out.s_sdw), static_cast<T>(1));
  out.s_obj = g.presence_gate(g.mul(raw_obj, not_sdw), z_prs, M);

  Id ord_h = g.silu(nn::linear(b, "dec.ord.fc1", pair));
  ord_h = g.silu(nn::linear(b, "dec.ord.fc2", ord_h));
  out.order = g.reshape(nn::linear(b, "dec.ord.fc3", ord_h), {S, K});

  out.zeta0 = g.prod_one_minus(out.s_sdw);
  out.zeta = g.ordered_weights(out.s_sdw, out.order, out.zeta0);
  out.pi0 = g.prod_one_minus(out.s_obj);
  out.pi = g.ordered_weights(out.s_obj, out.order, out.pi0);

  // background branch: one render per view
  Id bck_v = g.rows_gather(z_bck, pair_rows_right(B, M, 1));  // [S, E_bck]
  Id pair_b = g.concat_lastdim(z_view, bck_v);
  Id bck_img = detail::decoder_branch(b, "dec.bck", pair_b, S, cfg.dec_tok_bck,
                                      cfg.dec_heads_bck, cfg.grid_h(), cfg.grid_w(), C);
  out.bck = g.nchw_to_nlc(bck_img);  // [S, N, C]

  // per-slot shadowed backgrounds b_k = dim_k * b0
  Id bck_rep = g.rows_gather(g.reshape(out.bck, {S, N * C}), pair_rows_left(B, M, K));
  Id shadowed_k = g.mul_bcast_last(g.reshape(dim, {S * K * N}),
                                   g.reshape(bck_rep, {S * K * N, C}));  // [S*K*N, C]

  // composite under shadow weights
  Id zeta_full = g.concat_mid(g.reshape(out.zeta0, {S, 1, N}), out.zeta);       // [S, K+1, N]
  Id b_stack = g.concat_mid(g.reshape(out.bck, {S, 1, N * C}),
                            g.reshape(shadowed_k, {S, K, N * C}));              // [S, K+1, N*C]
  Id weighted = g.mul_bcast_last(g.reshape(zeta_full, {S * (K + 1) * N}),
                                 g.reshape(b_stack, {S * (K + 1) * N, C}));
  out.shadowed = g.reshape(g.sum_mid(g.reshape(weighted, {S, K + 1, N * C}), S, K + 1, N * C),
                           {S, N, C});

  out.apc = g.reshape(apc_obj, {S, K, N * C});
  out.pi_full = g.concat_mid(g.reshape(out.pi0, {S, 1, N}), out.pi);
  out.a_full = g.reshape(g.concat_mid(g.reshape(out.shadowed, {S, 1, N * C}), out.apc),
                         {S * (K + 1), N * C});
  return out;
}

}  // namespace ocloc
