#include "sumkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "sumkit/det_random.hpp"
#include "sumkit/errors.hpp"

namespace sumkit {

namespace {

constexpr double ln_eps = 1e-5;
constexpr double adam_beta1 = 0.9;
constexpr double adam_beta2 = 0.999;
constexpr double adam_eps = 1e-8;
constexpr double init_std = 0.02;

constexpr std::size_t tensors_per_layer = 16;

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475));
}

double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865475)) +
           x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

}  // namespace

void model_config::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 ||
        max_context == 0) {
        throw config_error("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw config_error("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                           std::to_string(n_heads));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw config_error("dropout must lie in [0, 1)");
    }
}

std::size_t model_config::parameter_count() const {
    std::size_t v = vocab_size, d = d_model, f = d_ff;
    std::size_t per_layer = 2 * d            // ln1
                            + 4 * (d * d + d)  // q,k,v,o projections with bias
                            + 2 * d            // ln2
                            + d * f + f        // mlp in
                            + f * d + d;       // mlp out
    return v * d + max_context * d + n_layers * per_layer + 2 * d + d * v;
}

const tensor& checkpoint::find(std::string_view name) const {
    for (const tensor& t : params) {
        if (t.name == name) return t;
    }
    throw config_error("no parameter tensor named '" + std::string(name) + "'");
}

tensor& checkpoint::find(std::string_view name) {
    return const_cast<tensor&>(static_cast<const checkpoint*>(this)->find(name));
}

void train_config::validate() const {
    if (!(learning_rate >= 0.0)) throw config_error("learning_rate must be non-negative");
    if (batch_size == 0) throw config_error("batch_size must be positive");
    if (grad_clip && !(*grad_clip > 0.0)) throw config_error("grad_clip must be positive");
}

namespace {

// Parameter layout; index arithmetic relies on this creation order.
enum layer_slot {
    slot_ln1_scale = 0,
    slot_ln1_offset,
    slot_wq,
    slot_bq,
    slot_wk,
    slot_bk,
    slot_wv,
    slot_bv,
    slot_wo,
    slot_bo,
    slot_ln2_scale,
    slot_ln2_offset,
    slot_w1,
    slot_b1,
    slot_w2,
    slot_b2,
};

std::size_t layer_base(std::size_t l) { return 2 + l * tensors_per_layer; }

std::vector<tensor> make_param_layout(const model_config& cfg) {
    std::size_t v = cfg.vocab_size, d = cfg.d_model, f = cfg.d_ff;
    std::vector<tensor> params;
    auto add = [&params](std::string name, std::vector<std::size_t> shape) {
        tensor t;
        t.name = std::move(name);
        t.shape = std::move(shape);
        t.data.assign(t.numel(), 0.0);
        params.push_back(std::move(t));
    };
    add("tok_emb", {v, d});
    add("pos_emb", {cfg.max_context, d});
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        add(p + "ln1.scale", {d});
        add(p + "ln1.offset", {d});
        add(p + "attn.wq", {d, d});
        add(p + "attn.bq", {d});
        add(p + "attn.wk", {d, d});
        add(p + "attn.bk", {d});
        add(p + "attn.wv", {d, d});
        add(p + "attn.bv", {d});
        add(p + "attn.wo", {d, d});
        add(p + "attn.bo", {d});
        add(p + "ln2.scale", {d});
        add(p + "ln2.offset", {d});
        add(p + "mlp.w1", {d, f});
        add(p + "mlp.b1", {f});
        add(p + "mlp.w2", {f, d});
        add(p + "mlp.b2", {d});
    }
    add("ln_f.scale", {d});
    add("ln_f.offset", {d});
    add("out_proj", {d, v});
    return params;
}

bool is_norm_scale(const std::string& name) {
    return name.size() >= 5 && name.compare(name.size() - 5, 5, "scale") == 0;
}

bool is_bias_like(const std::string& name) {
    // offsets and linear biases start at zero
    if (name.size() >= 6 && name.compare(name.size() - 6, 6, "offset") == 0) return true;
    std::size_t dot = name.rfind('.');
    std::string leaf = (dot == std::string::npos) ? name : name.substr(dot + 1);
    return leaf.size() >= 2 && leaf[0] == 'b';
}

}  // namespace

checkpoint init_model(const model_config& config, std::uint64_t seed) {
    config.validate();
    checkpoint ckpt;
    ckpt.config = config;
    ckpt.params = make_param_layout(config);
    ckpt.training_step = 0;
    det_rng rng(seed);
    for (tensor& t : ckpt.params) {
        if (is_norm_scale(t.name)) {
            std::fill(t.data.begin(), t.data.end(), 1.0);
        } else if (is_bias_like(t.name)) {
            // already zero
        } else {
            for (double& x : t.data) x = rng.gaussian() * init_std;
        }
    }
    return ckpt;
}

namespace {

// Per-sequence activation cache for the backward pass.
struct layer_cache {
    std::vector<double> ln1_xhat, ln1_rstd;  // T*d, T
    std::vector<double> q, k, v;             // T*d
    std::vector<double> att;                 // H*T*T, row-major per head
    std::vector<double> ctx;                 // T*d (pre-Wo)
    std::vector<double> attn_drop_mask;      // T*d when dropout active
    std::vector<double> x_mid;               // T*d
    std::vector<double> ln2_xhat, ln2_rstd;
    std::vector<double> h1;                  // T*f (pre-gelu)
    std::vector<double> act;                 // T*f (gelu output)
    std::vector<double> mlp_drop_mask;
    std::vector<double> x_out;  // T*d
};

struct forward_cache {
    std::vector<double> x0;  // T*d embedding sum (post-dropout when active)
    std::vector<double> emb_drop_mask;
    std::vector<layer_cache> layers;
    std::vector<double> lnf_xhat, lnf_rstd;
    std::vector<double> y;       // T*d final normalized
    std::vector<double> logits;  // T*V
};

// y[t*out] = x[t*in] . w[in*out] + b
void linear_forward(const std::vector<double>& x, const tensor& w, const tensor& b,
                    std::size_t rows, std::size_t in_dim, std::size_t out_dim,
                    std::vector<double>& y) {
    y.assign(rows * out_dim, 0.0);
    for (std::size_t t = 0; t < rows; ++t) {
        const double* xt = &x[t * in_dim];
        double* yt = &y[t * out_dim];
        for (std::size_t j = 0; j < out_dim; ++j) yt[j] = b.data[j];
        for (std::size_t i = 0; i < in_dim; ++i) {
            double xv = xt[i];
            const double* wrow = &w.data[i * out_dim];
            for (std::size_t j = 0; j < out_dim; ++j) yt[j] += xv * wrow[j];
        }
    }
}

void layer_norm_forward(const std::vector<double>& x, const tensor& scale, const tensor& offset,
                        std::size_t rows, std::size_t dim, std::vector<double>& xhat,
                        std::vector<double>& rstd, std::vector<double>& out) {
    xhat.assign(rows * dim, 0.0);
    rstd.assign(rows, 0.0);
    out.assign(rows * dim, 0.0);
    for (std::size_t t = 0; t < rows; ++t) {
        const double* xt = &x[t * dim];
        double mean = 0.0;
        for (std::size_t i = 0; i < dim; ++i) mean += xt[i];
        mean /= static_cast<double>(dim);
        double var = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            double c = xt[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(dim);
        double r = 1.0 / std::sqrt(var + ln_eps);
        rstd[t] = r;
        for (std::size_t i = 0; i < dim; ++i) {
            double h = (xt[i] - mean) * r;
            xhat[t * dim + i] = h;
            out[t * dim + i] = h * scale.data[i] + offset.data[i];
        }
    }
}

// dx += LN backward; accumulates parameter grads when given.
void layer_norm_backward(const std::vector<double>& dout, const std::vector<double>& xhat,
                         const std::vector<double>& rstd, const tensor& scale, std::size_t rows,
                         std::size_t dim, std::vector<double>& dx, std::vector<double>* dscale,
                         std::vector<double>* doffset) {
    for (std::size_t t = 0; t < rows; ++t) {
        const double* dyt = &dout[t * dim];
        const double* xh = &xhat[t * dim];
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            double dxh = dyt[i] * scale.data[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[i];
            if (dscale) (*dscale)[i] += dyt[i] * xh[i];
            if (doffset) (*doffset)[i] += dyt[i];
        }
        mean_dxhat /= static_cast<double>(dim);
        mean_dxhat_xhat /= static_cast<double>(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            double dxh = dyt[i] * scale.data[i];
            dx[t * dim + i] += rstd[t] * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

void apply_dropout(std::vector<double>& x, std::vector<double>& mask, double p, det_rng& rng) {
    mask.assign(x.size(), 0.0);
    double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double keep = (rng.uniform01() >= p) ? scale : 0.0;
        mask[i] = keep;
        x[i] *= keep;
    }
}

// Full transformer forward. rng non-null => training mode with dropout.
void forward_pass(const checkpoint& ckpt, const token_sequence& tokens, forward_cache& fc,
                  det_rng* rng) {
    const model_config& cfg = ckpt.config;
    const std::size_t T = tokens.size();
    const std::size_t d = cfg.d_model;
    const std::size_t H = cfg.n_heads;
    const std::size_t dh = d / H;
    const std::size_t f = cfg.d_ff;
    const std::size_t V = cfg.vocab_size;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool use_dropout = rng != nullptr && cfg.dropout > 0.0;

    if (T > cfg.max_context) {
        throw context_overflow_error("sequence length " + std::to_string(T) +
                                     " exceeds max_context " + std::to_string(cfg.max_context));
    }
    for (token_id id : tokens) {
        if (id >= V) {
            throw unknown_token_id_error("token id " + std::to_string(id) +
                                         " outside model vocabulary " + std::to_string(V));
        }
    }

    const tensor& tok_emb = ckpt.params[0];
    const tensor& pos_emb = ckpt.params[1];

    fc.x0.assign(T * d, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double* te = &tok_emb.data[static_cast<std::size_t>(tokens[t]) * d];
        const double* pe = &pos_emb.data[t * d];
        for (std::size_t i = 0; i < d; ++i) fc.x0[t * d + i] = te[i] + pe[i];
    }
    if (use_dropout) apply_dropout(fc.x0, fc.emb_drop_mask, cfg.dropout, *rng);

    fc.layers.assign(cfg.n_layers, layer_cache{});
    const std::vector<double>* x_in = &fc.x0;
    std::vector<double> ln_out;

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        layer_cache& lc = fc.layers[l];
        std::size_t base = layer_base(l);
        const tensor& ln1_s = ckpt.params[base + slot_ln1_scale];
        const tensor& ln1_o = ckpt.params[base + slot_ln1_offset];
        layer_norm_forward(*x_in, ln1_s, ln1_o, T, d, lc.ln1_xhat, lc.ln1_rstd, ln_out);

        linear_forward(ln_out, ckpt.params[base + slot_wq], ckpt.params[base + slot_bq], T, d, d,
                       lc.q);
        linear_forward(ln_out, ckpt.params[base + slot_wk], ckpt.params[base + slot_bk], T, d, d,
                       lc.k);
        linear_forward(ln_out, ckpt.params[base + slot_wv], ckpt.params[base + slot_bv], T, d, d,
                       lc.v);

        lc.att.assign(H * T * T, 0.0);
        lc.ctx.assign(T * d, 0.0);
        std::vector<double> scores(T);
        for (std::size_t h = 0; h < H; ++h) {
            std::size_t oh = h * dh;
            for (std::size_t t = 0; t < T; ++t) {
                double max_score = -1e300;
                for (std::size_t u = 0; u <= t; ++u) {
                    double s = 0.0;
                    const double* qt = &lc.q[t * d + oh];
                    const double* ku = &lc.k[u * d + oh];
                    for (std::size_t j = 0; j < dh; ++j) s += qt[j] * ku[j];
                    s *= inv_sqrt_dh;
                    scores[u] = s;
                    max_score = std::max(max_score, s);
                }
                double denom = 0.0;
                for (std::size_t u = 0; u <= t; ++u) {
                    double e = std::exp(scores[u] - max_score);
                    scores[u] = e;
                    denom += e;
                }
                double* att_row = &lc.att[(h * T + t) * T];
                double* ctx_t = &lc.ctx[t * d + oh];
                for (std::size_t u = 0; u <= t; ++u) {
                    double p = scores[u] / denom;
                    att_row[u] = p;
                    const double* vu = &lc.v[u * d + oh];
                    for (std::size_t j = 0; j < dh; ++j) ctx_t[j] += p * vu[j];
                }
            }
        }

        std::vector<double> attn_out;
        linear_forward(lc.ctx, ckpt.params[base + slot_wo], ckpt.params[base + slot_bo], T, d, d,
                       attn_out);
        if (use_dropout) apply_dropout(attn_out, lc.attn_drop_mask, cfg.dropout, *rng);

        lc.x_mid.assign(T * d, 0.0);
        for (std::size_t i = 0; i < T * d; ++i) lc.x_mid[i] = (*x_in)[i] + attn_out[i];

        const tensor& ln2_s = ckpt.params[base + slot_ln2_scale];
        const tensor& ln2_o = ckpt.params[base + slot_ln2_offset];
        layer_norm_forward(lc.x_mid, ln2_s, ln2_o, T, d, lc.ln2_xhat, lc.ln2_rstd, ln_out);

        linear_forward(ln_out, ckpt.params[base + slot_w1], ckpt.params[base + slot_b1], T, d, f,
                       lc.h1);
        lc.act.assign(T * f, 0.0);
        for (std::size_t i = 0; i < T * f; ++i) lc.act[i] = gelu(lc.h1[i]);

        std::vector<double> mlp_out;
        linear_forward(lc.act, ckpt.params[base + slot_w2], ckpt.params[base + slot_b2], T, f, d,
                       mlp_out);
        if (use_dropout) apply_dropout(mlp_out, lc.mlp_drop_mask, cfg.dropout, *rng);

        lc.x_out.assign(T * d, 0.0);
        for (std::size_t i = 0; i < T * d; ++i) lc.x_out[i] = lc.x_mid[i] + mlp_out[i];
        x_in = &lc.x_out;
    }

    const tensor& lnf_s = ckpt.params[2 + cfg.n_layers * tensors_per_layer];
    const tensor& lnf_o = ckpt.params[2 + cfg.n_layers * tensors_per_layer + 1];
    layer_norm_forward(*x_in, lnf_s, lnf_o, T, d, fc.lnf_xhat, fc.lnf_rstd, fc.y);

    const tensor& out_proj = ckpt.params[2 + cfg.n_layers * tensors_per_layer + 2];
    fc.logits.assign(T * V, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double* yt = &fc.y[t * d];
        double* lt = &fc.logits[t * V];
        for (std::size_t i = 0; i < d; ++i) {
            double yv = yt[i];
            const double* wrow = &out_proj.data[i * V];
            for (std::size_t j = 0; j < V; ++j) lt[j] += yv * wrow[j];
        }
    }
}

}  // namespace

std::vector<std::vector<double>> forward(const checkpoint& ckpt, const token_sequence& tokens) {
    ckpt.config.validate();
    forward_cache fc;
    forward_pass(ckpt, tokens, fc, nullptr);
    const std::size_t V = ckpt.config.vocab_size;
    std::vector<std::vector<double>> logits(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        logits[t].assign(fc.logits.begin() + static_cast<std::ptrdiff_t>(t * V),
                         fc.logits.begin() + static_cast<std::ptrdiff_t>((t + 1) * V));
    }
    return logits;
}

std::vector<double> attention_row_sums(const checkpoint& ckpt, const token_sequence& tokens) {
    ckpt.config.validate();
    forward_cache fc;
    forward_pass(ckpt, tokens, fc, nullptr);
    const std::size_t T = tokens.size();
    const std::size_t H = ckpt.config.n_heads;
    std::vector<double> sums;
    sums.reserve(ckpt.config.n_layers * H * T);
    for (const layer_cache& lc : fc.layers) {
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                double s = 0.0;
                for (std::size_t u = 0; u <= t; ++u) s += lc.att[(h * T + t) * T + u];
                sums.push_back(s);
            }
        }
    }
    return sums;
}

namespace {

struct loss_terms {
    double sum = 0.0;
    std::size_t count = 0;
    // dlogits for the backward pass, already scaled to the summed loss
    std::vector<double> dlogits;
};

loss_terms cross_entropy_from_logits(const std::vector<double>& logits, const token_sequence& tokens,
                                     const std::vector<std::uint8_t>& mask, std::size_t V,
                                     bool build_grad) {
    const std::size_t T = tokens.size();
    loss_terms out;
    if (build_grad) out.dlogits.assign(T * V, 0.0);
    std::vector<double> probs(V);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        if (!mask[t + 1]) continue;
        const double* lt = &logits[t * V];
        double max_logit = lt[0];
        for (std::size_t j = 1; j < V; ++j) max_logit = std::max(max_logit, lt[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < V; ++j) {
            probs[j] = std::exp(lt[j] - max_logit);
            denom += probs[j];
        }
        std::size_t target = tokens[t + 1];
        out.sum += -(lt[target] - max_logit - std::log(denom));
        ++out.count;
        if (build_grad) {
            double* dl = &out.dlogits[t * V];
            for (std::size_t j = 0; j < V; ++j) dl[j] = probs[j] / denom;
            dl[target] -= 1.0;
        }
    }
    return out;
}

void check_loss_inputs(const token_sequence& tokens, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != tokens.size()) {
        throw config_error("loss mask length " + std::to_string(mask.size()) +
                           " does not match sequence length " + std::to_string(tokens.size()));
    }
    bool any = false;
    for (std::size_t t = 1; t < mask.size(); ++t) any = any || mask[t] != 0;
    if (!any) throw empty_loss_mask_error();
}

// Backward through the whole network; grads aligned with ckpt.params.
void backward_pass(const checkpoint& ckpt, const token_sequence& tokens, const forward_cache& fc,
                   const std::vector<double>& dlogits, std::vector<std::vector<double>>& grads) {
    const model_config& cfg = ckpt.config;
    const std::size_t T = tokens.size();
    const std::size_t d = cfg.d_model;
    const std::size_t H = cfg.n_heads;
    const std::size_t dh = d / H;
    const std::size_t f = cfg.d_ff;
    const std::size_t V = cfg.vocab_size;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool used_dropout = !fc.emb_drop_mask.empty();

    const std::size_t lnf_idx = 2 + cfg.n_layers * tensors_per_layer;
    const tensor& lnf_s = ckpt.params[lnf_idx];
    const tensor& out_proj = ckpt.params[lnf_idx + 2];

    // logits -> y and out_proj
    std::vector<double> dy(T * d, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double* dl = &dlogits[t * V];
        const double* yt = &fc.y[t * d];
        double* dyt = &dy[t * d];
        for (std::size_t i = 0; i < d; ++i) {
            const double* wrow = &out_proj.data[i * V];
            double* gw = &grads[lnf_idx + 2][i * V];
            double acc = 0.0;
            double yv = yt[i];
            for (std::size_t j = 0; j < V; ++j) {
                acc += dl[j] * wrow[j];
                gw[j] += yv * dl[j];
            }
            dyt[i] = acc;
        }
    }

    // final layer norm
    std::vector<double> dx(T * d, 0.0);
    layer_norm_backward(dy, fc.lnf_xhat, fc.lnf_rstd, lnf_s, T, d, dx, &grads[lnf_idx],
                        &grads[lnf_idx + 1]);

    std::vector<double> d_ln_out(T * d);
    std::vector<double> dq(T * d), dk(T * d), dv(T * d), dctx(T * d);
    std::vector<double> dh1(T * f), dact(T * f);

    for (std::size_t l = cfg.n_layers; l-- > 0;) {
        const layer_cache& lc = fc.layers[l];
        std::size_t base = layer_base(l);

        // ---- MLP sublayer: x_out = x_mid + drop(mlp_out) ----
        std::vector<double> dmlp(dx);  // grad into mlp branch
        if (used_dropout) {
            for (std::size_t i = 0; i < dmlp.size(); ++i) dmlp[i] *= lc.mlp_drop_mask[i];
        }
        // dx continues into x_mid via the residual; accumulate LN2 backward into it.

        // mlp_out = act . w2 + b2
        const tensor& w2 = ckpt.params[base + slot_w2];
        std::fill(dact.begin(), dact.end(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const double* dmt = &dmlp[t * d];
            const double* at = &lc.act[t * f];
            double* dat = &dact[t * f];
            for (std::size_t i = 0; i < f; ++i) {
                const double* wrow = &w2.data[i * d];
                double* gw = &grads[base + slot_w2][i * d];
                double acc = 0.0;
                double av = at[i];
                for (std::size_t j = 0; j < d; ++j) {
                    acc += dmt[j] * wrow[j];
                    gw[j] += av * dmt[j];
                }
                dat[i] = acc;
            }
            double* gb = grads[base + slot_b2].data();
            for (std::size_t j = 0; j < d; ++j) gb[j] += dmt[j];
        }
        // act = gelu(h1)
        for (std::size_t i = 0; i < T * f; ++i) dh1[i] = dact[i] * gelu_grad(lc.h1[i]);
        // h1 = ln2_out . w1 + b1 ; rebuild ln2_out from cache
        const tensor& w1 = ckpt.params[base + slot_w1];
        const tensor& ln2_s = ckpt.params[base + slot_ln2_scale];
        const tensor& ln2_o = ckpt.params[base + slot_ln2_offset];
        std::fill(d_ln_out.begin(), d_ln_out.end(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const double* dht = &dh1[t * f];
            double* dlt = &d_ln_out[t * d];
            for (std::size_t i = 0; i < d; ++i) {
                double ln_out_ti = lc.ln2_xhat[t * d + i] * ln2_s.data[i] + ln2_o.data[i];
                const double* wrow = &w1.data[i * f];
                double* gw = &grads[base + slot_w1][i * f];
                double acc = 0.0;
                for (std::size_t j = 0; j < f; ++j) {
                    acc += dht[j] * wrow[j];
                    gw[j] += ln_out_ti * dht[j];
                }
                dlt[i] = acc;
            }
            double* gb = grads[base + slot_b1].data();
            for (std::size_t j = 0; j < f; ++j) gb[j] += dht[j];
        }
        layer_norm_backward(d_ln_out, lc.ln2_xhat, lc.ln2_rstd, ln2_s, T, d, dx,
                            &grads[base + slot_ln2_scale], &grads[base + slot_ln2_offset]);

        // ---- attention sublayer: x_mid = x_in + drop(attn_out) ----
        std::vector<double> dattn(dx);
        if (used_dropout) {
            for (std::size_t i = 0; i < dattn.size(); ++i) dattn[i] *= lc.attn_drop_mask[i];
        }

        // attn_out = ctx . wo + bo
        const tensor& wo = ckpt.params[base + slot_wo];
        std::fill(dctx.begin(), dctx.end(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const double* dat = &dattn[t * d];
            const double* ct = &lc.ctx[t * d];
            double* dct = &dctx[t * d];
            for (std::size_t i = 0; i < d; ++i) {
                const double* wrow = &wo.data[i * d];
                double* gw = &grads[base + slot_wo][i * d];
                double acc = 0.0;
                double cv = ct[i];
                for (std::size_t j = 0; j < d; ++j) {
                    acc += dat[j] * wrow[j];
                    gw[j] += cv * dat[j];
                }
                dct[i] = acc;
            }
            double* gb = grads[base + slot_bo].data();
            for (std::size_t j = 0; j < d; ++j) gb[j] += dat[j];
        }

        // ctx, att -> q, k, v
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        std::vector<double> datt_row(T);
        for (std::size_t h = 0; h < H; ++h) {
            std::size_t oh = h * dh;
            for (std::size_t t = 0; t < T; ++t) {
                const double* att_row = &lc.att[(h * T + t) * T];
                const double* dct = &dctx[t * d + oh];
                // datt[u] = dctx_t . v_u ; dv_u += att[u] * dctx_t
                double dot_sum = 0.0;
                for (std::size_t u = 0; u <= t; ++u) {
                    const double* vu = &lc.v[u * d + oh];
                    double* dvu = &dv[u * d + oh];
                    double acc = 0.0;
                    double p = att_row[u];
                    for (std::size_t j = 0; j < dh; ++j) {
                        acc += dct[j] * vu[j];
                        dvu[j] += p * dct[j];
                    }
                    datt_row[u] = acc;
                    dot_sum += acc * p;
                }
                // softmax backward, then scores -> q,k
                const double* qt = &lc.q[t * d + oh];
                double* dqt = &dq[t * d + oh];
                for (std::size_t u = 0; u <= t; ++u) {
                    double ds = att_row[u] * (datt_row[u] - dot_sum) * inv_sqrt_dh;
                    if (ds == 0.0) continue;
                    const double* ku = &lc.k[u * d + oh];
                    double* dku = &dk[u * d + oh];
                    for (std::size_t j = 0; j < dh; ++j) {
                        dqt[j] += ds * ku[j];
                        dku[j] += ds * qt[j];
                    }
                }
            }
        }

        // q/k/v = ln1_out . w + b
        const tensor& ln1_s = ckpt.params[base + slot_ln1_scale];
        const tensor& ln1_o = ckpt.params[base + slot_ln1_offset];
        std::fill(d_ln_out.begin(), d_ln_out.end(), 0.0);
        struct proj {
            const std::vector<double>* dout;
            std::size_t w_slot;
            std::size_t b_slot;
        };
        const proj projections[3] = {{&dq, slot_wq, slot_bq},
                                     {&dk, slot_wk, slot_bk},
                                     {&dv, slot_wv, slot_bv}};
        for (const proj& pr : projections) {
            const tensor& w = ckpt.params[base + pr.w_slot];
            for (std::size_t t = 0; t < T; ++t) {
                const double* dot = &(*pr.dout)[t * d];
                double* dlt = &d_ln_out[t * d];
                for (std::size_t i = 0; i < d; ++i) {
                    double ln_out_ti = lc.ln1_xhat[t * d + i] * ln1_s.data[i] + ln1_o.data[i];
                    const double* wrow = &w.data[i * d];
                    double* gw = &grads[base + pr.w_slot][i * d];
                    double acc = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        acc += dot[j] * wrow[j];
                        gw[j] += ln_out_ti * dot[j];
                    }
                    dlt[i] += acc;
                }
                double* gb = grads[base + pr.b_slot].data();
                for (std::size_t j = 0; j < d; ++j) gb[j] += dot[j];
            }
        }
        layer_norm_backward(d_ln_out, lc.ln1_xhat, lc.ln1_rstd, ln1_s, T, d, dx,
                            &grads[base + slot_ln1_scale], &grads[base + slot_ln1_offset]);
    }

    // embedding grads
    if (used_dropout) {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= fc.emb_drop_mask[i];
    }
    for (std::size_t t = 0; t < T; ++t) {
        double* gt = &grads[0][static_cast<std::size_t>(tokens[t]) * d];
        double* gp = &grads[1][t * d];
        const double* dxt = &dx[t * d];
        for (std::size_t i = 0; i < d; ++i) {
            gt[i] += dxt[i];
            gp[i] += dxt[i];
        }
    }
}

}  // namespace

double loss(const checkpoint& ckpt, const token_sequence& tokens,
            const std::vector<std::uint8_t>& loss_mask) {
    ckpt.config.validate();
    check_loss_inputs(tokens, loss_mask);
    forward_cache fc;
    forward_pass(ckpt, tokens, fc, nullptr);
    loss_terms terms =
        cross_entropy_from_logits(fc.logits, tokens, loss_mask, ckpt.config.vocab_size, false);
    return terms.sum / static_cast<double>(terms.count);
}

loss_grad_result loss_with_gradients(const checkpoint& ckpt, const token_sequence& tokens,
                                     const std::vector<std::uint8_t>& loss_mask,
                                     std::vector<std::vector<double>>& grads, det_rng* dropout_rng) {
    check_loss_inputs(tokens, loss_mask);
    if (grads.size() != ckpt.params.size()) {
        grads.assign(ckpt.params.size(), {});
        for (std::size_t i = 0; i < grads.size(); ++i) {
            grads[i].assign(ckpt.params[i].numel(), 0.0);
        }
    }
    forward_cache fc;
    forward_pass(ckpt, tokens, fc, dropout_rng);
    loss_terms terms =
        cross_entropy_from_logits(fc.logits, tokens, loss_mask, ckpt.config.vocab_size, true);
    backward_pass(ckpt, tokens, fc, terms.dlogits, grads);
    return {terms.sum, terms.count};
}

namespace {

struct adam_state {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
};

void adam_step(checkpoint& ckpt, std::vector<std::vector<double>>& grads, adam_state& state,
               const train_config& cfg) {
    if (cfg.grad_clip) {
        double norm_sq = 0.0;
        for (const auto& g : grads) {
            for (double x : g) norm_sq += x * x;
        }
        double norm = std::sqrt(norm_sq);
        if (norm > *cfg.grad_clip) {
            double scale = *cfg.grad_clip / norm;
            for (auto& g : grads) {
                for (double& x : g) x *= scale;
            }
        }
    }
    ++state.t;
    double bc1 = 1.0 - std::pow(adam_beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(adam_beta2, static_cast<double>(state.t));
    for (std::size_t p = 0; p < ckpt.params.size(); ++p) {
        auto& data = ckpt.params[p].data;
        auto& m = state.m[p];
        auto& v = state.v[p];
        const auto& g = grads[p];
        for (std::size_t i = 0; i < data.size(); ++i) {
            m[i] = adam_beta1 * m[i] + (1.0 - adam_beta1) * g[i];
            v[i] = adam_beta2 * v[i] + (1.0 - adam_beta2) * g[i] * g[i];
            // learning_rate == 0 must leave parameters bitwise untouched
            if (cfg.learning_rate != 0.0) {
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + adam_eps);
            }
        }
    }
}

}  // namespace

checkpoint train(const checkpoint& ckpt, const std::vector<train_example>& corpus,
                 const train_config& cfg, std::vector<double>* epoch_losses) {
    ckpt.config.validate();
    cfg.validate();
    for (const train_example& ex : corpus) {
        if (ex.tokens.size() > ckpt.config.max_context) {
            throw context_overflow_error("training sequence of length " +
                                         std::to_string(ex.tokens.size()) + " exceeds max_context " +
                                         std::to_string(ckpt.config.max_context));
        }
        check_loss_inputs(ex.tokens, ex.loss_mask);
    }

    checkpoint out = ckpt;
    adam_state state;
    state.m.resize(out.params.size());
    state.v.resize(out.params.size());
    for (std::size_t p = 0; p < out.params.size(); ++p) {
        state.m[p].assign(out.params[p].numel(), 0.0);
        state.v[p].assign(out.params[p].numel(), 0.0);
    }

    det_rng rng(cfg.seed);
    // separate stream so dropout draws do not disturb the shuffle sequence
    det_rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    det_rng* drop = out.config.dropout > 0.0 ? &dropout_rng : nullptr;
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::vector<double>> grads;
    std::size_t step = 0;

    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_sum = 0.0;
        std::size_t epoch_targets = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (grads.size() != out.params.size()) {
                grads.assign(out.params.size(), {});
                for (std::size_t p = 0; p < grads.size(); ++p) {
                    grads[p].assign(out.params[p].numel(), 0.0);
                }
            } else {
                for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
            }
            double batch_sum = 0.0;
            std::size_t batch_targets = 0;
            for (std::size_t i = start; i < end; ++i) {
                const train_example& ex = corpus[order[i]];
                loss_grad_result r = loss_with_gradients(out, ex.tokens, ex.loss_mask, grads, drop);
                batch_sum += r.loss_sum;
                batch_targets += r.n_targets;
            }
            double batch_loss = batch_sum / static_cast<double>(batch_targets);
            ++step;
            if (!std::isfinite(batch_loss)) {
                throw divergence_error(step, "non-finite training loss");
            }
            double inv = 1.0 / static_cast<double>(batch_targets);
            for (auto& g : grads) {
                for (double& x : g) x *= inv;
            }
            adam_step(out, grads, state, cfg);
            out.training_step += 1;
            epoch_sum += batch_sum;
            epoch_targets += batch_targets;
        }
        if (epoch_losses) {
            epoch_losses->push_back(epoch_sum / static_cast<double>(epoch_targets));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char ckpt_magic[8] = {'S', 'U', 'M', 'K', 'I', 'T', 'C', 'K'};
constexpr std::uint8_t ckpt_version = 1;

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct reader {
    const std::string& buf;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) {
        if (pos + n > buf.size()) throw io_error(path + ": truncated checkpoint");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        }
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        }
        pos += 8;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const checkpoint& ckpt, const std::string& path) {
    std::string out;
    out.append(ckpt_magic, sizeof(ckpt_magic));
    put_u8(out, ckpt_version);
    put_u32(out, ckpt.config.vocab_size);
    put_u32(out, ckpt.config.d_model);
    put_u32(out, ckpt.config.n_layers);
    put_u32(out, ckpt.config.n_heads);
    put_u32(out, ckpt.config.d_ff);
    put_u32(out, ckpt.config.max_context);
    put_f64(out, ckpt.config.dropout);
    put_u64(out, ckpt.training_step);
    put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const tensor& t : ckpt.params) {
        put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out += t.name;
        put_u8(out, static_cast<std::uint8_t>(t.shape.size()));
        for (std::size_t s : t.shape) put_u32(out, static_cast<std::uint32_t>(s));
        for (double x : t.data) put_f32(out, static_cast<float>(x));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("write failed: " + path);
}

checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    reader r{buf, 0, path};
    if (r.bytes(sizeof(ckpt_magic)) != std::string(ckpt_magic, sizeof(ckpt_magic))) {
        throw io_error(path + ": not a checkpoint file");
    }
    std::uint8_t version = r.u8();
    if (version != ckpt_version) {
        throw io_error(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    checkpoint ckpt;
    ckpt.config.vocab_size = r.u32();
    ckpt.config.d_model = r.u32();
    ckpt.config.n_layers = r.u32();
    ckpt.config.n_heads = r.u32();
    ckpt.config.d_ff = r.u32();
    ckpt.config.max_context = r.u32();
    ckpt.config.dropout = r.f64();
    ckpt.training_step = r.u64();
    ckpt.config.validate();

    std::vector<tensor> expected = make_param_layout(ckpt.config);
    std::uint32_t n_tensors = r.u32();
    if (n_tensors != expected.size()) {
        throw io_error(path + ": tensor count does not match config");
    }
    for (tensor& t : expected) {
        std::string name = r.bytes(r.u16());
        if (name != t.name) throw io_error(path + ": unexpected tensor '" + name + "'");
        std::uint8_t ndims = r.u8();
        if (ndims != t.shape.size()) throw io_error(path + ": tensor rank mismatch for " + name);
        for (std::size_t k = 0; k < t.shape.size(); ++k) {
            if (r.u32() != t.shape[k]) throw io_error(path + ": tensor shape mismatch for " + name);
        }
        for (double& x : t.data) {
            x = static_cast<double>(r.f32());
            if (!std::isfinite(x)) throw io_error(path + ": non-finite value in tensor " + name);
        }
    }
    ckpt.params = std::move(expected);
    return ckpt;
}

}  // namespace sumkit
