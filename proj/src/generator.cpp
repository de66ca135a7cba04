#include "oats/generator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "oats/checkpoint.hpp"

using nlohmann::json;

namespace oats::generator {

namespace {

std::atomic<long> g_generator_invocations{0};

// ----------------------------- primitives ---------------------------------

int conv_out_len(const Conv1dLayer& l, int n_in) {
    const int pad = (l.k - 1) / 2;
    return (n_in + 2 * pad - l.k) / l.stride + 1;
}

void conv_forward(const Conv1dLayer& l, const Tens3& in, Tens3& out) {
    const int pad = (l.k - 1) / 2;
    const int n_out = conv_out_len(l, in.n);
    out = Tens3(in.b, l.cout, n_out);
    for (int bi = 0; bi < in.b; ++bi) {
        for (int co = 0; co < l.cout; ++co) {
            double* orow = out.channel(bi, co);
            for (int no = 0; no < n_out; ++no) orow[no] = l.b[co];
            for (int ci = 0; ci < l.cin; ++ci) {
                const double* irow = in.channel(bi, ci);
                const double* wrow = &l.w[(static_cast<size_t>(co) * l.cin + ci) * l.k];
                for (int kk = 0; kk < l.k; ++kk) {
                    const double wv = wrow[kk];
                    const int off = kk - pad;
                    // valid range of no with no*stride + off inside the input
                    int lo = off < 0 ? (-off + l.stride - 1) / l.stride : 0;
                    int hi = (in.n - 1 - off) / l.stride;
                    if (hi > n_out - 1) hi = n_out - 1;
                    const double* ip = irow + off;
                    if (l.stride == 1) {
                        for (int no = lo; no <= hi; ++no) orow[no] += wv * ip[no];
                    } else {
                        for (int no = lo; no <= hi; ++no)
                            orow[no] += wv * ip[no * l.stride];
                    }
                }
            }
        }
    }
}

// grad_in may be null when the input is data.
void conv_backward(const Conv1dLayer& l, const Tens3& in, const Tens3& grad_out, Tens3* grad_in,
                   Conv1dLayer& grad_l) {
    const int pad = (l.k - 1) / 2;
    if (grad_in) *grad_in = Tens3(in.b, in.c, in.n);
    const int n_out = grad_out.n;
    for (int bi = 0; bi < in.b; ++bi) {
        for (int co = 0; co < l.cout; ++co) {
            const double* gorow = grad_out.channel(bi, co);
            double gb = 0.0;
            for (int no = 0; no < n_out; ++no) gb += gorow[no];
            grad_l.b[co] += gb;
            for (int ci = 0; ci < l.cin; ++ci) {
                const double* irow = in.channel(bi, ci);
                double* girow = grad_in ? grad_in->channel(bi, ci) : nullptr;
                double* gwrow = &grad_l.w[(static_cast<size_t>(co) * l.cin + ci) * l.k];
                const double* wrow = &l.w[(static_cast<size_t>(co) * l.cin + ci) * l.k];
                for (int kk = 0; kk < l.k; ++kk) {
                    const int off = kk - pad;
                    int lo = off < 0 ? (-off + l.stride - 1) / l.stride : 0;
                    int hi = (in.n - 1 - off) / l.stride;
                    if (hi > n_out - 1) hi = n_out - 1;
                    const double* ip = irow + off;
                    double gw = 0.0;
                    const double wv = wrow[kk];
                    if (l.stride == 1) {
                        if (girow) {
                            double* gp = girow + off;
                            for (int no = lo; no <= hi; ++no) {
                                gw += gorow[no] * ip[no];
                                gp[no] += gorow[no] * wv;
                            }
                        } else {
                            for (int no = lo; no <= hi; ++no) gw += gorow[no] * ip[no];
                        }
                    } else {
                        for (int no = lo; no <= hi; ++no) {
                            const int ni = no * l.stride;
                            gw += gorow[no] * ip[ni];
                            if (girow) girow[ni + off] += gorow[no] * wv;
                        }
                    }
                    gwrow[kk] += gw;
                }
            }
        }
    }
}

Tens3 upsample2(const Tens3& in) {
    Tens3 out(in.b, in.c, in.n * 2);
    for (int bi = 0; bi < in.b; ++bi)
        for (int ci = 0; ci < in.c; ++ci) {
            const double* irow = in.channel(bi, ci);
            double* orow = out.channel(bi, ci);
            for (int ni = 0; ni < in.n; ++ni) orow[2 * ni] = orow[2 * ni + 1] = irow[ni];
        }
    return out;
}

Tens3 upsample2_backward(const Tens3& grad_out) {
    Tens3 gin(grad_out.b, grad_out.c, grad_out.n / 2);
    for (int bi = 0; bi < grad_out.b; ++bi)
        for (int ci = 0; ci < grad_out.c; ++ci) {
            const double* gorow = grad_out.channel(bi, ci);
            double* girow = gin.channel(bi, ci);
            for (int ni = 0; ni < gin.n; ++ni) girow[ni] = gorow[2 * ni] + gorow[2 * ni + 1];
        }
    return gin;
}

Mat tens_to_mat(const Tens3& t) {
    Mat m(t.b * t.n, t.c);
    for (int bi = 0; bi < t.b; ++bi)
        for (int ci = 0; ci < t.c; ++ci) {
            const double* row = t.channel(bi, ci);
            for (int ni = 0; ni < t.n; ++ni) m(bi * t.n + ni, ci) = row[ni];
        }
    return m;
}

Tens3 mat_to_tens(const Mat& m, int b, int c, int n) {
    Tens3 t(b, c, n);
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            double* row = t.channel(bi, ci);
            for (int ni = 0; ni < n; ++ni) row[ni] = m(bi * n + ni, ci);
        }
    return t;
}

Mat linear_fwd(const model::LinearLayer& l, const Mat& in) {
    Mat out = matmul(in, l.w);
    for (int i = 0; i < out.rows; ++i) {
        double* r = out.row(i);
        for (int j = 0; j < out.cols; ++j) r[j] += l.b[j];
    }
    return out;
}

// returns grad w.r.t. the input; accumulates layer grads
Mat linear_bwd(const model::LinearLayer& l, const Mat& in, const Mat& grad_out,
               model::LinearLayer& grad_l) {
    Mat gw = matmul_atb(in, grad_out);
    for (size_t i = 0; i < gw.d.size(); ++i) grad_l.w.d[i] += gw.d[i];
    for (int i = 0; i < grad_out.rows; ++i) {
        const double* r = grad_out.row(i);
        for (int j = 0; j < grad_out.cols; ++j) grad_l.b[j] += r[j];
    }
    return matmul_abt(grad_out, l.w);
}

void init_conv(Conv1dLayer& l, RandomStream& rng) {
    const double std = 1.0 / std::sqrt(static_cast<double>(l.cin) * l.k);
    for (auto& v : l.w) v = std * rng.gauss();
    std::fill(l.b.begin(), l.b.end(), 0.0);
}

void init_lin(model::LinearLayer& l, RandomStream& rng, double scale = 0.0) {
    const double std = scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(l.w.rows));
    for (auto& v : l.w.d) v = std * rng.gauss();
    std::fill(l.b.begin(), l.b.end(), 0.0);
}

void init_mat(Mat& m, double std, RandomStream& rng) {
    for (auto& v : m.d) v = std * rng.gauss();
}

}  // namespace

// ----------------------------- config / params ----------------------------

void DenoiserConfig::validate() const {
    if (series_length <= 0 || series_length % 8 != 0)
        fail("ConfigInvalid", "series_length must be a positive multiple of 8");
    if (base_channels <= 0 || n_heads <= 0 || head_dim <= 0 || proto_dim <= 0 ||
        class_embed_dim <= 0 || num_classes <= 0 || time_sin_dim <= 1 || temb_dim <= 0)
        fail("ConfigInvalid", "denoiser dimensions must be positive");
    if (n_prototypes < 2 || n_prototypes > 256)
        fail("ConfigInvalid", "prototype bank size must lie in [2, 256]");
    if (time_sin_dim % 2 != 0) fail("ConfigInvalid", "time_sin_dim must be even");
}

DenoiserParams DenoiserParams::zeros(const DenoiserConfig& cfg) {
    cfg.validate();
    DenoiserParams p;
    p.cfg = cfg;
    p.time_mlp1 = model::LinearLayer(cfg.time_sin_dim, cfg.temb_dim);
    p.time_mlp2 = model::LinearLayer(cfg.temb_dim, cfg.temb_dim);
    p.stem = Conv1dLayer(1, cfg.channels(0), 3, 1);
    const int level_of_block[8] = {0, 1, 2, 3, 3, 2, 1, 0};
    for (int u = 0; u < 8; ++u) {
        const int c = cfg.channels(level_of_block[u]);
        DenoiserBlock& blk = p.blocks[u];
        blk.conv_a = Conv1dLayer(c, c, 3, 1);
        blk.conv_b = Conv1dLayer(c, c, 3, 1);
        blk.temb_proj = model::LinearLayer(cfg.temb_dim, c);
        blk.wq = Mat(c, cfg.attn_dim());
        blk.wk = Mat(cfg.proto_dim, cfg.attn_dim());
        blk.wv = Mat(cfg.proto_dim, cfg.attn_dim());
        blk.ff1 = model::LinearLayer(cfg.attn_dim() + cfg.class_embed_dim, c);
        blk.ff2 = model::LinearLayer(c, c);
    }
    for (int i = 0; i < 3; ++i) {
        p.down[i] = Conv1dLayer(cfg.channels(i), cfg.channels(i + 1), 3, 2);
        p.up[i] = Conv1dLayer(cfg.channels(3 - i), cfg.channels(2 - i), 3, 1);
    }
    p.prototypes = Mat(cfg.n_prototypes, cfg.proto_dim);
    p.class_embeddings = Mat(cfg.num_classes + 1, cfg.class_embed_dim);
    p.null_prototype_bias.assign(static_cast<size_t>(cfg.n_prototypes), 0.0);
    p.head1 = model::LinearLayer(cfg.channels(0), cfg.channels(0));
    p.head2 = model::LinearLayer(cfg.channels(0), 1);
    return p;
}

DenoiserParams DenoiserParams::init(const DenoiserConfig& cfg, RandomStream& rng) {
    DenoiserParams p = zeros(cfg);
    init_lin(p.time_mlp1, rng);
    init_lin(p.time_mlp2, rng);
    init_conv(p.stem, rng);
    for (auto& blk : p.blocks) {
        init_conv(blk.conv_a, rng);
        init_conv(blk.conv_b, rng);
        init_lin(blk.temb_proj, rng);
        init_mat(blk.wq, 1.0 / std::sqrt(static_cast<double>(blk.wq.rows)), rng);
        init_mat(blk.wk, 1.0 / std::sqrt(static_cast<double>(cfg.proto_dim)), rng);
        init_mat(blk.wv, 1.0 / std::sqrt(static_cast<double>(cfg.proto_dim)), rng);
        init_lin(blk.ff1, rng);
        init_lin(blk.ff2, rng);
    }
    for (auto& c : p.down) init_conv(c, rng);
    for (auto& c : p.up) init_conv(c, rng);
    init_mat(p.prototypes, 1.0, rng);
    init_mat(p.class_embeddings, 0.1, rng);
    init_lin(p.head1, rng);
    // Zero head: the untrained model predicts zero noise exactly.
    p.head2.w.set_zero();
    return p;
}

std::vector<TensorRef> DenoiserParams::tensors() {
    std::vector<TensorRef> out;
    auto add_lin = [&out](const std::string& n, model::LinearLayer& l) {
        out.push_back({n + ".w", {l.w.rows, l.w.cols}, &l.w.d});
        out.push_back({n + ".b", {static_cast<int>(l.b.size())}, &l.b});
    };
    auto add_conv = [&out](const std::string& n, Conv1dLayer& c) {
        out.push_back({n + ".w", {c.cout, c.cin, c.k}, &c.w});
        out.push_back({n + ".b", {c.cout}, &c.b});
    };
    auto add_mat = [&out](const std::string& n, Mat& m) {
        out.push_back({n, {m.rows, m.cols}, &m.d});
    };
    add_lin("time_mlp1", time_mlp1);
    add_lin("time_mlp2", time_mlp2);
    add_conv("stem", stem);
    for (int u = 0; u < 8; ++u) {
        const std::string pre = "block" + std::to_string(u) + ".";
        add_conv(pre + "conv_a", blocks[u].conv_a);
        add_conv(pre + "conv_b", blocks[u].conv_b);
        add_lin(pre + "temb_proj", blocks[u].temb_proj);
        add_mat(pre + "wq", blocks[u].wq);
        add_mat(pre + "wk", blocks[u].wk);
        add_mat(pre + "wv", blocks[u].wv);
        add_lin(pre + "ff1", blocks[u].ff1);
        add_lin(pre + "ff2", blocks[u].ff2);
    }
    for (int i = 0; i < 3; ++i) {
        add_conv("down" + std::to_string(i), down[i]);
        add_conv("up" + std::to_string(i), up[i]);
    }
    add_mat("prototypes", prototypes);
    add_mat("class_embeddings", class_embeddings);
    out.push_back({"null_prototype_bias", {static_cast<int>(null_prototype_bias.size())},
                   &null_prototype_bias});
    add_lin("head1", head1);
    add_lin("head2", head2);
    return out;
}

std::vector<ConstTensorRef> DenoiserParams::tensors() const {
    auto mut = const_cast<DenoiserParams*>(this)->tensors();
    return to_const_refs(mut);
}

// ----------------------------- schedule -----------------------------------

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) fail("InvalidRange", "schedule needs at least one step");
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<size_t>(steps));
    if (steps == 1) {
        if (beta_start != beta_end)
            fail("InvalidRange", "a one-step schedule needs beta_start == beta_end");
        if (!(beta_start > 0.0 && beta_start < 1.0))
            fail("InvalidRange", "beta must lie in (0, 1)");
        s.betas[0] = beta_start;
    } else {
        if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
            fail("InvalidRange", "need 0 < beta_start < beta_end < 1");
        for (int t = 0; t < steps; ++t)
            s.betas[t] = beta_start + (beta_end - beta_start) * t / (steps - 1);
    }
    s.alphas_cumprod.resize(static_cast<size_t>(steps));
    double acc = 1.0;
    for (int t = 0; t < steps; ++t) {
        acc *= 1.0 - s.betas[t];
        s.alphas_cumprod[t] = acc;
    }
    return s;
}

Vec q_sample(const Vec& x0, int t, const Vec& noise, const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.steps) fail("InvalidRange", "diffusion timestep out of range");
    if (x0.size() != noise.size()) fail("ShapeMismatch", "noise length differs from x0");
    const double abar = schedule.alphas_cumprod[t - 1];
    const double sa = std::sqrt(abar), sn = std::sqrt(1.0 - abar);
    Vec out(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) out[i] = sa * x0[i] + sn * noise[i];
    return out;
}

// ----------------------------- denoiser forward ---------------------------

namespace {

struct ResCache {
    Tens3 x, ga, r1, gb;  // h = x + conv_b(gelu(r1)), r1 = conv_a(gelu(x)) + temb
};

struct AttnCache {
    Mat hpos;            // R x C (reshape of the residual-stream input)
    Mat q;               // R x A
    Mat k, v;            // N_p x A
    Mat attn;            // R x (heads * N_p)
    Mat attnout;         // R x A
    Mat ff_in;           // R x (A + d_c)
    Mat f1_pre, f1_act;  // R x C
};

struct BlockCache {
    ResCache res;
    AttnCache attn;
    Tens3 out;
    int n_len = 0;
};

Tens3 gelu_tens(const Tens3& x) {
    Tens3 y(x.b, x.c, x.n);
    for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = gelu(x.d[i]);
    return y;
}

}  // namespace

struct DenoiserCache {
    int batch = 0;
    Mat sin_emb, t1_pre, t1_act, temb;
    Tens3 x_in;
    std::array<BlockCache, 8> blocks;
    std::array<Tens3, 3> up_pre_conv;
    Mat head_in, h1_pre, h1_act;
    Mat bias;
    std::vector<int> class_ids;
};

namespace {

Mat time_embedding(const std::vector<int>& t, int sin_dim) {
    const int half = sin_dim / 2;
    Mat emb(static_cast<int>(t.size()), half * 2);
    for (size_t i = 0; i < t.size(); ++i) {
        for (int j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * j / half);
            emb(static_cast<int>(i), j) = std::sin(t[i] * freq);
            emb(static_cast<int>(i), half + j) = std::cos(t[i] * freq);
        }
    }
    return emb;
}

void attention_forward(const DenoiserParams& p, const DenoiserBlock& blk, const Mat& hpos,
                       const Mat& bias, const std::vector<int>& /*class_ids*/, int n_len,
                       AttnCache& c) {
    const auto& cfg = p.cfg;
    const int heads = cfg.n_heads, hd = cfg.head_dim, np = cfg.n_prototypes;
    const int R = hpos.rows;
    c.hpos = hpos;
    c.q = matmul(hpos, blk.wq);
    c.k = matmul(p.prototypes, blk.wk);
    c.v = matmul(p.prototypes, blk.wv);
    c.attn = Mat(R, heads * np);
    c.attnout = Mat(R, cfg.attn_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int r = 0; r < R; ++r) {
        const int sample = r / n_len;
        const double* brow = bias.row(sample);
        for (int h = 0; h < heads; ++h) {
            const double* qrow = c.q.row(r) + h * hd;
            double logits[256];
            double maxv = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < np; ++j) {
                const double* krow = c.k.row(j) + h * hd;
                double s = 0.0;
                for (int d = 0; d < hd; ++d) s += qrow[d] * krow[d];
                logits[j] = s * scale + brow[j];
                maxv = std::max(maxv, logits[j]);
            }
            double denom = 0.0;
            for (int j = 0; j < np; ++j) {
                logits[j] = std::exp(logits[j] - maxv);
                denom += logits[j];
            }
            double* arow = c.attn.row(r) + h * np;
            double* orow = c.attnout.row(r) + h * hd;
            for (int j = 0; j < np; ++j) {
                const double a = logits[j] / denom;
                arow[j] = a;
                const double* vrow = c.v.row(j) + h * hd;
                for (int d = 0; d < hd; ++d) orow[d] += a * vrow[d];
            }
        }
    }
}

// Returns grad w.r.t. hpos; accumulates grads for wq/wk/wv, prototypes and
// the per-sample bias.
Mat attention_backward(const DenoiserParams& p, const DenoiserBlock& blk, const AttnCache& c,
                       const Mat& grad_attnout, int n_len, DenoiserBlock& gblk,
                       DenoiserParams& gparams, Mat& grad_bias) {
    const auto& cfg = p.cfg;
    const int heads = cfg.n_heads, hd = cfg.head_dim, np = cfg.n_prototypes;
    const int R = c.hpos.rows;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Mat gq(R, cfg.attn_dim());
    Mat gk(np, cfg.attn_dim()), gv(np, cfg.attn_dim());
    for (int r = 0; r < R; ++r) {
        const int sample = r / n_len;
        double* gbias = grad_bias.row(sample);
        for (int h = 0; h < heads; ++h) {
            const double* arow = c.attn.row(r) + h * np;
            const double* gorow = grad_attnout.row(r) + h * hd;
            double gattn[256];
            double dot = 0.0;
            for (int j = 0; j < np; ++j) {
                const double* vrow = c.v.row(j) + h * hd;
                double s = 0.0;
                for (int d = 0; d < hd; ++d) {
                    s += gorow[d] * vrow[d];
                    // dV accumulation folded below to keep one pass per j
                }
                gattn[j] = s;
                dot += arow[j] * s;
                double* gvrow = gv.row(j) + h * hd;
                for (int d = 0; d < hd; ++d) gvrow[d] += arow[j] * gorow[d];
            }
            const double* qrow = c.q.row(r) + h * hd;
            double* gqrow = gq.row(r) + h * hd;
            for (int j = 0; j < np; ++j) {
                const double glogit = arow[j] * (gattn[j] - dot);
                gbias[j] += glogit;
                const double* krow = c.k.row(j) + h * hd;
                double* gkrow = gk.row(j) + h * hd;
                const double gs = glogit * scale;
                for (int d = 0; d < hd; ++d) {
                    gqrow[d] += gs * krow[d];
                    gkrow[d] += gs * qrow[d];
                }
            }
        }
    }
    // project back through wq / wk / wv and the prototype bank
    {
        Mat gwq = matmul_atb(c.hpos, gq);
        for (size_t i = 0; i < gwq.d.size(); ++i) gblk.wq.d[i] += gwq.d[i];
    }
    {
        Mat gwk = matmul_atb(p.prototypes, gk);
        for (size_t i = 0; i < gwk.d.size(); ++i) gblk.wk.d[i] += gwk.d[i];
        Mat gp = matmul_abt(gk, blk.wk);
        for (size_t i = 0; i < gp.d.size(); ++i) gparams.prototypes.d[i] += gp.d[i];
    }
    {
        Mat gwv = matmul_atb(p.prototypes, gv);
        for (size_t i = 0; i < gwv.d.size(); ++i) gblk.wv.d[i] += gwv.d[i];
        Mat gp = matmul_abt(gv, blk.wv);
        for (size_t i = 0; i < gp.d.size(); ++i) gparams.prototypes.d[i] += gp.d[i];
    }
    return matmul_abt(gq, blk.wq);
}

void block_forward(const DenoiserParams& p, int u, const Tens3& x, const Mat& temb,
                   const Mat& bias, const std::vector<int>& class_ids, BlockCache& c) {
    const auto& blk = p.blocks[u];
    const auto& cfg = p.cfg;
    c.n_len = x.n;
    c.res.x = x;
    c.res.ga = gelu_tens(x);
    conv_forward(blk.conv_a, c.res.ga, c.res.r1);
    Mat tproj = linear_fwd(blk.temb_proj, temb);  // B x C
    for (int bi = 0; bi < x.b; ++bi)
        for (int ci = 0; ci < x.c; ++ci) {
            double* row = c.res.r1.channel(bi, ci);
            const double tv = tproj(bi, ci);
            for (int ni = 0; ni < x.n; ++ni) row[ni] += tv;
        }
    c.res.gb = gelu_tens(c.res.r1);
    Tens3 r2;
    conv_forward(blk.conv_b, c.res.gb, r2);
    Tens3 h = x;
    for (size_t i = 0; i < h.d.size(); ++i) h.d[i] += r2.d[i];

    Mat hpos = tens_to_mat(h);
    attention_forward(p, blk, hpos, bias, class_ids, x.n, c.attn);

    const int R = hpos.rows;
    c.attn.ff_in = Mat(R, cfg.attn_dim() + cfg.class_embed_dim);
    for (int r = 0; r < R; ++r) {
        const int sample = r / x.n;
        double* row = c.attn.ff_in.row(r);
        const double* arow = c.attn.attnout.row(r);
        for (int j = 0; j < cfg.attn_dim(); ++j) row[j] = arow[j];
        const double* erow = p.class_embeddings.row(class_ids[sample]);
        for (int j = 0; j < cfg.class_embed_dim; ++j) row[cfg.attn_dim() + j] = erow[j];
    }
    c.attn.f1_pre = linear_fwd(blk.ff1, c.attn.ff_in);
    c.attn.f1_act = Mat(c.attn.f1_pre.rows, c.attn.f1_pre.cols);
    for (size_t i = 0; i < c.attn.f1_pre.d.size(); ++i)
        c.attn.f1_act.d[i] = gelu(c.attn.f1_pre.d[i]);
    Mat f2 = linear_fwd(blk.ff2, c.attn.f1_act);
    Tens3 f2t = mat_to_tens(f2, x.b, x.c, x.n);
    c.out = h;
    for (size_t i = 0; i < c.out.d.size(); ++i) c.out.d[i] += f2t.d[i];
}

// grad w.r.t. the block input; accumulates parameter, temb, bias and class
// embedding gradients.
Tens3 block_backward(const DenoiserParams& p, int u, const BlockCache& c, const Tens3& grad_out,
                     const Mat& temb, DenoiserParams& grads, Mat& grad_temb, Mat& grad_bias,
                     const std::vector<int>& class_ids) {
    const auto& blk = p.blocks[u];
    auto& gblk = grads.blocks[u];
    const auto& cfg = p.cfg;
    const int b = grad_out.b, ch = grad_out.c, n = grad_out.n;

    // out = h + FF([attn(h) || e_c]); start with the feed-forward path
    Mat gf2 = tens_to_mat(grad_out);
    Mat gf1_act = linear_bwd(blk.ff2, c.attn.f1_act, gf2, gblk.ff2);
    Mat gf1_pre(gf1_act.rows, gf1_act.cols);
    for (size_t i = 0; i < gf1_pre.d.size(); ++i)
        gf1_pre.d[i] = gf1_act.d[i] * gelu_grad(c.attn.f1_pre.d[i]);
    Mat gff_in = linear_bwd(blk.ff1, c.attn.ff_in, gf1_pre, gblk.ff1);

    const int R = gff_in.rows;
    Mat gattnout(R, cfg.attn_dim());
    for (int r = 0; r < R; ++r) {
        const int sample = r / n;
        const double* grow = gff_in.row(r);
        double* garow = gattnout.row(r);
        for (int j = 0; j < cfg.attn_dim(); ++j) garow[j] = grow[j];
        double* gerow = grads.class_embeddings.row(class_ids[sample]);
        for (int j = 0; j < cfg.class_embed_dim; ++j) gerow[j] += grow[cfg.attn_dim() + j];
    }
    Mat ghpos = attention_backward(p, blk, c.attn, gattnout, n, gblk, grads, grad_bias);

    // dh = residual + attention-query path
    Tens3 gh = grad_out;
    {
        Tens3 gq_t = mat_to_tens(ghpos, b, ch, n);
        for (size_t i = 0; i < gh.d.size(); ++i) gh.d[i] += gq_t.d[i];
    }

    // h = x + conv_b(gelu(r1)); r1 = conv_a(gelu(x)) + temb_proj
    Tens3 ggb;
    conv_backward(blk.conv_b, c.res.gb, gh, &ggb, gblk.conv_b);
    Tens3 gr1(b, ch, n);
    for (size_t i = 0; i < gr1.d.size(); ++i) gr1.d[i] = ggb.d[i] * gelu_grad(c.res.r1.d[i]);
    // temb path: sum over positions per channel
    Mat gtp(b, ch);
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < ch; ++ci) {
            const double* row = gr1.channel(bi, ci);
            double s = 0.0;
            for (int ni = 0; ni < n; ++ni) s += row[ni];
            gtp(bi, ci) = s;
        }
    Mat gtemb_local = linear_bwd(blk.temb_proj, temb, gtp, gblk.temb_proj);
    for (size_t i = 0; i < grad_temb.d.size(); ++i) grad_temb.d[i] += gtemb_local.d[i];
    Tens3 gga;
    conv_backward(blk.conv_a, c.res.ga, gr1, &gga, gblk.conv_a);
    Tens3 gx = gh;
    for (size_t i = 0; i < gx.d.size(); ++i) gx.d[i] += gga.d[i] * gelu_grad(c.res.x.d[i]);
    return gx;
}

}  // namespace

Mat cross_attention_output(const Mat& hpos, const Mat& prototypes, const Mat& wq, const Mat& wk,
                           const Mat& wv, const Mat& bias_rows, const std::vector<int>& row_sample,
                           int n_heads) {
    // standalone variant of attention_forward for tests: row_sample maps each
    // query row to its bias row
    const int hd = wq.cols / n_heads;
    const int np = prototypes.rows;
    Mat q = matmul(hpos, wq), k = matmul(prototypes, wk), v = matmul(prototypes, wv);
    Mat out(hpos.rows, wq.cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int r = 0; r < hpos.rows; ++r) {
        const double* brow = bias_rows.row(row_sample[r]);
        for (int h = 0; h < n_heads; ++h) {
            std::vector<double> logits(np);
            double maxv = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < np; ++j) {
                double s = 0.0;
                for (int d = 0; d < hd; ++d) s += q(r, h * hd + d) * k(j, h * hd + d);
                logits[j] = s * scale + brow[j];
                maxv = std::max(maxv, logits[j]);
            }
            double denom = 0.0;
            for (int j = 0; j < np; ++j) {
                logits[j] = std::exp(logits[j] - maxv);
                denom += logits[j];
            }
            for (int j = 0; j < np; ++j)
                for (int d = 0; d < hd; ++d)
                    out(r, h * hd + d) += logits[j] / denom * v(j, h * hd + d);
        }
    }
    return out;
}

Mat denoise_batch(const DenoiserParams& p, const Mat& x_t, const std::vector<int>& t,
                  const ConditionBatch& cond, std::shared_ptr<DenoiserCache>* cache_out) {
    const auto& cfg = p.cfg;
    cfg.validate();
    const int b = x_t.rows, n = x_t.cols;
    if (n != cfg.series_length) fail("ShapeMismatch", "input length differs from config");
    if (static_cast<int>(t.size()) != b || cond.prototype_bias.rows != b ||
        static_cast<int>(cond.class_ids.size()) != b)
        fail("ShapeMismatch", "per-sample timesteps/conditions disagree with batch");
    if (cond.prototype_bias.cols != cfg.n_prototypes)
        fail("ShapeMismatch", "prototype bias width differs from bank size");
    for (int id : cond.class_ids)
        if (id < 0 || id > cfg.num_classes) fail("ShapeMismatch", "class id out of range");

    auto cache = std::make_shared<DenoiserCache>();
    DenoiserCache& c = *cache;
    c.batch = b;
    c.bias = cond.prototype_bias;
    c.class_ids = cond.class_ids;

    c.sin_emb = time_embedding(t, cfg.time_sin_dim);
    c.t1_pre = linear_fwd(p.time_mlp1, c.sin_emb);
    c.t1_act = Mat(c.t1_pre.rows, c.t1_pre.cols);
    for (size_t i = 0; i < c.t1_pre.d.size(); ++i) c.t1_act.d[i] = gelu(c.t1_pre.d[i]);
    c.temb = linear_fwd(p.time_mlp2, c.t1_act);

    c.x_in = Tens3(b, 1, n);
    for (int bi = 0; bi < b; ++bi) {
        double* row = c.x_in.channel(bi, 0);
        for (int ni = 0; ni < n; ++ni) row[ni] = x_t(bi, ni);
    }
    Tens3 h;
    conv_forward(p.stem, c.x_in, h);

    block_forward(p, 0, h, c.temb, c.bias, c.class_ids, c.blocks[0]);
    Tens3 d0;
    conv_forward(p.down[0], c.blocks[0].out, d0);
    block_forward(p, 1, d0, c.temb, c.bias, c.class_ids, c.blocks[1]);
    Tens3 d1;
    conv_forward(p.down[1], c.blocks[1].out, d1);
    block_forward(p, 2, d1, c.temb, c.bias, c.class_ids, c.blocks[2]);
    Tens3 d2;
    conv_forward(p.down[2], c.blocks[2].out, d2);
    block_forward(p, 3, d2, c.temb, c.bias, c.class_ids, c.blocks[3]);

    block_forward(p, 4, c.blocks[3].out, c.temb, c.bias, c.class_ids, c.blocks[4]);
    const int skip_of_up[3] = {2, 1, 0};
    Tens3 cur = c.blocks[4].out;
    for (int i = 0; i < 3; ++i) {
        c.up_pre_conv[i] = upsample2(cur);
        Tens3 uc;
        conv_forward(p.up[i], c.up_pre_conv[i], uc);
        const Tens3& skip = c.blocks[skip_of_up[i]].out;
        for (size_t j = 0; j < uc.d.size(); ++j) uc.d[j] += skip.d[j];
        block_forward(p, 5 + i, uc, c.temb, c.bias, c.class_ids, c.blocks[5 + i]);
        cur = c.blocks[5 + i].out;
    }

    c.head_in = tens_to_mat(c.blocks[7].out);
    c.h1_pre = linear_fwd(p.head1, c.head_in);
    c.h1_act = Mat(c.h1_pre.rows, c.h1_pre.cols);
    for (size_t i = 0; i < c.h1_pre.d.size(); ++i) c.h1_act.d[i] = gelu(c.h1_pre.d[i]);
    Mat eps_pos = linear_fwd(p.head2, c.h1_act);  // R x 1

    Mat eps(b, n);
    for (int bi = 0; bi < b; ++bi)
        for (int ni = 0; ni < n; ++ni) eps(bi, ni) = eps_pos(bi * n + ni, 0);

    if (cache_out) *cache_out = cache;
    return eps;
}

Vec denoise_step(const DenoiserParams& p, const Vec& x_t, int t, const Condition& cond) {
    Mat x(1, static_cast<int>(x_t.size()));
    for (size_t i = 0; i < x_t.size(); ++i) x(0, static_cast<int>(i)) = x_t[i];
    ConditionBatch cb;
    cb.prototype_bias = Mat(1, static_cast<int>(cond.prototype_bias.size()));
    for (size_t i = 0; i < cond.prototype_bias.size(); ++i)
        cb.prototype_bias(0, static_cast<int>(i)) = cond.prototype_bias[i];
    cb.class_ids = {cond.class_id};
    Mat eps = denoise_batch(p, x, {t}, cb);
    return Vec(eps.d.begin(), eps.d.end());
}

void denoise_backward(const DenoiserParams& p, const DenoiserCache& c, const Mat& grad_eps,
                      DenoiserParams& grads, Mat* grad_bias_out) {
    const auto& cfg = p.cfg;
    const int b = c.batch, n = cfg.series_length;
    Mat grad_bias(b, cfg.n_prototypes);
    Mat grad_temb(b, cfg.temb_dim);

    Mat geps_pos(b * n, 1);
    for (int bi = 0; bi < b; ++bi)
        for (int ni = 0; ni < n; ++ni) geps_pos(bi * n + ni, 0) = grad_eps(bi, ni);

    Mat gh1_act = linear_bwd(p.head2, c.h1_act, geps_pos, grads.head2);
    Mat gh1_pre(gh1_act.rows, gh1_act.cols);
    for (size_t i = 0; i < gh1_pre.d.size(); ++i)
        gh1_pre.d[i] = gh1_act.d[i] * gelu_grad(c.h1_pre.d[i]);
    Mat ghead_in = linear_bwd(p.head1, c.head_in, gh1_pre, grads.head1);
    Tens3 gcur = mat_to_tens(ghead_in, b, cfg.channels(0), n);

    // up path in reverse, accumulating skip gradients
    const int skip_of_up[3] = {2, 1, 0};
    std::array<Tens3, 4> gskip;  // index by block id 0..2 (down skips)
    for (int i = 2; i >= 0; --i) {
        Tens3 gin =
            block_backward(p, 5 + i, c.blocks[5 + i], gcur, c.temb, grads, grad_temb, grad_bias,
                           c.class_ids);
        // gin feeds both the skip tensor and the up conv
        const int sk = skip_of_up[i];
        if (gskip[sk].d.empty())
            gskip[sk] = gin;
        else
            for (size_t j = 0; j < gin.d.size(); ++j) gskip[sk].d[j] += gin.d[j];
        Tens3 gups;
        conv_backward(p.up[i], c.up_pre_conv[i], gin, &gups, grads.up[i]);
        gcur = upsample2_backward(gups);
    }
    gcur = block_backward(p, 4, c.blocks[4], gcur, c.temb, grads, grad_temb, grad_bias,
                          c.class_ids);

    // down path: block3 <- down2 <- block2 <- down1 <- block1 <- down0 <- block0
    gcur = block_backward(p, 3, c.blocks[3], gcur, c.temb, grads, grad_temb, grad_bias,
                          c.class_ids);
    for (int i = 2; i >= 0; --i) {
        Tens3 gblock_out;
        conv_backward(p.down[i], c.blocks[i].out, gcur, &gblock_out, grads.down[i]);
        for (size_t j = 0; j < gblock_out.d.size(); ++j) gblock_out.d[j] += gskip[i].d[j];
        gcur = block_backward(p, i, c.blocks[i], gblock_out, c.temb, grads, grad_temb, grad_bias,
                              c.class_ids);
    }
    conv_backward(p.stem, c.x_in, gcur, nullptr, grads.stem);

    // time-embedding MLP
    Mat gt1_act = linear_bwd(p.time_mlp2, c.t1_act, grad_temb, grads.time_mlp2);
    Mat gt1_pre(gt1_act.rows, gt1_act.cols);
    for (size_t i = 0; i < gt1_pre.d.size(); ++i)
        gt1_pre.d[i] = gt1_act.d[i] * gelu_grad(c.t1_pre.d[i]);
    linear_bwd(p.time_mlp1, c.sin_emb, gt1_pre, grads.time_mlp1);

    if (grad_bias_out) *grad_bias_out = std::move(grad_bias);
}

// ----------------------------- prompt encoder -----------------------------

PromptEncoderParams PromptEncoderParams::zeros(const DenoiserConfig& cfg) {
    PromptEncoderParams e;
    e.conv1 = Conv1dLayer(1, 8, 5, 2);
    e.conv2 = Conv1dLayer(8, 16, 5, 2);
    e.out = model::LinearLayer(16, cfg.n_prototypes);
    return e;
}

PromptEncoderParams PromptEncoderParams::init(const DenoiserConfig& cfg, RandomStream& rng) {
    PromptEncoderParams e = zeros(cfg);
    init_conv(e.conv1, rng);
    init_conv(e.conv2, rng);
    init_lin(e.out, rng, 0.01);
    return e;
}

std::vector<TensorRef> PromptEncoderParams::tensors() {
    std::vector<TensorRef> list;
    list.push_back({"encoder.conv1.w", {conv1.cout, conv1.cin, conv1.k}, &conv1.w});
    list.push_back({"encoder.conv1.b", {conv1.cout}, &conv1.b});
    list.push_back({"encoder.conv2.w", {conv2.cout, conv2.cin, conv2.k}, &conv2.w});
    list.push_back({"encoder.conv2.b", {conv2.cout}, &conv2.b});
    list.push_back({"encoder.out.w", {out.w.rows, out.w.cols}, &out.w.d});
    list.push_back({"encoder.out.b", {static_cast<int>(out.b.size())}, &out.b});
    return list;
}

std::vector<ConstTensorRef> PromptEncoderParams::tensors() const {
    auto mut = const_cast<PromptEncoderParams*>(this)->tensors();
    return to_const_refs(mut);
}

namespace {

struct EncoderCache {
    Tens3 x, c1_out, g1, c2_out, g2;
    Mat pooled;
    int pooled_len = 0;
};

Mat encoder_forward(const PromptEncoderParams& enc, const Mat& prompts, EncoderCache* cache) {
    const int b = prompts.rows, n = prompts.cols;
    EncoderCache local;
    EncoderCache& c = cache ? *cache : local;
    c.x = Tens3(b, 1, n);
    for (int bi = 0; bi < b; ++bi) {
        double* row = c.x.channel(bi, 0);
        for (int ni = 0; ni < n; ++ni) row[ni] = prompts(bi, ni);
    }
    conv_forward(enc.conv1, c.x, c.c1_out);
    c.g1 = gelu_tens(c.c1_out);
    conv_forward(enc.conv2, c.g1, c.c2_out);
    c.g2 = gelu_tens(c.c2_out);
    c.pooled_len = c.g2.n;
    c.pooled = Mat(b, c.g2.c);
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c.g2.c; ++ci) {
            const double* row = c.g2.channel(bi, ci);
            double s = 0.0;
            for (int ni = 0; ni < c.g2.n; ++ni) s += row[ni];
            c.pooled(bi, ci) = s / c.g2.n;
        }
    return linear_fwd(enc.out, c.pooled);
}

void encoder_backward(const PromptEncoderParams& enc, const EncoderCache& c, const Mat& grad_bias,
                      PromptEncoderParams& grads) {
    Mat gpooled = linear_bwd(enc.out, c.pooled, grad_bias, grads.out);
    Tens3 gg2(c.g2.b, c.g2.c, c.g2.n);
    for (int bi = 0; bi < gg2.b; ++bi)
        for (int ci = 0; ci < gg2.c; ++ci) {
            const double gv = gpooled(bi, ci) / c.pooled_len;
            double* row = gg2.channel(bi, ci);
            for (int ni = 0; ni < gg2.n; ++ni) row[ni] = gv;
        }
    for (size_t i = 0; i < gg2.d.size(); ++i) gg2.d[i] *= gelu_grad(c.c2_out.d[i]);
    Tens3 gg1;
    conv_backward(enc.conv2, c.g1, gg2, &gg1, grads.conv2);
    for (size_t i = 0; i < gg1.d.size(); ++i) gg1.d[i] *= gelu_grad(c.c1_out.d[i]);
    conv_backward(enc.conv1, c.x, gg1, nullptr, grads.conv1);
}

}  // namespace

Vec encode_prompt(const PromptEncoderParams& enc, const Vec& prompt) {
    Mat p(1, static_cast<int>(prompt.size()));
    for (size_t i = 0; i < prompt.size(); ++i) p(0, static_cast<int>(i)) = prompt[i];
    Mat out = encoder_forward(enc, p, nullptr);
    return Vec(out.d.begin(), out.d.end());
}

Mat encode_prompt_batch(const PromptEncoderParams& enc, const Mat& prompts) {
    return encoder_forward(enc, prompts, nullptr);
}

// ----------------------------- save / load --------------------------------

void save_generator(const std::string& path, const TrainedGenerator& gen) {
    std::vector<ConstTensorRef> tensors = gen.denoiser.tensors();
    for (auto& t : gen.encoder.tensors()) tensors.push_back(t);
    checkpoint::save_checkpoint(path, tensors);
    const auto& cfg = gen.denoiser.cfg;
    json j;
    j["series_length"] = cfg.series_length;
    j["base_channels"] = cfg.base_channels;
    j["channel_mult"] = cfg.channel_mult;
    j["n_heads"] = cfg.n_heads;
    j["head_dim"] = cfg.head_dim;
    j["n_prototypes"] = cfg.n_prototypes;
    j["proto_dim"] = cfg.proto_dim;
    j["class_embed_dim"] = cfg.class_embed_dim;
    j["num_classes"] = cfg.num_classes;
    j["time_sin_dim"] = cfg.time_sin_dim;
    j["temb_dim"] = cfg.temb_dim;
    j["schedule_steps"] = gen.schedule.steps;
    j["beta_start"] = gen.schedule.betas.front();
    j["beta_end"] = gen.schedule.betas.back();
    std::ofstream out(path + ".json", std::ios::binary);
    if (!out) fail("MissingFile", "cannot write " + path + ".json");
    out << j.dump(2) << "\n";
}

namespace {
DenoiserConfig denoiser_config_from_json_obj(const json& j) {
    DenoiserConfig cfg;
    cfg.series_length = j.value("series_length", cfg.series_length);
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    if (j.contains("channel_mult")) {
        auto cm = j.at("channel_mult").get<std::vector<int>>();
        if (cm.size() != 4) fail_validation("ConfigInvalid", "channel_mult needs 4 entries");
        std::copy(cm.begin(), cm.end(), cfg.channel_mult.begin());
    }
    cfg.n_heads = j.value("n_heads", cfg.n_heads);
    cfg.head_dim = j.value("head_dim", cfg.head_dim);
    cfg.n_prototypes = j.value("n_prototypes", cfg.n_prototypes);
    cfg.proto_dim = j.value("proto_dim", cfg.proto_dim);
    cfg.class_embed_dim = j.value("class_embed_dim", cfg.class_embed_dim);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.time_sin_dim = j.value("time_sin_dim", cfg.time_sin_dim);
    cfg.temb_dim = j.value("temb_dim", cfg.temb_dim);
    return cfg;
}
}  // namespace

DenoiserConfig denoiser_config_from_json(const std::string& json_text) {
    try {
        return denoiser_config_from_json_obj(json::parse(json_text));
    } catch (const json::exception& e) {
        fail_validation("ConfigInvalid", std::string("bad denoiser config: ") + e.what());
    }
}

TrainedGenerator load_generator(const std::string& path) {
    std::ifstream meta(path + ".json");
    if (!meta) fail("MissingCheckpoint", "missing generator config echo " + path + ".json");
    json j;
    try {
        meta >> j;
    } catch (const json::exception& e) {
        fail("MissingCheckpoint", std::string("bad generator config echo: ") + e.what());
    }
    TrainedGenerator gen;
    const DenoiserConfig cfg = denoiser_config_from_json_obj(j);
    gen.denoiser = DenoiserParams::zeros(cfg);
    gen.encoder = PromptEncoderParams::zeros(cfg);
    gen.schedule = build_schedule(j.value("schedule_steps", 200), j.value("beta_start", 0.0005),
                                  j.value("beta_end", 0.1));
    auto named = checkpoint::load_checkpoint(path);
    std::vector<TensorRef> dst = gen.denoiser.tensors();
    for (auto& t : gen.encoder.tensors()) dst.push_back(t);
    checkpoint::apply_checkpoint(dst, named);
    return gen;
}

// ----------------------------- training -----------------------------------

std::vector<corpus::SeriesWindow> sample_fraction(const std::vector<corpus::SeriesWindow>& all,
                                                  double fraction, RandomStream& rng) {
    if (fraction <= 0.0 || fraction > 1.0)
        fail("ConfigInvalid", "train fraction must lie in (0, 1]");
    const long want = std::max<long>(1, std::lround(fraction * static_cast<double>(all.size())));
    std::vector<int> order(all.size());
    for (size_t i = 0; i < all.size(); ++i) order[i] = static_cast<int>(i);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(0, i)]);
    std::vector<corpus::SeriesWindow> out;
    out.reserve(want);
    for (long i = 0; i < want; ++i) out.push_back(all[order[i]]);
    return out;
}

TrainedGenerator train_generator(const std::vector<corpus::SeriesWindow>& slice,
                                 const GeneratorTrainConfig& cfg, uint64_t seed,
                                 GeneratorTrainStats* stats) {
    if (slice.empty()) fail("EmptySubset", "generator training slice is empty");
    cfg.denoiser.validate();

    RandomStream init_rng(mix_seed(seed, 0xA11C, 0));
    RandomStream train_rng(mix_seed(seed, 0xB22D, 0));

    TrainedGenerator gen;
    gen.denoiser = DenoiserParams::init(cfg.denoiser, init_rng);
    gen.encoder = PromptEncoderParams::init(cfg.denoiser, init_rng);
    gen.schedule = build_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);

    const int n = cfg.denoiser.series_length;
    const int b = cfg.batch_size;
    const int np = cfg.denoiser.n_prototypes;
    const int null_class = cfg.denoiser.num_classes;

    // Resample every slice window to the generator length once, up front.
    std::vector<Vec> x0_pool;
    std::vector<int> class_pool;
    x0_pool.reserve(slice.size());
    for (const auto& w : slice) {
        x0_pool.push_back(static_cast<int>(w.values.size()) == n ? w.values
                                                                 : resample_linear(w.values, n));
        int cid = w.subset_id;
        if (cid < 0 || cid >= cfg.denoiser.num_classes)
            fail("ConfigInvalid", "slice window has a class id outside [0, L)");
        class_pool.push_back(cid);
    }

    model::OptimizerState opt;
    opt.mode = model::OptMode::Adam;
    std::vector<TensorRef> params = gen.denoiser.tensors();
    for (auto& t : gen.encoder.tensors()) params.push_back(t);

    if (stats) {
        stats->step_losses.clear();
        stats->dropout_count = 0;
        stats->condition_draws = 0;
    }

    for (int step = 0; step < cfg.steps; ++step) {
        Mat x0(b, n), noise(b, n), xt(b, n), clean(b, n);
        std::vector<int> ts(b);
        std::vector<bool> dropped(b);
        std::vector<int> class_ids(b);
        for (int i = 0; i < b; ++i) {
            const int idx =
                static_cast<int>(train_rng.uniform_int(0, static_cast<long>(x0_pool.size()) - 1));
            const Vec& x = x0_pool[idx];
            ts[i] = static_cast<int>(train_rng.uniform_int(1, gen.schedule.steps));
            const double abar = gen.schedule.alphas_cumprod[ts[i] - 1];
            const double sa = std::sqrt(abar), sn = std::sqrt(1.0 - abar);
            for (int j = 0; j < n; ++j) {
                const double nz = train_rng.gauss();
                x0(i, j) = x[j];
                clean(i, j) = x[j];
                noise(i, j) = nz;
                xt(i, j) = sa * x[j] + sn * nz;
            }
            dropped[i] = train_rng.uniform() < cfg.cond_dropout;
            class_ids[i] = dropped[i] ? null_class : class_pool[idx];
            if (stats) {
                stats->condition_draws += 1;
                if (dropped[i]) stats->dropout_count += 1;
            }
        }

        // Self-prompting: each sample's condition comes from its own clean
        // series; dropped rows use the learned null bias instead.
        EncoderCache enc_cache;
        Mat enc_bias = encoder_forward(gen.encoder, clean, &enc_cache);
        ConditionBatch cond;
        cond.prototype_bias = Mat(b, np);
        cond.class_ids = class_ids;
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < np; ++j)
                cond.prototype_bias(i, j) =
                    dropped[i] ? gen.denoiser.null_prototype_bias[j] : enc_bias(i, j);

        std::shared_ptr<DenoiserCache> cache;
        Mat eps_hat = denoise_batch(gen.denoiser, xt, ts, cond, &cache);

        double loss = 0.0;
        Mat geps(b, n);
        const double inv = 1.0 / (static_cast<double>(b) * n);
        for (size_t i = 0; i < eps_hat.d.size(); ++i) {
            const double diff = eps_hat.d[i] - noise.d[i];
            loss += std::abs(diff) * inv;
            geps.d[i] = (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) * inv;
        }
        if (stats) stats->step_losses.push_back(loss);

        DenoiserParams dgrads = DenoiserParams::zeros(cfg.denoiser);
        PromptEncoderParams egrads = PromptEncoderParams::zeros(cfg.denoiser);
        Mat gbias;
        denoise_backward(gen.denoiser, *cache, geps, dgrads, &gbias);

        Mat gbias_enc(b, np);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < np; ++j) {
                if (dropped[i])
                    dgrads.null_prototype_bias[j] += gbias(i, j);
                else
                    gbias_enc(i, j) = gbias(i, j);
            }
        encoder_backward(gen.encoder, enc_cache, gbias_enc, egrads);

        std::vector<ConstTensorRef> grads = to_const_refs(dgrads.tensors());
        for (auto& t : to_const_refs(egrads.tensors())) grads.push_back(t);
        model::optimizer_step(params, grads, opt, cfg.lr);
    }
    return gen;
}

// ----------------------------- sampling -----------------------------------

namespace {
std::vector<int> ddim_taus(int steps, int n_steps) {
    if (n_steps < 1 || n_steps > steps)
        fail("InvalidRange", "ddim steps must lie in [1, schedule steps]");
    std::vector<int> taus(static_cast<size_t>(n_steps));
    for (int i = 0; i < n_steps; ++i)
        taus[i] = static_cast<int>(
            std::llround(static_cast<double>(i + 1) * steps / static_cast<double>(n_steps)));
    for (int i = 1; i < n_steps; ++i)
        if (taus[i] <= taus[i - 1]) fail("InvalidRange", "degenerate ddim sub-schedule");
    return taus;
}
}  // namespace

Mat ddim_sample_batch(const DenoiserParams& p, const ConditionBatch& cond,
                      const NoiseSchedule& schedule, int n_steps, double guidance_scale,
                      const Mat& x_init) {
    g_generator_invocations.fetch_add(1, std::memory_order_relaxed);
    const auto taus = ddim_taus(schedule.steps, n_steps);
    const int b = x_init.rows;

    ConditionBatch null_cond;
    const bool need_null = guidance_scale != 1.0;
    const bool need_cond = guidance_scale != 0.0;
    if (need_null) {
        null_cond.prototype_bias = Mat(b, cond.prototype_bias.cols);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < cond.prototype_bias.cols; ++j)
                null_cond.prototype_bias(i, j) = p.null_prototype_bias[j];
        null_cond.class_ids.assign(static_cast<size_t>(b), p.cfg.num_classes);
    }

    Mat x = x_init;
    for (int idx = n_steps - 1; idx >= 0; --idx) {
        const int t = taus[idx];
        const int t_prev = idx > 0 ? taus[idx - 1] : 0;
        std::vector<int> ts(static_cast<size_t>(b), t);

        Mat eps;
        if (need_cond && need_null) {
            Mat ec = denoise_batch(p, x, ts, cond);
            Mat en = denoise_batch(p, x, ts, null_cond);
            eps = Mat(ec.rows, ec.cols);
            for (size_t i = 0; i < eps.d.size(); ++i)
                eps.d[i] = en.d[i] + guidance_scale * (ec.d[i] - en.d[i]);
        } else if (need_cond) {
            eps = denoise_batch(p, x, ts, cond);
        } else {
            eps = denoise_batch(p, x, ts, null_cond);
        }

        const double a_t = schedule.alphas_cumprod[t - 1];
        const double a_prev = t_prev >= 1 ? schedule.alphas_cumprod[t_prev - 1] : 1.0;
        const double inv_sa = 1.0 / std::sqrt(a_t);
        const double sn_t = std::sqrt(1.0 - a_t);
        const double sa_p = std::sqrt(a_prev);
        const double sn_p = std::sqrt(1.0 - a_prev);
        for (size_t i = 0; i < x.d.size(); ++i) {
            const double x0 = (x.d[i] - sn_t * eps.d[i]) * inv_sa;
            x.d[i] = sa_p * x0 + sn_p * eps.d[i];
        }
    }
    return x;
}

Vec ddim_sample(const DenoiserParams& p, const Condition& cond, const NoiseSchedule& schedule,
                int n_steps, double guidance_scale, RandomStream& rng) {
    const int n = p.cfg.series_length;
    Mat x_init(1, n);
    for (int i = 0; i < n; ++i) x_init(0, i) = rng.gauss();
    ConditionBatch cb;
    cb.prototype_bias = Mat(1, static_cast<int>(cond.prototype_bias.size()));
    for (size_t i = 0; i < cond.prototype_bias.size(); ++i)
        cb.prototype_bias(0, static_cast<int>(i)) = cond.prototype_bias[i];
    cb.class_ids = {cond.class_id};
    Mat out = ddim_sample_batch(p, cb, schedule, n_steps, guidance_scale, x_init);
    return corpus::standardize(Vec(out.d.begin(), out.d.end()));
}

std::vector<corpus::SeriesWindow> generate_for_step(
    const TrainedGenerator& gen, const std::vector<corpus::SeriesWindow>& guidance, int m,
    int out_length, int ddim_steps, double guidance_scale, uint64_t run_seed, long step_index) {
    if (static_cast<int>(guidance.size()) != m)
        fail("ShapeMismatch", "guidance count differs from requested sample count");
    if (m == 0) return {};
    const auto& cfg = gen.denoiser.cfg;
    const int n = cfg.series_length;
    if (out_length > n)
        fail("ConfigInvalid", "output window longer than the generated series");

    Mat prompts(m, n);
    std::vector<int> class_ids(m);
    for (int i = 0; i < m; ++i) {
        Vec v = static_cast<int>(guidance[i].values.size()) == n
                    ? guidance[i].values
                    : resample_linear(guidance[i].values, n);
        for (int j = 0; j < n; ++j) prompts(i, j) = v[j];
        class_ids[i] = guidance[i].subset_id;
        if (class_ids[i] < 0 || class_ids[i] >= cfg.num_classes)
            fail("ShapeMismatch", "guidance window class id outside [0, L)");
    }

    ConditionBatch cond;
    cond.prototype_bias = encode_prompt_batch(gen.encoder, prompts);
    cond.class_ids = class_ids;

    // Per-prompt streams; lockstep batching gives the same per-row arithmetic
    // as sampling each prompt alone.
    Mat x_init(m, n);
    std::vector<int> offsets(m);
    for (int i = 0; i < m; ++i) {
        RandomStream rs(mix_seed(run_seed, static_cast<uint64_t>(step_index),
                                 static_cast<uint64_t>(i)));
        for (int j = 0; j < n; ++j) x_init(i, j) = rs.gauss();
        offsets[i] = out_length < n ? static_cast<int>(rs.uniform_int(0, n - out_length)) : 0;
    }

    Mat raw = ddim_sample_batch(gen.denoiser, cond, gen.schedule, ddim_steps, guidance_scale,
                                x_init);
    std::vector<corpus::SeriesWindow> out;
    out.reserve(m);
    for (int i = 0; i < m; ++i) {
        Vec crop(static_cast<size_t>(out_length));
        for (int j = 0; j < out_length; ++j) crop[j] = raw(i, offsets[i] + j);
        corpus::SeriesWindow w;
        w.values = corpus::standardize(crop);
        w.subset_id = guidance[i].subset_id;
        w.source_index = corpus::kSyntheticSource;
        out.push_back(std::move(w));
    }
    return out;
}

long generator_invocation_count() {
    return g_generator_invocations.load(std::memory_order_relaxed);
}
void reset_generator_invocation_count() {
    g_generator_invocations.store(0, std::memory_order_relaxed);
}

}  // namespace oats::generator
