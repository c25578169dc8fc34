#include "gcoop/encoder.hpp"

#include <cmath>

namespace gcoop {

namespace {

void check_seq(const Matrix& seq, std::size_t d_word) {
    if (seq.rows() == 0) raise(ErrorCode::EmptySequence, "encoder input has no positions");
    if (seq.cols() != d_word) raise(ErrorCode::DimensionMismatch, "encoder input width != d_word");
    require_finite(seq.flat(), "encoder input");
}

Matrix seeded_matrix(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    Matrix m(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : m.values()) x = rng.uniform(-scale, scale);
    return m;
}

std::vector<double> mean_rows(const Matrix& m) {
    std::vector<double> mean(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) mean[j] += m(i, j);
    for (double& x : mean) x /= static_cast<double>(m.rows());
    return mean;
}

constexpr double kLnEps = 1e-5;

struct LnCache {
    Matrix xhat;                  // normalized input
    std::vector<double> invstd;   // per row
};

Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
                  LnCache& cache) {
    const std::size_t d = x.cols();
    Matrix y(x.rows(), d);
    cache.xhat = Matrix(x.rows(), d);
    cache.invstd.assign(x.rows(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double s = 1.0 / std::sqrt(var + kLnEps);
        cache.invstd[i] = s;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (x(i, j) - mu) * s;
            cache.xhat(i, j) = xh;
            y(i, j) = gain[j] * xh + bias[j];
        }
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LnCache& cache, std::span<const double> gain) {
    const std::size_t d = dy.cols();
    Matrix dx(dy.rows(), d);
    for (std::size_t i = 0; i < dy.rows(); ++i) {
        double m1 = 0.0;  // mean(dy * gain)
        double m2 = 0.0;  // mean(dy * gain * xhat)
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy(i, j) * gain[j];
            m1 += dxh;
            m2 += dxh * cache.xhat(i, j);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        const double s = cache.invstd[i];
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy(i, j) * gain[j];
            dx(i, j) = s * (dxh - m1 - cache.xhat(i, j) * m2);
        }
    }
    return dx;
}

Matrix col_slice(const Matrix& m, std::size_t c0, std::size_t width) {
    Matrix out(m.rows(), width);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < width; ++j) out(i, j) = m(i, c0 + j);
    return out;
}

void add_col_slice(Matrix& dst, const Matrix& src, std::size_t c0) {
    for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < src.cols(); ++j) dst(i, c0 + j) += src(i, j);
}

Matrix softmax_rows(const Matrix& s) {
    Matrix a(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        const auto p = softmax(s.row(i));
        std::copy(p.begin(), p.end(), a.row(i).begin());
    }
    return a;
}

Matrix softmax_rows_backward(const Matrix& a, const Matrix& da) {
    Matrix ds(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double inner = dot(da.row(i), a.row(i));
        for (std::size_t j = 0; j < a.cols(); ++j) ds(i, j) = a(i, j) * (da(i, j) - inner);
    }
    return ds;
}

}  // namespace

Matrix sinusoidal_position_encoding(std::size_t n_positions, std::size_t dim) {
    Matrix pe(n_positions, dim);
    for (std::size_t pos = 0; pos < n_positions; ++pos) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double exponent = 2.0 * static_cast<double>(j / 2) / static_cast<double>(dim);
            const double omega = std::pow(10000.0, -exponent);
            const double angle = static_cast<double>(pos) * omega;
            pe(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

// ---------------------------------------------------------------------------
// MeanPoolLinear

MeanPoolLinear::MeanPoolLinear(const EncoderSpec& spec) : spec_(spec) {
    spec_.variant = "meanpool";
    Rng rng(spec_.seed);
    weight_ = seeded_matrix(rng, spec_.d_joint, spec_.d_word, spec_.d_word);
    bias_.assign(spec_.d_joint, 0.0);
}

MeanPoolLinear::MeanPoolLinear(Matrix weight, std::vector<double> bias)
    : weight_(std::move(weight)), bias_(std::move(bias)) {
    if (bias_.size() != weight_.rows()) raise(ErrorCode::DimensionMismatch, "MeanPoolLinear bias size");
    spec_.variant = "meanpool";
    spec_.d_word = weight_.cols();
    spec_.d_joint = weight_.rows();
}

std::vector<double> MeanPoolLinear::encode(const Matrix& seq) const {
    check_seq(seq, d_word());
    const auto mean = mean_rows(seq);
    std::vector<double> out(d_joint());
    for (std::size_t i = 0; i < d_joint(); ++i) out[i] = std::tanh(dot(weight_.row(i), mean) + bias_[i]);
    return out;
}

Matrix MeanPoolLinear::input_vjp(const Matrix& seq, std::span<const double> upstream) const {
    check_seq(seq, d_word());
    if (upstream.size() != d_joint()) raise(ErrorCode::DimensionMismatch, "upstream width != d_joint");
    const auto mean = mean_rows(seq);
    // dz_i = u_i * (1 - tanh(z_i)^2), dmean = W^T dz, each position gets dmean/n.
    std::vector<double> dz(d_joint());
    for (std::size_t i = 0; i < d_joint(); ++i) {
        const double t = std::tanh(dot(weight_.row(i), mean) + bias_[i]);
        dz[i] = upstream[i] * (1.0 - t * t);
    }
    const double inv_n = 1.0 / static_cast<double>(seq.rows());
    std::vector<double> per_pos(d_word(), 0.0);
    for (std::size_t i = 0; i < d_joint(); ++i)
        for (std::size_t j = 0; j < d_word(); ++j) per_pos[j] += weight_(i, j) * dz[i];
    Matrix grad(seq.rows(), d_word());
    for (std::size_t k = 0; k < seq.rows(); ++k)
        for (std::size_t j = 0; j < d_word(); ++j) grad(k, j) = per_pos[j] * inv_n;
    return grad;
}

std::vector<double> MeanPoolLinear::weight_snapshot() const {
    std::vector<double> snap(weight_.values());
    snap.insert(snap.end(), bias_.begin(), bias_.end());
    return snap;
}

// ---------------------------------------------------------------------------
// ToyTransformer

struct ToyTransformer::Tape {
    struct LayerTape {
        Matrix x_in;               // layer input
        Matrix q, k, v;            // n x d
        std::vector<Matrix> attn;  // per head, n x n softmax weights
        Matrix concat;             // n x d, heads concatenated (before wo)
        LnCache ln1, ln2;
        Matrix x_mid;              // after attention residual + ln1
        Matrix h;                  // tanh(x_mid w1), n x width
    };
    std::vector<LayerTape> layer;
    Matrix x_final;                // after last block
    std::vector<double> pooled;
    std::vector<double> out;
};

ToyTransformer::ToyTransformer(const EncoderSpec& spec) : spec_(spec) {
    spec_.variant = "toytf";
    if (spec_.n_heads == 0 || spec_.d_word % spec_.n_heads != 0)
        raise(ErrorCode::ConfigInvalid, "n_heads must divide d_word");
    if (spec_.n_layers == 0) raise(ErrorCode::ConfigInvalid, "toytf needs n_layers >= 1");
    Rng rng(spec_.seed);
    const std::size_t d = spec_.d_word;
    const std::size_t w = spec_.ffn_width;
    layers_.resize(spec_.n_layers);
    for (auto& l : layers_) {
        l.wq = seeded_matrix(rng, d, d, d);
        l.wk = seeded_matrix(rng, d, d, d);
        l.wv = seeded_matrix(rng, d, d, d);
        l.wo = seeded_matrix(rng, d, d, d);
        l.w1 = seeded_matrix(rng, d, w, d);
        l.w2 = seeded_matrix(rng, w, d, w);
        l.ln1_gain.assign(d, 1.0);
        l.ln1_bias.assign(d, 0.0);
        l.ln2_gain.assign(d, 1.0);
        l.ln2_bias.assign(d, 0.0);
    }
    w_out_ = seeded_matrix(rng, d, spec_.d_joint, d);
}

void ToyTransformer::forward(const Matrix& seq, Tape& tape) const {
    const std::size_t n = seq.rows();
    const std::size_t d = spec_.d_word;
    const std::size_t heads = spec_.n_heads;
    const std::size_t dh = d / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix x = seq;
    const Matrix pe = sinusoidal_position_encoding(n, d);
    add_inplace(x, pe);

    tape.layer.resize(layers_.size());
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const Layer& l = layers_[li];
        auto& t = tape.layer[li];
        t.x_in = x;
        t.q = matmul(x, l.wq);
        t.k = matmul(x, l.wk);
        t.v = matmul(x, l.wv);
        t.attn.resize(heads);
        t.concat = Matrix(n, d);
        for (std::size_t h = 0; h < heads; ++h) {
            const Matrix qh = col_slice(t.q, h * dh, dh);
            const Matrix kh = col_slice(t.k, h * dh, dh);
            const Matrix vh = col_slice(t.v, h * dh, dh);
            Matrix scores = matmul_nt(qh, kh);
            for (double& s : scores.values()) s *= inv_sqrt_dh;
            t.attn[h] = softmax_rows(scores);
            const Matrix oh = matmul(t.attn[h], vh);
            add_col_slice(t.concat, oh, h * dh);
        }
        Matrix res1 = matmul(t.concat, l.wo);
        add_inplace(res1, x);
        t.x_mid = layer_norm(res1, l.ln1_gain, l.ln1_bias, t.ln1);

        t.h = matmul(t.x_mid, l.w1);
        for (double& z : t.h.values()) z = std::tanh(z);
        Matrix res2 = matmul(t.h, l.w2);
        add_inplace(res2, t.x_mid);
        x = layer_norm(res2, l.ln2_gain, l.ln2_bias, t.ln2);
    }
    tape.x_final = x;
    tape.pooled = mean_rows(x);
    tape.out.assign(spec_.d_joint, 0.0);
    for (std::size_t j = 0; j < spec_.d_joint; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += tape.pooled[i] * w_out_(i, j);
        tape.out[j] = s;
    }
}

std::vector<double> ToyTransformer::encode(const Matrix& seq) const {
    check_seq(seq, spec_.d_word);
    Tape tape;
    forward(seq, tape);
    return tape.out;
}

Matrix ToyTransformer::input_vjp(const Matrix& seq, std::span<const double> upstream) const {
    check_seq(seq, spec_.d_word);
    if (upstream.size() != spec_.d_joint) raise(ErrorCode::DimensionMismatch, "upstream width != d_joint");

    Tape tape;
    forward(seq, tape);

    const std::size_t n = seq.rows();
    const std::size_t d = spec_.d_word;
    const std::size_t heads = spec_.n_heads;
    const std::size_t dh = d / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const double inv_n = 1.0 / static_cast<double>(n);

    // out = pooled * w_out => dpooled = w_out upstream; mean pool spreads it.
    std::vector<double> dpooled(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) dpooled[i] = dot(w_out_.row(i), upstream);
    Matrix dx(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) dx(r, j) = dpooled[j] * inv_n;

    for (std::size_t li = layers_.size(); li-- > 0;) {
        const Layer& l = layers_[li];
        const auto& t = tape.layer[li];

        // ln2(res2) with res2 = x_mid + h w2
        const Matrix dres2 = layer_norm_backward(dx, t.ln2, l.ln2_gain);
        Matrix dx_mid = dres2;
        Matrix dhidden = matmul_nt(dres2, l.w2);  // n x width
        for (std::size_t i = 0; i < dhidden.size(); ++i) {
            const double th = t.h.values()[i];
            dhidden.values()[i] *= (1.0 - th * th);
        }
        add_inplace(dx_mid, matmul_nt(dhidden, l.w1));

        // ln1(res1) with res1 = x_in + concat wo
        const Matrix dres1 = layer_norm_backward(dx_mid, t.ln1, l.ln1_gain);
        Matrix dx_in = dres1;
        const Matrix dconcat = matmul_nt(dres1, l.wo);

        Matrix dq(n, d), dk(n, d), dv(n, d);
        for (std::size_t h = 0; h < heads; ++h) {
            const Matrix qh = col_slice(t.q, h * dh, dh);
            const Matrix kh = col_slice(t.k, h * dh, dh);
            const Matrix vh = col_slice(t.v, h * dh, dh);
            const Matrix doh = col_slice(dconcat, h * dh, dh);
            const Matrix da = matmul_nt(doh, vh);          // n x n
            const Matrix dvh = matmul_tn(t.attn[h], doh);  // n x dh
            Matrix ds = softmax_rows_backward(t.attn[h], da);
            for (double& x : ds.values()) x *= inv_sqrt_dh;
            add_col_slice(dq, matmul(ds, kh), h * dh);
            add_col_slice(dk, matmul_tn(ds, qh), h * dh);
            add_col_slice(dv, dvh, h * dh);
        }
        add_inplace(dx_in, matmul_nt(dq, l.wq));
        add_inplace(dx_in, matmul_nt(dk, l.wk));
        add_inplace(dx_in, matmul_nt(dv, l.wv));
        dx = std::move(dx_in);
    }
    // position encodings are additive constants; gradient passes through.
    return dx;
}

std::vector<double> ToyTransformer::weight_snapshot() const {
    std::vector<double> snap;
    for (const auto& l : layers_) {
        for (const Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2})
            snap.insert(snap.end(), m->values().begin(), m->values().end());
        for (const auto* v : {&l.ln1_gain, &l.ln1_bias, &l.ln2_gain, &l.ln2_bias})
            snap.insert(snap.end(), v->begin(), v->end());
    }
    snap.insert(snap.end(), w_out_.values().begin(), w_out_.values().end());
    return snap;
}

std::unique_ptr<TextEncoder> make_encoder(const EncoderSpec& spec) {
    if (spec.variant == "meanpool") return std::make_unique<MeanPoolLinear>(spec);
    if (spec.variant == "toytf") return std::make_unique<ToyTransformer>(spec);
    raise(ErrorCode::ConfigInvalid, "unknown encoder variant '" + spec.variant + "'");
}

}  // namespace gcoop
