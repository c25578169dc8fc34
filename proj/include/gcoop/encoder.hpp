#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gcoop/matrix.hpp"

namespace gcoop {

struct EncoderSpec {
    std::string variant = "meanpool";  // meanpool | toytf
    std::uint64_t seed = 0;
    std::size_t d_word = 16;
    std::size_t d_joint = 32;
    // toytf only
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t ffn_width = 32;
};

// Frozen text encoder f(.): a deterministic map from a token-embedding
// sequence (rows = positions) to a joint-space vector, with an exact
// input-gradient path. Weights never change after seeded construction.
class TextEncoder {
public:
    virtual ~TextEncoder() = default;

    virtual std::size_t d_word() const = 0;
    virtual std::size_t d_joint() const = 0;

    virtual std::vector<double> encode(const Matrix& seq) const = 0;

    // d<upstream, encode(seq)>/dseq: one row of gradient per input position.
    virtual Matrix input_vjp(const Matrix& seq, std::span<const double> upstream) const = 0;

    virtual const EncoderSpec& spec() const = 0;

    // Flattened copy of every weight, for frozen-ness checks.
    virtual std::vector<double> weight_snapshot() const = 0;
};

// mean over positions -> frozen affine -> tanh
class MeanPoolLinear final : public TextEncoder {
public:
    explicit MeanPoolLinear(const EncoderSpec& spec);
    // Explicit weights, for exact-value tests.
    MeanPoolLinear(Matrix weight, std::vector<double> bias);

    std::size_t d_word() const override { return weight_.cols(); }
    std::size_t d_joint() const override { return weight_.rows(); }
    std::vector<double> encode(const Matrix& seq) const override;
    Matrix input_vjp(const Matrix& seq, std::span<const double> upstream) const override;
    const EncoderSpec& spec() const override { return spec_; }
    std::vector<double> weight_snapshot() const override;

private:
    EncoderSpec spec_;
    Matrix weight_;             // d_joint x d_word
    std::vector<double> bias_;  // d_joint
};

// Sinusoidal position encodings, then n_layers of post-norm blocks
// (bidirectional multi-head self-attention, 2-layer tanh feed-forward, each
// with residual + layer norm), mean pooling, frozen linear to d_joint.
class ToyTransformer final : public TextEncoder {
public:
    explicit ToyTransformer(const EncoderSpec& spec);

    std::size_t d_word() const override { return spec_.d_word; }
    std::size_t d_joint() const override { return spec_.d_joint; }
    std::vector<double> encode(const Matrix& seq) const override;
    Matrix input_vjp(const Matrix& seq, std::span<const double> upstream) const override;
    const EncoderSpec& spec() const override { return spec_; }
    std::vector<double> weight_snapshot() const override;

private:
    struct Layer {
        Matrix wq, wk, wv, wo;       // d x d
        Matrix w1, w2;               // d x width, width x d
        std::vector<double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    };
    struct Tape;  // forward activations, defined in the .cpp

    void forward(const Matrix& seq, Tape& tape) const;

    EncoderSpec spec_;
    std::vector<Layer> layers_;
    Matrix w_out_;  // d_word x d_joint
};

std::unique_ptr<TextEncoder> make_encoder(const EncoderSpec& spec);

Matrix sinusoidal_position_encoding(std::size_t n_positions, std::size_t dim);

}  // namespace gcoop
