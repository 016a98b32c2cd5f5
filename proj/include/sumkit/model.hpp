#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sumkit/tokenizer.hpp"

namespace sumkit {

// Decoder-only transformer hyperparameters (desk scale).
struct model_config {
    std::uint32_t vocab_size = 0;
    std::uint32_t d_model = 128;
    std::uint32_t n_layers = 4;
    std::uint32_t n_heads = 4;
    std::uint32_t d_ff = 512;
    std::uint32_t max_context = 512;
    double dropout = 0.0;

    void validate() const;
    std::size_t parameter_count() const;
};

struct tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return n;
    }
};

// Model state: config plus the full named parameter collection, in a fixed
// order (embeddings, per-layer blocks, final norm, output projection).
struct checkpoint {
    model_config config;
    std::vector<tensor> params;
    std::uint64_t training_step = 0;

    const tensor& find(std::string_view name) const;
    tensor& find(std::string_view name);
};

struct train_config {
    double learning_rate = 1e-3;
    std::uint32_t batch_size = 8;
    std::uint32_t epochs = 1;
    std::uint64_t seed = 0;
    std::optional<double> grad_clip;

    void validate() const;
};

struct train_example {
    token_sequence tokens;
    // Same length as tokens; position t contributes to the loss when
    // loss_mask[t] is set (the model predicts tokens[t] from tokens[0..t-1]).
    std::vector<std::uint8_t> loss_mask;
};

// Scaled-normal initialization, deterministic in (config, seed).
checkpoint init_model(const model_config& config, std::uint64_t seed);

// Next-token logits, one row per position; row t conditions on tokens[0..t].
// Eval mode: dropout is never applied here.
std::vector<std::vector<double>> forward(const checkpoint& ckpt, const token_sequence& tokens);

// Sum of every causal attention row (one value per layer, head, position);
// diagnostic surface for the softmax-normalization invariant.
std::vector<double> attention_row_sums(const checkpoint& ckpt, const token_sequence& tokens);

// Mean next-token cross-entropy over the masked-in target positions.
double loss(const checkpoint& ckpt, const token_sequence& tokens,
            const std::vector<std::uint8_t>& loss_mask);

// Sum of per-target cross-entropies plus its gradient, accumulated into
// grads (aligned with ckpt.params, same shapes). Returns the number of
// target positions. Exposed so the gradient checker can drive it directly.
// dropout_rng non-null enables train-mode dropout.
struct loss_grad_result {
    double loss_sum = 0.0;
    std::size_t n_targets = 0;
};
class det_rng;
loss_grad_result loss_with_gradients(const checkpoint& ckpt, const token_sequence& tokens,
                                     const std::vector<std::uint8_t>& loss_mask,
                                     std::vector<std::vector<double>>& grads,
                                     det_rng* dropout_rng = nullptr);

// Adam fine-tuning loop; single-threaded and bit-deterministic for a fixed
// seed. Per-epoch token-weighted mean losses are appended to epoch_losses
// when provided. Throws divergence_error with the step index if the loss
// leaves the finite range.
checkpoint train(const checkpoint& ckpt, const std::vector<train_example>& corpus,
                 const train_config& cfg, std::vector<double>* epoch_losses = nullptr);

// Binary container: magic + version byte, config header, then named tensors
// as little-endian 32-bit floats with explicit shapes.
void save_checkpoint(const checkpoint& ckpt, const std::string& path);
checkpoint load_checkpoint(const std::string& path);

}  // namespace sumkit
