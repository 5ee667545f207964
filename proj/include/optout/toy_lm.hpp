#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "optout/tensor.hpp"
#include "optout/tokenizer.hpp"

namespace optout {

struct ModelConfig {
  std::size_t context_length = 64;
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t d_ff = 0;  // 0 means 4 * d_model
  double init_std = 0.08;
  double layer_norm_eps = 1e-5;
  std::uint64_t seed = 0;

  std::size_t ff_width() const { return d_ff == 0 ? 4 * d_model : d_ff; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Deep copy of every parameter matrix, tagged with the training stage it came from.
struct ParamSnapshot {
  ParamSet params;
  std::string step_tag;

  friend bool operator==(const ParamSnapshot&, const ParamSnapshot&) = default;
};

/// Decoder-only transformer (pre-LayerNorm, causal multi-head attention,
/// tanh-GELU MLP, learned positions, untied output head) in double precision
/// with hand-written backpropagation.
class TransformerLM {
 public:
  TransformerLM(ModelConfig config, Tokenizer tokenizer);

  const ModelConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  std::size_t vocab_size() const { return tokenizer_.size(); }

  const ParamSet& params() const { return params_; }
  ParamSet& mutable_params() { return params_; }
  std::size_t num_parameters() const { return params_.total_size(); }

  ParamSnapshot snapshot(std::string tag) const { return {params_, std::move(tag)}; }
  /// Throws ShapeError when the snapshot layout does not match this model.
  void restore(const ParamSnapshot& snapshot);

  /// Log-probabilities of the next token at every position (rows = positions).
  Matrix forward_logprobs(std::span<const int> tokens) const;

  /// Log-probabilities of the token following the whole sequence.
  std::vector<double> next_token_logprobs(std::span<const int> tokens) const;

  /// Sum over answer positions of log p(answer_t | prompt, answer_<t).
  double seq_logprob(std::span<const int> prompt, std::span<const int> answer) const;

  /// Per-answer-token log-probabilities.
  std::vector<double> token_logprobs(std::span<const int> prompt,
                                     std::span<const int> answer) const;

  /// Returns seq_logprob and adds weight * d(seq_logprob)/d(params) into grads.
  double accumulate_seq_logprob_grad(std::span<const int> prompt, std::span<const int> answer,
                                     double weight, ParamSet& grads) const;
  /// Same, with the weight chosen from the sequence log-probability once it
  /// is known. Throws NumericError when that log-probability is not finite.
  double accumulate_seq_logprob_grad(std::span<const int> prompt, std::span<const int> answer,
                                     const std::function<double(double)>& weight_of,
                                     ParamSet& grads) const;

  /// Argmax decoding; lowest id wins ties; stops on <eos>, max_new, or the context limit.
  std::vector<int> greedy_decode(std::span<const int> prompt, std::size_t max_new) const;

 private:
  struct Workspace;

  void check_tokens(std::span<const int> tokens) const;
  void forward(std::span<const int> tokens, std::size_t first_output, Workspace& ws) const;
  void backward(std::span<const int> tokens, const Matrix& dlogits, std::size_t first_output,
                Workspace& ws, ParamSet& grads) const;

  ModelConfig config_;
  Tokenizer tokenizer_;
  ParamSet params_;
};

/// Evaluation view of a model: prompt construction plus an optional system
/// instruction prepended to every question. Never alters parameters.
class ModelView {
 public:
  ModelView(const TransformerLM& model) : model_(&model) {}  // NOLINT(google-explicit-constructor)
  ModelView(const TransformerLM& model, std::string system_prefix);

  const TransformerLM& model() const { return *model_; }
  const std::string& system_prefix() const { return system_prefix_; }

  /// <bos> [system prefix] q: question a:
  std::vector<int> prompt_tokens(const std::string& question) const;
  /// answer words followed by <eos>
  std::vector<int> answer_tokens(const std::string& answer) const;

  double seq_logprob(const std::string& question, const std::string& answer) const;
  std::string greedy_answer(const std::string& question, std::size_t max_new) const;

 private:
  const TransformerLM* model_;
  std::string system_prefix_;
  std::vector<int> prefix_tokens_;
};

/// Prompt/answer token layout shared by training and evaluation.
std::vector<int> encode_prompt(const Tokenizer& tok, const std::string& question,
                               std::span<const int> prefix = {});
std::vector<int> encode_answer(const Tokenizer& tok, const std::string& answer);

}  // namespace optout
