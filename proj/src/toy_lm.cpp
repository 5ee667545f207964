#include "optout/toy_lm.hpp"

#include <algorithm>
#include <cmath>

#include "optout/common.hpp"

namespace optout {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

std::string layer_name(std::size_t l, const char* suffix) {
  return "layer" + std::to_string(l) + "." + suffix;
}

// out (rows x W.cols) = in (rows x W.rows) * W
void matmul(const Matrix& in, const Matrix& w, Matrix& out) {
  out = Matrix(in.rows, w.cols);
  for (std::size_t i = 0; i < in.rows; ++i) {
    double* o = out.data.data() + i * w.cols;
    const double* x = in.data.data() + i * in.cols;
    for (std::size_t k = 0; k < in.cols; ++k) {
      const double xk = x[k];
      const double* wr = w.data.data() + k * w.cols;
      for (std::size_t j = 0; j < w.cols; ++j) {
        o[j] += xk * wr[j];
      }
    }
  }
}

void add_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double* r = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) {
      r[j] += bias.data[j];
    }
  }
}

// din (rows x W.rows) += dout (rows x W.cols) * W^T
void matmul_backward_input(const Matrix& dout, const Matrix& w, Matrix& din) {
  for (std::size_t i = 0; i < dout.rows; ++i) {
    const double* d = dout.data.data() + i * dout.cols;
    double* o = din.data.data() + i * din.cols;
    for (std::size_t k = 0; k < w.rows; ++k) {
      const double* wr = w.data.data() + k * w.cols;
      double s = 0.0;
      for (std::size_t j = 0; j < w.cols; ++j) {
        s += d[j] * wr[j];
      }
      o[k] += s;
    }
  }
}

// dW += in^T * dout
void matmul_backward_weight(const Matrix& in, const Matrix& dout, Matrix& dw) {
  for (std::size_t i = 0; i < in.rows; ++i) {
    const double* x = in.data.data() + i * in.cols;
    const double* d = dout.data.data() + i * dout.cols;
    for (std::size_t k = 0; k < in.cols; ++k) {
      const double xk = x[k];
      if (xk == 0.0) {
        continue;
      }
      double* g = dw.data.data() + k * dw.cols;
      for (std::size_t j = 0; j < dout.cols; ++j) {
        g[j] += xk * d[j];
      }
    }
  }
}

void bias_backward(const Matrix& dout, Matrix& db) {
  for (std::size_t i = 0; i < dout.rows; ++i) {
    const double* d = dout.data.data() + i * dout.cols;
    for (std::size_t j = 0; j < dout.cols; ++j) {
      db.data[j] += d[j];
    }
  }
}

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> inv_std;
};

void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                LayerNormCache& cache, Matrix& y) {
  const std::size_t d = x.cols;
  cache.xhat = Matrix(x.rows, d);
  cache.inv_std.assign(x.rows, 0.0);
  y = Matrix(x.rows, d);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto xr = x.row(i);
    double mean = 0.0;
    for (double v : xr) {
      mean += v;
    }
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) {
      var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.inv_std[i] = inv;
    auto xh = cache.xhat.row(i);
    auto yr = y.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mean) * inv;
      yr[j] = gain.data[j] * xh[j] + bias.data[j];
    }
  }
}

// dx += LayerNorm backward of dy.
void layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gain,
                         Matrix& dgain, Matrix& dbias, Matrix& dx) {
  const std::size_t d = dy.cols;
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    const auto dyr = dy.row(i);
    const auto xh = cache.xhat.row(i);
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    bool any = false;
    for (std::size_t j = 0; j < d; ++j) {
      any = any || dyr[j] != 0.0;
      dxhat[j] = dyr[j] * gain.data[j];
      dgain.data[j] += dyr[j] * xh[j];
      dbias.data[j] += dyr[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xh[j];
    }
    if (!any) {
      continue;
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    auto dxr = dx.row(i);
    const double inv = cache.inv_std[i];
    for (std::size_t j = 0; j < d; ++j) {
      dxr[j] += inv * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
    }
  }
}

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_derivative(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

void log_softmax_row(std::span<const double> logits, std::span<double> out) {
  double mx = logits[0];
  for (double v : logits) {
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double v : logits) {
    sum += std::exp(v - mx);
  }
  const double lse = mx + std::log(sum);
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = logits[j] - lse;
  }
}

}  // namespace

struct TransformerLM::Workspace {
  struct Layer {
    Matrix x_in;
    LayerNormCache ln1;
    Matrix h1;
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head, T x T (lower triangle used)
    Matrix o;
    Matrix x_mid;
    LayerNormCache ln2;
    Matrix h2;
    Matrix u;
    Matrix g;
  };
  std::vector<Layer> layers;
  Matrix x_final;
  LayerNormCache lnf;
  Matrix hf;      // final normalized states at output positions
  Matrix logits;  // output positions x V
};

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || context_length == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model must be divisible by n_heads");
  }
  if (!(init_std > 0.0)) {
    throw ConfigError("init_std must be positive");
  }
}

TransformerLM::TransformerLM(ModelConfig config, Tokenizer tokenizer)
    : config_(config), tokenizer_(std::move(tokenizer)) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t f = config_.ff_width();
  const std::size_t v = tokenizer_.size();
  Rng rng(config_.seed);
  auto gaussian = [&](Matrix& m, double std) {
    for (auto& x : m.data) {
      x = std * rng.normal();
    }
  };
  gaussian(params_.add("tok_emb", v, d), config_.init_std);
  gaussian(params_.add("pos_emb", config_.context_length, d), config_.init_std);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    params_.add(layer_name(l, "ln1.gain"), 1, d, 1.0);
    params_.add(layer_name(l, "ln1.bias"), 1, d, 0.0);
    gaussian(params_.add(layer_name(l, "attn.wq"), d, d), config_.init_std);
    gaussian(params_.add(layer_name(l, "attn.wk"), d, d), config_.init_std);
    gaussian(params_.add(layer_name(l, "attn.wv"), d, d), config_.init_std);
    gaussian(params_.add(layer_name(l, "attn.wo"), d, d), config_.init_std);
    params_.add(layer_name(l, "ln2.gain"), 1, d, 1.0);
    params_.add(layer_name(l, "ln2.bias"), 1, d, 0.0);
    gaussian(params_.add(layer_name(l, "mlp.w1"), d, f), config_.init_std);
    params_.add(layer_name(l, "mlp.b1"), 1, f, 0.0);
    gaussian(params_.add(layer_name(l, "mlp.w2"), f, d), config_.init_std);
    params_.add(layer_name(l, "mlp.b2"), 1, d, 0.0);
  }
  params_.add("ln_f.gain", 1, d, 1.0);
  params_.add("ln_f.bias", 1, d, 0.0);
  gaussian(params_.add("head", d, v), config_.init_std);
}

void TransformerLM::restore(const ParamSnapshot& snapshot) {
  params_.require_compatible(snapshot.params, "restore");
  params_ = snapshot.params;
}

void TransformerLM::check_tokens(std::span<const int> tokens) const {
  if (tokens.size() > config_.context_length) {
    throw EncodingError("sequence of " + std::to_string(tokens.size()) +
                        " tokens exceeds context length " +
                        std::to_string(config_.context_length));
  }
  const int v = static_cast<int>(tokenizer_.size());
  for (int t : tokens) {
    if (t < 0 || t >= v) {
      throw EncodingError("token id " + std::to_string(t) + " outside vocabulary of " +
                          std::to_string(v));
    }
  }
}

// Layer parameter indices follow the construction order above.
namespace {
constexpr std::size_t kLayerParams = 12;
constexpr std::size_t kFirstLayerParam = 2;
}  // namespace

void TransformerLM::forward(std::span<const int> tokens, std::size_t first_output,
                            Workspace& ws) const {
  const std::size_t T = tokens.size();
  const std::size_t d = config_.d_model;
  const std::size_t H = config_.n_heads;
  const std::size_t dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double eps = config_.layer_norm_eps;

  const Matrix& tok_emb = params_[0].value;
  const Matrix& pos_emb = params_[1].value;
  Matrix x(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const auto e = tok_emb.row(static_cast<std::size_t>(tokens[t]));
    const auto p = pos_emb.row(t);
    auto xr = x.row(t);
    for (std::size_t j = 0; j < d; ++j) {
      xr[j] = e[j] + p[j];
    }
  }

  ws.layers.resize(config_.n_layers);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::size_t base = kFirstLayerParam + l * kLayerParams;
    const Matrix& ln1g = params_[base + 0].value;
    const Matrix& ln1b = params_[base + 1].value;
    const Matrix& wq = params_[base + 2].value;
    const Matrix& wk = params_[base + 3].value;
    const Matrix& wv = params_[base + 4].value;
    const Matrix& wo = params_[base + 5].value;
    const Matrix& ln2g = params_[base + 6].value;
    const Matrix& ln2b = params_[base + 7].value;
    const Matrix& w1 = params_[base + 8].value;
    const Matrix& b1 = params_[base + 9].value;
    const Matrix& w2 = params_[base + 10].value;
    const Matrix& b2 = params_[base + 11].value;
    auto& c = ws.layers[l];

    c.x_in = std::move(x);
    layer_norm(c.x_in, ln1g, ln1b, eps, c.ln1, c.h1);
    matmul(c.h1, wq, c.q);
    matmul(c.h1, wk, c.k);
    matmul(c.h1, wv, c.v);

    c.o = Matrix(T, d);
    c.probs.assign(H, Matrix(T, T));
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      Matrix& a = c.probs[h];
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = c.q.data.data() + i * d + off;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = c.k.data.data() + j * d + off;
          double s = 0.0;
          for (std::size_t r = 0; r < dh; ++r) {
            s += qi[r] * kj[r];
          }
          s *= scale;
          a(i, j) = s;
          mx = std::max(mx, s);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          a(i, j) = std::exp(a(i, j) - mx);
          sum += a(i, j);
        }
        double* oi = c.o.data.data() + i * d + off;
        for (std::size_t j = 0; j <= i; ++j) {
          a(i, j) /= sum;
          const double w = a(i, j);
          const double* vj = c.v.data.data() + j * d + off;
          for (std::size_t r = 0; r < dh; ++r) {
            oi[r] += w * vj[r];
          }
        }
      }
    }
    Matrix att;
    matmul(c.o, wo, att);
    c.x_mid = c.x_in;
    for (std::size_t i = 0; i < c.x_mid.data.size(); ++i) {
      c.x_mid.data[i] += att.data[i];
    }
    layer_norm(c.x_mid, ln2g, ln2b, eps, c.ln2, c.h2);
    matmul(c.h2, w1, c.u);
    add_bias(c.u, b1);
    c.g = Matrix(c.u.rows, c.u.cols);
    for (std::size_t i = 0; i < c.u.data.size(); ++i) {
      c.g.data[i] = gelu(c.u.data[i]);
    }
    Matrix m;
    matmul(c.g, w2, m);
    add_bias(m, b2);
    x = c.x_mid;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      x.data[i] += m.data[i];
    }
  }

  const std::size_t nparams = params_.size();
  const Matrix& lnfg = params_[nparams - 3].value;
  const Matrix& lnfb = params_[nparams - 2].value;
  const Matrix& head = params_[nparams - 1].value;
  ws.x_final = std::move(x);
  Matrix outputs(T - first_output, d);
  std::copy(ws.x_final.data.begin() + static_cast<std::ptrdiff_t>(first_output * d),
            ws.x_final.data.end(), outputs.data.begin());
  layer_norm(outputs, lnfg, lnfb, eps, ws.lnf, ws.hf);
  matmul(ws.hf, head, ws.logits);
}

void TransformerLM::backward(std::span<const int> tokens, const Matrix& dlogits,
                             std::size_t first_output, Workspace& ws, ParamSet& grads) const {
  const std::size_t T = tokens.size();
  const std::size_t d = config_.d_model;
  const std::size_t H = config_.n_heads;
  const std::size_t dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t nparams = params_.size();

  const Matrix& head = params_[nparams - 1].value;
  matmul_backward_weight(ws.hf, dlogits, grads[nparams - 1].value);
  Matrix dhf(dlogits.rows, d);
  matmul_backward_input(dlogits, head, dhf);
  Matrix dout(dlogits.rows, d);
  layer_norm_backward(dhf, ws.lnf, params_[nparams - 3].value, grads[nparams - 3].value,
                      grads[nparams - 2].value, dout);
  Matrix dx(T, d);
  std::copy(dout.data.begin(), dout.data.end(),
            dx.data.begin() + static_cast<std::ptrdiff_t>(first_output * d));

  for (std::size_t li = config_.n_layers; li-- > 0;) {
    const std::size_t base = kFirstLayerParam + li * kLayerParams;
    const Matrix& ln1g = params_[base + 0].value;
    const Matrix& wq = params_[base + 2].value;
    const Matrix& wk = params_[base + 3].value;
    const Matrix& wv = params_[base + 4].value;
    const Matrix& wo = params_[base + 5].value;
    const Matrix& ln2g = params_[base + 6].value;
    const Matrix& w1 = params_[base + 8].value;
    const Matrix& w2 = params_[base + 10].value;
    auto& c = ws.layers[li];

    // MLP branch: x_out = x_mid + gelu(h2 W1 + b1) W2 + b2
    Matrix dx_mid = dx;
    matmul_backward_weight(c.g, dx, grads[base + 10].value);
    bias_backward(dx, grads[base + 11].value);
    Matrix du(T, c.u.cols);
    matmul_backward_input(dx, w2, du);
    for (std::size_t i = 0; i < du.data.size(); ++i) {
      du.data[i] *= gelu_derivative(c.u.data[i]);
    }
    matmul_backward_weight(c.h2, du, grads[base + 8].value);
    bias_backward(du, grads[base + 9].value);
    Matrix dh2(T, d);
    matmul_backward_input(du, w1, dh2);
    layer_norm_backward(dh2, c.ln2, ln2g, grads[base + 6].value, grads[base + 7].value, dx_mid);

    // Attention branch: x_mid = x_in + O Wo
    matmul_backward_weight(c.o, dx_mid, grads[base + 5].value);
    Matrix d_o(T, d);
    matmul_backward_input(dx_mid, wo, d_o);
    Matrix dq(T, d);
    Matrix dk(T, d);
    Matrix dv(T, d);
    std::vector<double> da(T);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      const Matrix& a = c.probs[h];
      for (std::size_t i = 0; i < T; ++i) {
        const double* doi = d_o.data.data() + i * d + off;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = c.v.data.data() + j * d + off;
          double* dvj = dv.data.data() + j * d + off;
          double s = 0.0;
          const double aij = a(i, j);
          for (std::size_t r = 0; r < dh; ++r) {
            s += doi[r] * vj[r];
            dvj[r] += aij * doi[r];
          }
          da[j] = s;
          dot += aij * s;
        }
        const double* qi = c.q.data.data() + i * d + off;
        double* dqi = dq.data.data() + i * d + off;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = a(i, j) * (da[j] - dot) * scale;
          if (ds == 0.0) {
            continue;
          }
          const double* kj = c.k.data.data() + j * d + off;
          double* dkj = dk.data.data() + j * d + off;
          for (std::size_t r = 0; r < dh; ++r) {
            dqi[r] += ds * kj[r];
            dkj[r] += ds * qi[r];
          }
        }
      }
    }
    matmul_backward_weight(c.h1, dq, grads[base + 2].value);
    matmul_backward_weight(c.h1, dk, grads[base + 3].value);
    matmul_backward_weight(c.h1, dv, grads[base + 4].value);
    Matrix dh1(T, d);
    matmul_backward_input(dq, wq, dh1);
    matmul_backward_input(dk, wk, dh1);
    matmul_backward_input(dv, wv, dh1);
    dx = std::move(dx_mid);
    layer_norm_backward(dh1, c.ln1, ln1g, grads[base + 0].value, grads[base + 1].value, dx);
  }

  Matrix& dtok = grads[0].value;
  Matrix& dpos = grads[1].value;
  for (std::size_t t = 0; t < T; ++t) {
    const auto g = dx.row(t);
    auto te = dtok.row(static_cast<std::size_t>(tokens[t]));
    auto pe = dpos.row(t);
    for (std::size_t j = 0; j < d; ++j) {
      te[j] += g[j];
      pe[j] += g[j];
    }
  }
}

Matrix TransformerLM::forward_logprobs(std::span<const int> tokens) const {
  check_tokens(tokens);
  if (tokens.empty()) {
    return Matrix(0, vocab_size());
  }
  Workspace ws;
  forward(tokens, 0, ws);
  Matrix out(ws.logits.rows, ws.logits.cols);
  for (std::size_t i = 0; i < out.rows; ++i) {
    log_softmax_row(ws.logits.row(i), out.row(i));
  }
  return out;
}

std::vector<double> TransformerLM::next_token_logprobs(std::span<const int> tokens) const {
  check_tokens(tokens);
  if (tokens.empty()) {
    throw EncodingError("next_token_logprobs needs at least one token");
  }
  Workspace ws;
  forward(tokens, tokens.size() - 1, ws);
  std::vector<double> out(vocab_size());
  log_softmax_row(ws.logits.row(0), out);
  return out;
}

std::vector<double> TransformerLM::token_logprobs(std::span<const int> prompt,
                                                  std::span<const int> answer) const {
  if (answer.empty()) {
    return {};
  }
  if (prompt.empty()) {
    throw EncodingError("prompt must contain at least one token");
  }
  std::vector<int> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), answer.begin(), answer.end());
  check_tokens(seq);
  seq.pop_back();
  Workspace ws;
  forward(seq, prompt.size() - 1, ws);
  std::vector<double> out(answer.size());
  std::vector<double> row(vocab_size());
  for (std::size_t i = 0; i < answer.size(); ++i) {
    log_softmax_row(ws.logits.row(i), row);
    out[i] = row[static_cast<std::size_t>(answer[i])];
  }
  return out;
}

double TransformerLM::seq_logprob(std::span<const int> prompt, std::span<const int> answer) const {
  double total = 0.0;
  for (double lp : token_logprobs(prompt, answer)) {
    total += lp;
  }
  return total;
}

double TransformerLM::accumulate_seq_logprob_grad(std::span<const int> prompt,
                                                  std::span<const int> answer, double weight,
                                                  ParamSet& grads) const {
  return accumulate_seq_logprob_grad(prompt, answer, [weight](double) { return weight; }, grads);
}

double TransformerLM::accumulate_seq_logprob_grad(
    std::span<const int> prompt, std::span<const int> answer,
    const std::function<double(double)>& weight_of, ParamSet& grads) const {
  if (answer.empty()) {
    return 0.0;
  }
  if (prompt.empty()) {
    throw EncodingError("prompt must contain at least one token");
  }
  params_.require_compatible(grads, "gradient accumulator");
  std::vector<int> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), answer.begin(), answer.end());
  check_tokens(seq);
  seq.pop_back();
  Workspace ws;
  const std::size_t first = prompt.size() - 1;
  forward(seq, first, ws);

  const std::size_t V = vocab_size();
  Matrix dlogits(answer.size(), V);
  std::vector<double> row(V);
  double total = 0.0;
  for (std::size_t i = 0; i < answer.size(); ++i) {
    log_softmax_row(ws.logits.row(i), row);
    const auto target = static_cast<std::size_t>(answer[i]);
    total += row[target];
    auto dl = dlogits.row(i);
    for (std::size_t j = 0; j < V; ++j) {
      dl[j] = -std::exp(row[j]);
    }
    dl[target] += 1.0;
  }
  if (!is_finite(total)) {
    throw NumericError("sequence log-probability is not finite");
  }
  const double weight = weight_of(total);
  if (weight != 0.0) {
    for (double& x : dlogits.data) {
      x *= weight;
    }
    backward(seq, dlogits, first, ws, grads);
  }
  return total;
}

std::vector<int> TransformerLM::greedy_decode(std::span<const int> prompt,
                                              std::size_t max_new) const {
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  if (max_new == 0) {
    return out;
  }
  check_tokens(seq);
  while (out.size() < max_new && seq.size() < config_.context_length) {
    const std::vector<double> lp = next_token_logprobs(seq);
    int best = 0;
    for (std::size_t j = 1; j < lp.size(); ++j) {
      if (lp[j] > lp[static_cast<std::size_t>(best)]) {
        best = static_cast<int>(j);
      }
    }
    if (best == Tokenizer::kEos) {
      break;
    }
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

std::vector<int> encode_prompt(const Tokenizer& tok, const std::string& question,
                               std::span<const int> prefix) {
  std::vector<int> ids{Tokenizer::kBos};
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  ids.push_back(Tokenizer::kQuestion);
  const auto q = tok.encode(question);
  ids.insert(ids.end(), q.begin(), q.end());
  ids.push_back(Tokenizer::kAnswer);
  return ids;
}

std::vector<int> encode_answer(const Tokenizer& tok, const std::string& answer) {
  std::vector<int> ids = tok.encode(answer);
  ids.push_back(Tokenizer::kEos);
  return ids;
}

ModelView::ModelView(const TransformerLM& model, std::string system_prefix)
    : model_(&model),
      system_prefix_(std::move(system_prefix)),
      prefix_tokens_(model.tokenizer().encode(system_prefix_)) {}

std::vector<int> ModelView::prompt_tokens(const std::string& question) const {
  return encode_prompt(model_->tokenizer(), question, prefix_tokens_);
}

std::vector<int> ModelView::answer_tokens(const std::string& answer) const {
  return encode_answer(model_->tokenizer(), answer);
}

double ModelView::seq_logprob(const std::string& question, const std::string& answer) const {
  return model_->seq_logprob(prompt_tokens(question), answer_tokens(answer));
}

std::string ModelView::greedy_answer(const std::string& question, std::size_t max_new) const {
  const auto ids = model_->greedy_decode(prompt_tokens(question), max_new);
  return model_->tokenizer().decode(ids);
}

}  // namespace optout
