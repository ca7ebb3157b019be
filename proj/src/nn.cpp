#include "dsdn/nn.hpp"

#include <cmath>

#include "dsdn/errors.hpp"

namespace dsdn {

using ad::Var;

Tensor& ParamStore::create(const std::string& name, Eigen::Index rows,
                           Eigen::Index cols, std::mt19937_64& rng,
                           double init_std) {
  if (index_.count(name))
    throw ConfigError("duplicate parameter name: " + name);
  Mat v(rows, cols);
  std::normal_distribution<double> dist(0.0, init_std);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) v(r, c) = dist(rng);
  tensors_.push_back(std::make_unique<Tensor>(name, std::move(v)));
  index_[name] = tensors_.back().get();
  return *tensors_.back();
}

Tensor& ParamStore::create_const(const std::string& name, Eigen::Index rows,
                                 Eigen::Index cols, double fill) {
  if (index_.count(name))
    throw ConfigError("duplicate parameter name: " + name);
  tensors_.push_back(
      std::make_unique<Tensor>(name, Mat::Constant(rows, cols, fill)));
  index_[name] = tensors_.back().get();
  return *tensors_.back();
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return *it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return *it->second;
}

std::vector<Tensor*> ParamStore::mutable_tensors() {
  std::vector<Tensor*> out;
  out.reserve(tensors_.size());
  for (auto& t : tensors_) out.push_back(t.get());
  return out;
}

void ParamStore::zero_grads() {
  for (auto& t : tensors_) t->zero_grad();
}

void ParamStore::freeze_all() {
  for (auto& t : tensors_) t->trainable = false;
}

void ParamStore::freeze_prefix(const std::string& prefix) {
  for (auto& t : tensors_)
    if (t->name.rfind(prefix, 0) == 0) t->trainable = false;
}

MhaParams make_mha(ParamStore& params, const std::string& prefix, int d_model,
                   int n_heads, std::mt19937_64& rng) {
  if (n_heads < 1 || d_model % n_heads != 0)
    throw ConfigError("d_out (" + std::to_string(d_model) +
                      ") not divisible by n_heads (" + std::to_string(n_heads) +
                      ")");
  const double s = xavier_std(d_model, d_model);
  MhaParams p;
  p.Wq = &params.create(prefix + ".wq", d_model, d_model, rng, s);
  p.Wk = &params.create(prefix + ".wk", d_model, d_model, rng, s);
  p.Wv = &params.create(prefix + ".wv", d_model, d_model, rng, s);
  p.Wo = &params.create(prefix + ".wo", d_model, d_model, rng, s);
  p.n_heads = n_heads;
  return p;
}

Var multi_head_attention(Var query, Var keys, Var values, const MhaParams& p,
                         const std::vector<std::uint8_t>& mask,
                         std::vector<Mat>* weights) {
  const Eigen::Index d = query->cols();
  if (keys->cols() != d || values->cols() != d)
    throw ArgumentError("multi_head_attention: width mismatch");
  if (keys->rows() != values->rows())
    throw ArgumentError("multi_head_attention: key/value length mismatch");
  if (static_cast<Eigen::Index>(mask.size()) != keys->rows())
    throw ArgumentError("multi_head_attention: mask length mismatch");
  if (d % p.n_heads != 0)
    throw ConfigError("multi_head_attention: d_out not divisible by n_heads");
  ad::Tape& tape = *query->tape;
  const Eigen::Index dh = d / p.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Var Q = ad::matmul(query, tape.param(*p.Wq));
  Var K = ad::matmul(keys, tape.param(*p.Wk));
  Var V = ad::matmul(values, tape.param(*p.Wv));

  if (weights) weights->clear();
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(p.n_heads));
  for (int h = 0; h < p.n_heads; ++h) {
    Var qh = ad::cols(Q, h * dh, dh);
    Var kh = ad::cols(K, h * dh, dh);
    Var vh = ad::cols(V, h * dh, dh);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    Var attn = ad::softmax_rows_masked(scores, mask);
    if (weights) weights->push_back(attn->value);
    heads.push_back(ad::matmul(attn, vh));
  }
  Var merged = p.n_heads == 1 ? heads[0] : ad::concat_cols(heads);
  return ad::matmul(merged, tape.param(*p.Wo));
}

TransformerParams make_transformer(ParamStore& params, const std::string& prefix,
                                   int d_model, int n_heads, int n_layers,
                                   int d_ff, std::mt19937_64& rng) {
  if (n_layers < 1) throw ConfigError("transformer needs n_layers >= 1");
  TransformerParams p;
  for (int l = 0; l < n_layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    TransformerLayerParams layer;
    layer.attn = make_mha(params, lp + ".attn", d_model, n_heads, rng);
    layer.ln1_g = &params.create_const(lp + ".ln1.g", 1, d_model, 1.0);
    layer.ln1_b = &params.create_const(lp + ".ln1.b", 1, d_model, 0.0);
    layer.ffn_w1 = &params.create(lp + ".ffn.w1", d_model, d_ff, rng,
                                  xavier_std(d_model, d_ff));
    layer.ffn_b1 = &params.create_const(lp + ".ffn.b1", 1, d_ff, 0.0);
    layer.ffn_w2 = &params.create(lp + ".ffn.w2", d_ff, d_model, rng,
                                  xavier_std(d_ff, d_model));
    layer.ffn_b2 = &params.create_const(lp + ".ffn.b2", 1, d_model, 0.0);
    layer.ln2_g = &params.create_const(lp + ".ln2.g", 1, d_model, 1.0);
    layer.ln2_b = &params.create_const(lp + ".ln2.b", 1, d_model, 0.0);
    p.layers.push_back(layer);
  }
  return p;
}

Var transformer_encoder(Var inputs, const TransformerParams& p,
                        const std::vector<std::uint8_t>& mask) {
  if (inputs->rows() < 1)
    throw ArgumentError("transformer_encoder: empty input");
  ad::Tape& tape = *inputs->tape;
  Var x = inputs;
  for (const auto& layer : p.layers) {
    Var attn = multi_head_attention(x, x, x, layer.attn, mask);
    x = ad::layer_norm_rows(ad::add(x, attn), tape.param(*layer.ln1_g),
                            tape.param(*layer.ln1_b));
    Var h = ad::relu(ad::add_rowvec(ad::matmul(x, tape.param(*layer.ffn_w1)),
                                    tape.param(*layer.ffn_b1)));
    Var ff = ad::add_rowvec(ad::matmul(h, tape.param(*layer.ffn_w2)),
                            tape.param(*layer.ffn_b2));
    x = ad::layer_norm_rows(ad::add(x, ff), tape.param(*layer.ln2_g),
                            tape.param(*layer.ln2_b));
  }
  return x;
}

BaseEncoderParams make_base_encoder(ParamStore& params, const std::string& prefix,
                                    int vocab_size, int max_len, int d_model,
                                    int n_heads, int n_layers, int d_ff,
                                    std::mt19937_64& rng) {
  BaseEncoderParams enc;
  enc.prefix = prefix;
  // Embedding rows are renormalized by the first residual LayerNorm, so a
  // unit-ish scale just keeps token identity dominant over position.
  enc.tok_emb = &params.create(prefix + ".tok_emb", vocab_size, d_model, rng, 0.1);
  enc.pos_emb = &params.create(prefix + ".pos_emb", max_len, d_model, rng, 0.02);
  enc.stack = make_transformer(params, prefix, d_model, n_heads, n_layers,
                               d_ff, rng);
  return enc;
}

Var base_encode(ad::Tape& tape, ParamStore& /*params*/,
                const BaseEncoderParams& enc, const TokenSequence& seq) {
  if (seq.ids.empty()) throw ArgumentError("base_encode: empty sequence");
  if (seq.ids.size() != seq.mask.size())
    throw ArgumentError("base_encode: mask length mismatch");
  if (static_cast<Eigen::Index>(seq.ids.size()) > enc.pos_emb->value.rows())
    throw ArgumentError("base_encode: sequence longer than position table");
  std::vector<int> positions(seq.ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i)
    positions[i] = static_cast<int>(i);
  Var tok = ad::embedding(tape, *enc.tok_emb, seq.ids);
  Var pos = ad::embedding(tape, *enc.pos_emb, positions);
  return transformer_encoder(ad::add(tok, pos), enc.stack, seq.mask);
}

}  // namespace dsdn
