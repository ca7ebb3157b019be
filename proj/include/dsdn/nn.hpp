#ifndef DSDN_NN_HPP
#define DSDN_NN_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dsdn/autodiff.hpp"
#include "dsdn/tokenizer.hpp"

namespace dsdn {

// Glorot-style initialization scale for a rows x cols weight matrix. Keeps
// activations O(1) through matmuls so even frozen random encoders produce
// input-sensitive outputs.
inline double xavier_std(Eigen::Index rows, Eigen::Index cols) {
  return std::sqrt(2.0 / static_cast<double>(rows + cols));
}

// Owns all named parameter tensors of a model, in creation order. Names are
// stable across runs and are the checkpoint key space.
class ParamStore {
 public:
  Tensor& create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                 std::mt19937_64& rng, double init_std);
  Tensor& create_const(const std::string& name, Eigen::Index rows,
                       Eigen::Index cols, double fill);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::unique_ptr<Tensor>>& tensors() const { return tensors_; }
  std::vector<Tensor*> mutable_tensors();

  void zero_grads();
  void freeze_all();
  // Marks every tensor whose name starts with `prefix` non-trainable.
  void freeze_prefix(const std::string& prefix);

 private:
  std::vector<std::unique_ptr<Tensor>> tensors_;
  std::map<std::string, Tensor*> index_;
};

struct MhaParams {
  Tensor* Wq = nullptr;
  Tensor* Wk = nullptr;
  Tensor* Wv = nullptr;
  Tensor* Wo = nullptr;
  int n_heads = 1;
};

MhaParams make_mha(ParamStore& params, const std::string& prefix, int d_model,
                   int n_heads, std::mt19937_64& rng);

// Scaled dot-product multi-head attention with output projection.
// query: m x d, keys/values: L x d, mask: length-L validity bits.
// Per-head attention weights are written to `weights` when non-null.
ad::Var multi_head_attention(ad::Var query, ad::Var keys, ad::Var values,
                             const MhaParams& p,
                             const std::vector<std::uint8_t>& mask,
                             std::vector<Mat>* weights = nullptr);

struct TransformerLayerParams {
  MhaParams attn;
  Tensor* ln1_g = nullptr;
  Tensor* ln1_b = nullptr;
  Tensor* ffn_w1 = nullptr;
  Tensor* ffn_b1 = nullptr;
  Tensor* ffn_w2 = nullptr;
  Tensor* ffn_b2 = nullptr;
  Tensor* ln2_g = nullptr;
  Tensor* ln2_b = nullptr;
};

struct TransformerParams {
  std::vector<TransformerLayerParams> layers;
};

TransformerParams make_transformer(ParamStore& params, const std::string& prefix,
                                   int d_model, int n_heads, int n_layers,
                                   int d_ff, std::mt19937_64& rng);

// Post-norm encoder stack: x = LN(x + SelfAttn(x)); x = LN(x + FFN(x)).
ad::Var transformer_encoder(ad::Var inputs, const TransformerParams& p,
                            const std::vector<std::uint8_t>& mask);

// Token + learned position embeddings followed by a transformer stack; the
// BERT stand-ins for context, teacher, student, and the fixed encoder.
struct BaseEncoderParams {
  Tensor* tok_emb = nullptr;
  Tensor* pos_emb = nullptr;
  TransformerParams stack;
  std::string prefix;
};

BaseEncoderParams make_base_encoder(ParamStore& params, const std::string& prefix,
                                    int vocab_size, int max_len, int d_model,
                                    int n_heads, int n_layers, int d_ff,
                                    std::mt19937_64& rng);

// Full per-position hidden states over the token sequence.
ad::Var base_encode(ad::Tape& tape, ParamStore& params,
                    const BaseEncoderParams& enc, const TokenSequence& seq);

}  // namespace dsdn

#endif  // DSDN_NN_HPP
