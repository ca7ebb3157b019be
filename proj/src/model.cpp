#include "dsdn/model.hpp"

#include <cmath>

#include "dsdn/errors.hpp"

namespace dsdn {

using ad::Var;

void ModelConfig::validate() const {
  if (d_out < 1) throw ConfigError("d_out must be positive");
  if (n_heads < 1 || d_out % n_heads != 0)
    throw ConfigError("d_out must be divisible by n_heads");
  if (n_enc_layers < 1 || n_turn_layers < 1)
    throw ConfigError("encoder layer counts must be >= 1");
  if (max_len < 8) throw ConfigError("max_len too small");
  if (max_turns < 1) throw ConfigError("max_turns must be >= 1");
}

Var fuse(Var r, Var d) {
  if (r->rows() != d->rows() || r->cols() != d->cols())
    throw ArgumentError("fuse: dimension mismatch");
  return ad::cmax(r, d);
}

Var integrate(Var f, Var r_stu) {
  if (f->rows() != r_stu->rows() || f->cols() != r_stu->cols())
    throw ArgumentError("integrate: dimension mismatch");
  return ad::add(f, r_stu);
}

Var project_contrastive(Var c, Tensor& w3, Tensor& w4) {
  if (c->rows() != 1 || c->cols() != w4.value.cols() ||
      w3.value.cols() != w4.value.rows())
    throw ConfigError("project_contrastive: shape mismatch");
  ad::Tape& tape = *c->tape;
  Var hidden = ad::relu(ad::matmul(c, ad::transpose(tape.param(w4))));
  return ad::matmul(hidden, ad::transpose(tape.param(w3)));
}

Var project_value(Var c, Tensor& w5, Tensor& gain, Tensor& bias) {
  if (c->rows() != 1 || c->cols() != w5.value.cols())
    throw ConfigError("project_value: shape mismatch");
  ad::Tape& tape = *c->tape;
  return ad::layer_norm_rows(ad::matmul(c, ad::transpose(tape.param(w5))),
                             tape.param(gain), tape.param(bias));
}

namespace {

// K x 1 Euclidean distances from a row vector to each candidate row.
Var candidate_distances(Var o, const Mat& candidates) {
  if (candidates.rows() < 1)
    throw SchemaError("value decoding: empty candidate set");
  if (o->rows() != 1 || o->cols() != candidates.cols())
    throw ArgumentError("value decoding: dimension mismatch");
  ad::Tape& tape = *o->tape;
  Var diff = ad::sub(tape.constant(candidates),
                     ad::broadcast_row(o, candidates.rows()));
  return ad::sqrt(ad::row_sums(ad::square(diff)));
}

}  // namespace

Var value_distribution(Var o, const Mat& candidates) {
  Var neg = ad::scale(ad::transpose(candidate_distances(o, candidates)), -1.0);
  return ad::softmax_rows(neg);
}

Var value_nll(Var o, const Mat& candidates, Eigen::Index gold) {
  if (gold < 0 || gold >= candidates.rows())
    throw SchemaError("value decoding: gold candidate index out of range");
  Var dist = candidate_distances(o, candidates);
  Var neg = ad::scale(ad::transpose(dist), -1.0);
  return ad::add(ad::rows(dist, gold, 1), ad::logsumexp_row(neg));
}

Var sop_loss(Var p_sop, const SopLabelMatrix& labels) {
  const int J = labels.n_slots, T = labels.n_turns;
  if (p_sop->rows() != J || p_sop->cols() != T)
    throw ArgumentError("sop_loss: probability matrix shape mismatch");
  if ((p_sop->value.array() <= 0.0).any() || (p_sop->value.array() >= 1.0).any())
    throw NumericError("sop_loss: probability outside (0,1)");
  ad::Tape& tape = *p_sop->tape;
  Var p = ad::clamp(p_sop, 1e-7, 1.0 - 1e-7);
  Mat y(J, T);
  for (int j = 0; j < J; ++j)
    for (int t = 0; t < T; ++t) y(j, t) = labels.at(j, t);
  Var yv = tape.constant(y);
  Var ones = tape.constant(Mat::Ones(J, T));
  Var ll = ad::add(ad::cmul(yv, ad::log(p)),
                   ad::cmul(ad::sub(ones, yv), ad::log(ad::sub(ones, p))));
  return ad::scale(ad::sum(ll), -1.0 / (static_cast<double>(J) * T));
}

Var distill_loss(const std::vector<Var>& r_tea, const std::vector<Var>& r_stu) {
  if (r_tea.size() != r_stu.size() || r_tea.empty())
    throw ArgumentError("distill_loss: feature list size mismatch");
  ad::Tape& tape = *r_tea.front()->tape;
  Var total = tape.scalar(0.0);
  for (std::size_t k = 0; k < r_tea.size(); ++k) {
    ad::check_same_shape(r_tea[k], r_stu[k], "distill_loss");
    total = ad::add(total, ad::mean(ad::square(ad::sub(r_tea[k], r_stu[k]))));
  }
  return ad::scale(total, 1.0 / static_cast<double>(r_tea.size()));
}

Var dsd_loss(Var l_sop, Var l_distill, double alpha) {
  if (alpha <= 0.0 || alpha >= 1.0)
    throw ConfigError("dsd_loss: alpha must lie in (0,1)");
  return ad::add(ad::scale(l_sop, alpha), ad::scale(l_distill, 1.0 - alpha));
}

const std::vector<std::string>& DsdnModel::module_prefixes() {
  static const std::vector<std::string> prefixes = {
      "ctx",      "fixed",    "tea",     "stu",     "attn_turn",
      "attn_dlg", "attn_tea", "attn_stu", "turnseq", "sop",
      "proj",     "value",    "cesop"};
  return prefixes;
}

DsdnModel::DsdnModel(Schema schema, Vocabulary vocab, const ModelConfig& config)
    : schema_(std::move(schema)), vocab_(std::move(vocab)), config_(config) {
  config_.validate();
  schema_.validate();
  const int J = schema_.size();
  for (int j = 0; j < J; ++j) {
    vocab_.add_token(Vocabulary::slot_marker_teacher(j));
    vocab_.add_token(Vocabulary::slot_marker_student(j));
    vocab_.add_text(schema_.slot(j).name);
    for (const auto& v : schema_.slot(j).values) vocab_.add_text(v);
  }

  std::mt19937_64 rng(config_.seed);
  const int d = config_.d_out, h = config_.n_heads, dff = config_.dff();
  const int V = vocab_.size();
  ctx_enc_ = make_base_encoder(params_, "ctx", V, config_.max_len, d, h,
                               config_.n_enc_layers, dff, rng);
  fixed_enc_ = make_base_encoder(params_, "fixed", V, config_.max_len, d, h,
                                 config_.n_enc_layers, dff, rng);
  tea_enc_ = make_base_encoder(params_, "tea", V, config_.max_len, d, h,
                               config_.n_enc_layers, dff, rng);
  stu_enc_ = make_base_encoder(params_, "stu", V, config_.max_len, d, h,
                               config_.n_enc_layers, dff, rng);
  attn_turn_ = make_mha(params_, "attn_turn", d, h, rng);
  attn_dlg_ = make_mha(params_, "attn_dlg", d, h, rng);
  attn_tea_ = make_mha(params_, "attn_tea", d, h, rng);
  attn_stu_ = make_mha(params_, "attn_stu", d, h, rng);
  turnseq_pos_ = &params_.create("turnseq.pos_emb", config_.max_turns, d, rng, 0.02);
  turnseq_ = make_transformer(params_, "turnseq", d, h, config_.n_turn_layers,
                              dff, rng);
  sop_w1_ = &params_.create("sop.w1", 1, d, rng, xavier_std(1, d));
  sop_w2_ = &params_.create("sop.w2", d, d, rng, xavier_std(d, d));
  proj_w3_ = &params_.create("proj.w3", config_.dim1(), config_.dim2(), rng,
                             xavier_std(config_.dim1(), config_.dim2()));
  proj_w4_ = &params_.create("proj.w4", config_.dim2(), d, rng,
                             xavier_std(config_.dim2(), d));
  value_w5_ = &params_.create("value.w5", d, d, rng, xavier_std(d, d));
  value_ln_g_ = &params_.create_const("value.ln.g", 1, d, 1.0);
  value_ln_b_ = &params_.create_const("value.ln.b", 1, d, 0.0);
  cesop_w1_ = &params_.create("cesop.w1", 1, d, rng, xavier_std(1, d));
  cesop_w2_ = &params_.create("cesop.w2", d, d, rng, xavier_std(d, d));

  params_.freeze_prefix("fixed.");
  refresh_fixed_cache();
}

TokenSequence DsdnModel::context_tokens(const std::string& user,
                                        const std::string& system) {
  std::vector<int> u = vocab_.encode(user);
  std::vector<int> s = vocab_.encode(system);
  const std::size_t budget = static_cast<std::size_t>(config_.max_len);
  const std::size_t specials = 3;
  if (u.size() + s.size() + specials > budget) {
    // Truncate from the left of the user utterance on overflow.
    std::size_t excess = u.size() + s.size() + specials - budget;
    if (excess >= u.size())
      throw ArgumentError("context_tokens: system utterance alone overflows");
    u.erase(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(excess));
    ++truncations_;
  }
  TokenSequence seq;
  seq.ids.push_back(vocab_.cls_id());
  seq.ids.insert(seq.ids.end(), u.begin(), u.end());
  seq.ids.push_back(vocab_.sep_id());
  seq.ids.insert(seq.ids.end(), s.begin(), s.end());
  seq.ids.push_back(vocab_.sep_id());
  seq.mask.assign(seq.ids.size(), 1);
  return seq;
}

TokenSequence DsdnModel::teacher_tokens(const State& prev_state,
                                        std::vector<int>* slot_positions) const {
  TokenSequence seq;
  seq.ids.push_back(vocab_.cls_id());
  if (slot_positions) slot_positions->clear();
  for (int j = 0; j < schema_.size(); ++j) {
    const SlotDef& sd = schema_.slot(j);
    auto it = prev_state.find(sd.name);
    if (it == prev_state.end())
      throw SchemaError("teacher input: previous state missing slot '" +
                        sd.name + "'");
    if (slot_positions)
      slot_positions->push_back(static_cast<int>(seq.ids.size()));
    seq.ids.push_back(vocab_.id(Vocabulary::slot_marker_teacher(j)));
    for (int id : vocab_.encode(sd.name)) seq.ids.push_back(id);
    seq.ids.push_back(vocab_.dash_id());
    for (int id : vocab_.encode(it->second)) seq.ids.push_back(id);
  }
  seq.ids.push_back(vocab_.sep_id());
  seq.mask.assign(seq.ids.size(), 1);
  return seq;
}

TokenSequence DsdnModel::student_tokens(std::vector<int>* slot_positions) const {
  TokenSequence seq;
  seq.ids.push_back(vocab_.cls_id());
  if (slot_positions) slot_positions->clear();
  for (int j = 0; j < schema_.size(); ++j) {
    if (slot_positions)
      slot_positions->push_back(static_cast<int>(seq.ids.size()));
    seq.ids.push_back(vocab_.id(Vocabulary::slot_marker_student(j)));
    for (int id : vocab_.encode(schema_.slot(j).name)) seq.ids.push_back(id);
  }
  seq.ids.push_back(vocab_.sep_id());
  seq.mask.assign(seq.ids.size(), 1);
  return seq;
}

Mat DsdnModel::encode_fixed(const TokenSequence& seq) const {
  ad::Tape tape(false);
  auto& self = const_cast<DsdnModel&>(*this);
  Var h = base_encode(tape, self.params_, fixed_enc_, seq);
  return h->value.row(0);
}

void DsdnModel::refresh_fixed_cache() {
  slot_vecs_.clear();
  value_vecs_.clear();
  for (int j = 0; j < schema_.size(); ++j) {
    const SlotDef& sd = schema_.slot(j);
    TokenSequence seq;
    seq.ids.push_back(vocab_.cls_id());
    for (int id : vocab_.encode(sd.name)) seq.ids.push_back(id);
    seq.ids.push_back(vocab_.sep_id());
    seq.mask.assign(seq.ids.size(), 1);
    slot_vecs_.push_back(encode_fixed(seq));

    Mat cand(static_cast<Eigen::Index>(sd.values.size()), config_.d_out);
    for (std::size_t k = 0; k < sd.values.size(); ++k) {
      TokenSequence vs;
      vs.ids.push_back(vocab_.cls_id());
      for (int id : vocab_.encode(sd.values[k])) vs.ids.push_back(id);
      vs.ids.push_back(vocab_.sep_id());
      vs.mask.assign(vs.ids.size(), 1);
      cand.row(static_cast<Eigen::Index>(k)) = encode_fixed(vs);
    }
    value_vecs_.push_back(std::move(cand));
  }
}

Var DsdnModel::encode_context(ad::Tape& tape, const TokenSequence& seq) {
  return base_encode(tape, params_, ctx_enc_, seq);
}

std::vector<Var> DsdnModel::student_slot_states(ad::Tape& tape) {
  std::vector<int> positions;
  TokenSequence seq = student_tokens(&positions);
  Var h = base_encode(tape, params_, stu_enc_, seq);
  std::vector<Var> out;
  out.reserve(positions.size());
  for (int p : positions) out.push_back(ad::rows(h, p, 1));
  return out;
}

Var DsdnModel::dialogue_level_feature(ad::Tape& tape, int slot,
                                      const std::vector<Var>& r_prefix) {
  if (r_prefix.empty())
    throw ArgumentError("dialogue_level_feature: empty turn sequence");
  if (static_cast<int>(r_prefix.size()) > config_.max_turns)
    throw ArgumentError("dialogue_level_feature: dialogue exceeds max_turns");
  std::vector<int> positions(r_prefix.size());
  for (std::size_t i = 0; i < positions.size(); ++i)
    positions[i] = static_cast<int>(i);
  Var seq = ad::add(ad::concat_rows(r_prefix),
                    ad::embedding(tape, *turnseq_pos_, positions));
  std::vector<std::uint8_t> mask(r_prefix.size(), 1);
  Var context = transformer_encoder(seq, turnseq_, mask);
  Var slot_q = tape.constant(slot_vector(slot));
  return multi_head_attention(slot_q, context, context, attn_dlg_, mask);
}

DialogueForward DsdnModel::forward(ad::Tape& tape, const Dialogue& dialogue,
                                   const SopLabelMatrix& labels,
                                   const ForwardOptions& opts) {
  const int J = schema_.size();
  const int T = static_cast<int>(dialogue.turns.size());
  if (T < 1) throw ArgumentError("forward: dialogue has no turns");
  if (labels.n_slots != J || labels.n_turns != T)
    throw ArgumentError("forward: label matrix shape mismatch");

  DialogueForward out;
  std::vector<Var> h_stu = student_slot_states(tape);

  // grid[j][t]
  std::vector<std::vector<Var>> r_turn(J, std::vector<Var>(T, nullptr));
  std::vector<std::vector<Var>> r_stu(J, std::vector<Var>(T, nullptr));
  std::vector<std::vector<Var>> r_tea(J, std::vector<Var>(T, nullptr));
  std::vector<std::vector<Var>> p_sop(J, std::vector<Var>(T, nullptr));

  for (int t = 0; t < T; ++t) {
    const Turn& turn = dialogue.turns[static_cast<std::size_t>(t)];
    TokenSequence ctx_seq = context_tokens(turn.user, turn.system);
    Var ctx = encode_context(tape, ctx_seq);
    for (int j = 0; j < J; ++j) {
      Var slot_q = tape.constant(slot_vector(j));
      r_turn[j][t] =
          multi_head_attention(slot_q, ctx, ctx, attn_turn_, ctx_seq.mask);
      r_stu[j][t] =
          multi_head_attention(h_stu[j], ctx, ctx, attn_stu_, ctx_seq.mask);
    }
    if (opts.need_teacher && opts.distillation_on) {
      State prev;
      if (t == 0) {
        for (const auto& s : schema_.slots) prev[s.name] = kNoneValue;
      } else {
        prev = dialogue.turns[static_cast<std::size_t>(t - 1)].state;
      }
      std::vector<int> positions;
      TokenSequence tea_seq = teacher_tokens(prev, &positions);
      Var h_tea = base_encode(tape, params_, tea_enc_, tea_seq);
      for (int j = 0; j < J; ++j) {
        Var q = ad::rows(h_tea, positions[static_cast<std::size_t>(j)], 1);
        r_tea[j][t] =
            multi_head_attention(q, ctx, ctx, attn_tea_, ctx_seq.mask);
        Var hidden = ad::tanh(
            ad::matmul(r_tea[j][t], ad::transpose(tape.param(*sop_w2_))));
        p_sop[j][t] =
            ad::sigmoid(ad::matmul(hidden, ad::transpose(tape.param(*sop_w1_))));
      }
    }
  }

  const double cells = static_cast<double>(J) * T;
  Var value_total = tape.scalar(0.0);
  std::vector<Var> z_cells(static_cast<std::size_t>(J) * T, nullptr);
  std::vector<Var> ce_cells(static_cast<std::size_t>(J) * T, nullptr);
  out.argmax_states.resize(static_cast<std::size_t>(T));
  out.student_features = Mat::Zero(static_cast<Eigen::Index>(J) * T, config_.d_out);
  if (opts.need_teacher && opts.distillation_on)
    out.teacher_features = Mat::Zero(static_cast<Eigen::Index>(J) * T, config_.d_out);

  for (int j = 0; j < J; ++j) {
    std::vector<Var> prefix;
    prefix.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      prefix.push_back(r_turn[j][t]);
      Var d_feat = dialogue_level_feature(tape, j, prefix);
      Var fused = fuse(r_turn[j][t], d_feat);
      Var c = opts.distillation_on ? integrate(fused, r_stu[j][t]) : fused;
      out.student_features.row(static_cast<Eigen::Index>(j) * T + t) =
          r_stu[j][t]->value;
      if (opts.need_teacher && opts.distillation_on)
        out.teacher_features.row(static_cast<Eigen::Index>(j) * T + t) =
            r_tea[j][t]->value;

      // Decoder: layer-normalized projection, L2-distance softmax.
      Var o = project_value(c, *value_w5_, *value_ln_g_, *value_ln_b_);
      const Mat& cand = candidate_vectors(j);
      Var probs = value_distribution(o, cand);

      // Argmax = nearest candidate; ties break to the lower ordinal.
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < cand.rows(); ++k)
        if (probs->value(0, k) > probs->value(0, best)) best = k;
      out.argmax_states[static_cast<std::size_t>(t)][schema_.slot(j).name] =
          schema_.slot(j).values[static_cast<std::size_t>(best)];

      const std::string& gold =
          dialogue.turns[static_cast<std::size_t>(t)].state.at(schema_.slot(j).name);
      Eigen::Index gold_ix = -1;
      for (std::size_t k = 0; k < schema_.slot(j).values.size(); ++k)
        if (schema_.slot(j).values[k] == gold)
          gold_ix = static_cast<Eigen::Index>(k);
      if (gold_ix < 0)
        throw SchemaError("gold value '" + gold + "' missing from ontology of '" +
                          schema_.slot(j).name + "'");
      value_total = ad::add(value_total, value_nll(o, cand, gold_ix));

      if (opts.need_cl)
        z_cells[static_cast<std::size_t>(j) * T + t] =
            project_contrastive(c, *proj_w3_, *proj_w4_);
      if (opts.ce_sop_on_student) {
        Var hidden = ad::tanh(
            ad::matmul(c, ad::transpose(tape.param(*cesop_w2_))));
        ce_cells[static_cast<std::size_t>(j) * T + t] =
            ad::sigmoid(ad::matmul(hidden, ad::transpose(tape.param(*cesop_w1_))));
      }
    }
  }
  out.value = ad::scale(value_total, 1.0 / cells);

  if (opts.need_teacher && opts.distillation_on) {
    std::vector<Var> sop_rows;
    out.sop_probs = Mat(J, T);
    for (int j = 0; j < J; ++j) {
      std::vector<Var> row;
      for (int t = 0; t < T; ++t) {
        row.push_back(p_sop[j][t]);
        out.sop_probs(j, t) = p_sop[j][t]->value(0, 0);
      }
      sop_rows.push_back(ad::concat_cols(row));
    }
    Var p_mat = ad::concat_rows(sop_rows);
    out.sop = sop_loss(p_mat, labels);

    std::vector<Var> teas, stus;
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < J; ++j) {
        Var tea = opts.stop_teacher_grad ? ad::detach(r_tea[j][t]) : r_tea[j][t];
        teas.push_back(tea);
        stus.push_back(r_stu[j][t]);
      }
    out.distill = distill_loss(teas, stus);
  }

  if (opts.need_cl) {
    Var z = ad::concat_rows(z_cells);
    out.z_values = z->value;
    NtXentOptions nt;
    nt.tau = opts.tau;
    nt.include_dialogue_negatives = opts.dialogue_negatives;
    out.cl = nt_xent_loss(z, labels, nt);
  }
  if (opts.ce_sop_on_student) {
    std::vector<Var> rows_v;
    for (int j = 0; j < J; ++j) {
      std::vector<Var> row;
      for (int t = 0; t < T; ++t)
        row.push_back(ce_cells[static_cast<std::size_t>(j) * T + t]);
      rows_v.push_back(ad::concat_cols(row));
    }
    out.cl = sop_loss(ad::concat_rows(rows_v), labels);
  }
  return out;
}

State DsdnModel::predict_state(const Dialogue& dialogue, int turn) {
  if (turn < 0 || turn >= static_cast<int>(dialogue.turns.size()))
    throw ArgumentError("predict_state: turn index out of range");
  Dialogue prefix;
  prefix.id = dialogue.id;
  prefix.turns.assign(dialogue.turns.begin(),
                      dialogue.turns.begin() + turn + 1);
  return predict_dialogue(prefix).back();
}

std::vector<State> DsdnModel::predict_dialogue(const Dialogue& dialogue) {
  ad::Tape tape(false);
  SopLabelMatrix dummy(schema_.size(), static_cast<int>(dialogue.turns.size()));
  ForwardOptions opts;
  opts.need_teacher = false;
  opts.need_cl = false;
  DialogueForward fwd = forward(tape, dialogue, dummy, opts);
  return fwd.argmax_states;
}

std::vector<std::string> DsdnModel::distillation_param_names() const {
  static const std::vector<std::string> prefixes = {"tea.", "stu.", "attn_tea.",
                                                    "attn_stu.", "sop."};
  std::vector<std::string> names;
  for (const auto& t : params_.tensors())
    for (const auto& p : prefixes)
      if (t->name.rfind(p, 0) == 0) names.push_back(t->name);
  return names;
}

void DsdnModel::freeze_distillation() {
  for (const auto& name : distillation_param_names())
    params_.get(name).trainable = false;
}

}  // namespace dsdn
