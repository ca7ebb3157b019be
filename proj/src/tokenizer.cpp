#include "dsdn/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

namespace dsdn {

Vocabulary::Vocabulary() {
  cls_ = add_token(kCls);
  sep_ = add_token(kSep);
  unk_ = add_token(kUnk);
  dash_ = add_token(kDash);
}

std::string Vocabulary::slot_marker_teacher(int j) {
  return "[slot_" + std::to_string(j) + "^tea]";
}

std::string Vocabulary::slot_marker_student(int j) {
  return "[slot_" + std::to_string(j) + "^stu]";
}

int Vocabulary::add_token(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

void Vocabulary::add_text(const std::string& text) {
  for (const auto& t : split(text)) add_token(t);
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_ : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary::token");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::split(const std::string& text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  std::istringstream in(lowered);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& t : split(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (k) out += ' ';
    out += token(ids[k]);
  }
  return out;
}

}  // namespace dsdn
