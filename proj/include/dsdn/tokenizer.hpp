#ifndef DSDN_TOKENIZER_HPP
#define DSDN_TOKENIZER_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dsdn {

// Whitespace + lowercasing tokenizer over a closed vocabulary. Special
// tokens (CLS/SEP/UNK, the value separator, and per-slot marker tokens for
// the teacher and student inputs) occupy reserved ids at the front.
class Vocabulary {
 public:
  static constexpr const char* kCls = "[CLS]";
  static constexpr const char* kSep = "[SEP]";
  static constexpr const char* kUnk = "[UNK]";
  static constexpr const char* kDash = "-";

  Vocabulary();

  static std::string slot_marker_teacher(int j);  // j is 0-based
  static std::string slot_marker_student(int j);

  // Adds every whitespace token of `text` (lowercased) to the vocabulary.
  void add_text(const std::string& text);
  int add_token(const std::string& token);

  int id(const std::string& token) const;  // kUnk id if absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  int cls_id() const { return cls_; }
  int sep_id() const { return sep_; }
  int unk_id() const { return unk_; }
  int dash_id() const { return dash_; }

  // Lowercase + split on whitespace. No vocabulary mutation.
  static std::vector<std::string> split(const std::string& text);

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  int cls_, sep_, unk_, dash_;
};

struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;  // 1 = valid position

  std::size_t size() const { return ids.size(); }
};

}  // namespace dsdn

#endif  // DSDN_TOKENIZER_HPP
