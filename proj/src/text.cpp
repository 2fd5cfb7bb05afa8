#include "critgen/text.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <utility>

namespace critgen::text {
namespace {

constexpr std::array<std::pair<std::string_view, std::string_view>, 9> kFolds{{
    {"\xe2\x89\xa5", " >= "},  // ≥
    {"\xe2\x89\xa4", " <= "},  // ≤
    {"\xc2\xb2", "2"},         // ²
    {"\xc2\xb3", "3"},         // ³
    {"\xe2\x80\x93", "-"},     // –
    {"\xe2\x80\x94", "-"},     // —
    {"\xc2\xa0", " "},         // nbsp
    {"\xc2\xb5", "u"},         // µ
    {"\xc3\x97", "x"},         // ×
}};

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

}  // namespace

std::string normalize(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    bool folded = false;
    for (const auto& [from, to] : kFolds) {
      if (raw.substr(i, from.size()) == from) {
        out += to;
        i += from.size();
        folded = true;
        break;
      }
    }
    if (folded) continue;
    const char c = raw[i];
    out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    ++i;
  }
  return out;
}

std::vector<std::string> segment(
    std::string_view raw, const std::function<bool(std::string_view)>& is_special) {
  const std::string s = normalize(raw);
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '<' && is_special) {
      const std::size_t close = s.find('>', i);
      if (close != std::string::npos && close - i < 48) {
        const std::string_view candidate(s.data() + i, close - i + 1);
        if (is_special(candidate)) {
          tokens.emplace_back(candidate);
          i = close + 1;
          continue;
        }
      }
    }
    if (is_word_char(c)) {
      std::size_t j = i;
      while (j < s.size()) {
        if (is_word_char(s[j])) {
          ++j;
        } else if (s[j] == '.' && j > i && is_digit(s[j - 1]) && j + 1 < s.size() &&
                   is_digit(s[j + 1])) {
          ++j;
        } else {
          break;
        }
      }
      tokens.emplace_back(s.substr(i, j - i));
      i = j;
      continue;
    }
    if ((c == '>' || c == '<') && i + 1 < s.size() && s[i + 1] == '=') {
      tokens.emplace_back(s.substr(i, 2));
      i += 2;
      continue;
    }
    const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(c)), s.size() - i);
    tokens.emplace_back(s.substr(i, len));
    i += len;
  }
  return tokens;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

std::optional<double> parse_number(std::string_view token) {
  if (token.empty() || !is_digit(token.front()) || !is_digit(token.back())) return std::nullopt;
  int dots = 0;
  for (char c : token) {
    if (c == '.') {
      ++dots;
    } else if (!is_digit(c)) {
      return std::nullopt;
    }
  }
  if (dots > 1) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  return value;
}

std::string format_number(double value) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ec == std::errc() ? ptr : buf.data());
}

}  // namespace critgen::text
