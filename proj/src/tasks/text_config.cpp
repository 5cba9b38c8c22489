// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/text_config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>

namespace trafficdiff {

ConfigError::ConfigError(int l, int c, const std::string& message)
    : std::runtime_error("line " + std::to_string(l) + ", column " + std::to_string(c) + ": " + message),
      line(l),
      column(c) {}

double TextField::as_number() const {
  if (is_block()) throw ConfigError(line, column, "expected a number for '" + key + "'");
  double v = 0.0;
  const char* begin = value.data();
  const char* end = value.data() + value.size();
  if (!value.empty() && *begin == '+') ++begin;
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
    throw ConfigError(line, column, "expected a number for '" + key + "', got '" + value + "'");
  return v;
}

int TextField::as_int() const {
  const double v = as_number();
  if (v != std::floor(v) || std::abs(v) > 1e9)
    throw ConfigError(line, column, "expected an integer for '" + key + "', got '" + value + "'");
  return static_cast<int>(v);
}

namespace {

struct Token {
  enum Kind { kWord, kString, kColon, kOpen, kClose, kEnd } kind = kEnd;
  std::string text;
  int line = 1;
  int column = 1;
};

class Lexer {
 public:
  explicit Lexer(const std::string& text) : text_(text) {}

  Token next() {
    skip_space();
    Token tok;
    tok.line = line_;
    tok.column = column_;
    if (pos_ >= text_.size()) return tok;
    const char c = text_[pos_];
    if (c == ':' || c == '{' || c == '}') {
      advance();
      tok.kind = c == ':' ? Token::kColon : c == '{' ? Token::kOpen : Token::kClose;
      tok.text = std::string(1, c);
      return tok;
    }
    if (c == '"') {
      advance();
      tok.kind = Token::kString;
      while (pos_ < text_.size() && text_[pos_] != '"') {
        if (text_[pos_] == '\n') throw ConfigError(tok.line, tok.column, "unterminated string");
        tok.text += text_[pos_];
        advance();
      }
      if (pos_ >= text_.size()) throw ConfigError(tok.line, tok.column, "unterminated string");
      advance();
      return tok;
    }
    if (is_word_char(c)) {
      tok.kind = Token::kWord;
      while (pos_ < text_.size() && is_word_char(text_[pos_])) {
        tok.text += text_[pos_];
        advance();
      }
      return tok;
    }
    throw ConfigError(tok.line, tok.column, std::string("unexpected character '") + c + "'");
  }

 private:
  static bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '+' ||
           c == '.';
  }

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      column_ = 1;
    } else {
      ++column_;
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',' || c == ';') {
        advance();
      } else {
        break;
      }
    }
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int column_ = 1;
};

class Parser {
 public:
  explicit Parser(const std::string& text) : lex_(text) { tok_ = lex_.next(); }

  TextNode parse_document() {
    TextNode node = parse_fields();
    if (tok_.kind != Token::kEnd) throw ConfigError(tok_.line, tok_.column, "unexpected '}'");
    return node;
  }

 private:
  TextNode parse_fields() {
    TextNode node;
    while (tok_.kind == Token::kWord) {
      TextField field;
      field.key = tok_.text;
      field.line = tok_.line;
      field.column = tok_.column;
      tok_ = lex_.next();
      bool colon = false;
      if (tok_.kind == Token::kColon) {
        colon = true;
        tok_ = lex_.next();
      }
      if (tok_.kind == Token::kOpen) {
        const Token open = tok_;
        tok_ = lex_.next();
        field.block = std::make_shared<TextNode>(parse_fields());
        if (tok_.kind != Token::kClose)
          throw ConfigError(tok_.kind == Token::kEnd ? open.line : tok_.line,
                            tok_.kind == Token::kEnd ? open.column : tok_.column,
                            "expected '}' to close '" + field.key + "'");
        tok_ = lex_.next();
      } else if (colon && (tok_.kind == Token::kWord || tok_.kind == Token::kString)) {
        field.value = tok_.text;
        tok_ = lex_.next();
      } else {
        throw ConfigError(tok_.line, tok_.column,
                          colon ? "expected a value after ':'" : "expected ':' or '{' after '" + field.key + "'");
      }
      node.fields.push_back(std::move(field));
    }
    if (tok_.kind != Token::kEnd && tok_.kind != Token::kClose)
      throw ConfigError(tok_.line, tok_.column, "expected a field name, got '" + tok_.text + "'");
    return node;
  }

  Lexer lex_;
  Token tok_;
};

}  // namespace

TextNode parse_text_config(const std::string& text) { return Parser(text).parse_document(); }

}  // namespace trafficdiff
