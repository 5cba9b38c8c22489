// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace trafficdiff {

// Error in a text config, with 1-based line and column.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, int column, const std::string& message);
  int line;
  int column;
};

struct TextNode;

// One `key: value` or `key { ... }` entry.
struct TextField {
  std::string key;
  std::string value;                // scalar token; empty for blocks
  std::shared_ptr<TextNode> block;  // set for `key { ... }`
  int line = 0;
  int column = 0;

  bool is_block() const { return block != nullptr; }
  double as_number() const;
  int as_int() const;
};

struct TextNode {
  std::vector<TextField> fields;
};

// Protobuf-text-like grammar: fields are `key: scalar` or `key { fields }`
// (a colon before `{` is allowed). '#' starts a comment to end of line.
// Scalars are bare words, numbers or double-quoted strings.
TextNode parse_text_config(const std::string& text);

}  // namespace trafficdiff
