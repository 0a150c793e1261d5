/*
 * Copyright 2026 dmcm-lab authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "dmcm/toml.hpp"

#include <cctype>
#include <sstream>
#include <stdexcept>

namespace dmcm {

namespace {

using nlohmann::json;

struct Cursor {
  const std::string& s;
  std::size_t pos = 0;
  int line = 1;

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::invalid_argument("toml: line " + std::to_string(line) + ": " +
                                msg);
  }
  bool done() const { return pos >= s.size(); }
  char peek() const { return s[pos]; }
  char take() {
    const char c = s[pos++];
    if (c == '\n') {
      // line counting handled by the caller where it matters
    }
    return c;
  }
  void skip_ws() {
    while (!done() && (peek() == ' ' || peek() == '\t')) ++pos;
  }
};

void skip_ws_and_comments_in_value(Cursor& c) {
  // inside arrays, values may span lines
  while (!c.done()) {
    const char ch = c.peek();
    if (ch == ' ' || ch == '\t') {
      ++c.pos;
    } else if (ch == '\n') {
      ++c.pos;
      ++c.line;
    } else if (ch == '\r') {
      ++c.pos;
    } else if (ch == '#') {
      while (!c.done() && c.peek() != '\n') ++c.pos;
    } else {
      break;
    }
  }
}

json parse_value(Cursor& c);

json parse_string(Cursor& c) {
  // opening quote already checked
  ++c.pos;
  std::string out;
  while (true) {
    if (c.done()) c.fail("unterminated string");
    char ch = c.take();
    if (ch == '"') break;
    if (ch == '\\') {
      if (c.done()) c.fail("unterminated escape");
      const char e = c.take();
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: c.fail(std::string("unsupported escape \\") + e);
      }
    } else {
      out += ch;
    }
  }
  return json(out);
}

json parse_array(Cursor& c) {
  ++c.pos;  // '['
  json arr = json::array();
  skip_ws_and_comments_in_value(c);
  if (!c.done() && c.peek() == ']') {
    ++c.pos;
    return arr;
  }
  while (true) {
    skip_ws_and_comments_in_value(c);
    arr.push_back(parse_value(c));
    skip_ws_and_comments_in_value(c);
    if (c.done()) c.fail("unterminated array");
    const char ch = c.take();
    if (ch == ']') break;
    if (ch != ',') c.fail("expected ',' or ']' in array");
    skip_ws_and_comments_in_value(c);
    if (!c.done() && c.peek() == ']') {  // trailing comma
      ++c.pos;
      break;
    }
  }
  return arr;
}

json parse_scalar(Cursor& c) {
  std::string tok;
  while (!c.done()) {
    const char ch = c.peek();
    if (ch == ',' || ch == ']' || ch == '#' || ch == '\n' || ch == '\r' ||
        ch == ' ' || ch == '\t') {
      break;
    }
    tok += ch;
    ++c.pos;
  }
  if (tok.empty()) c.fail("expected a value");
  if (tok == "true") return json(true);
  if (tok == "false") return json(false);
  // number: integer if it has no '.', 'e', 'E', inf or nan markers
  const bool floaty = tok.find_first_of(".eE") != std::string::npos ||
                      tok == "inf" || tok == "-inf" || tok == "nan";
  try {
    if (!floaty) {
      std::size_t used = 0;
      const long long v = std::stoll(tok, &used);
      if (used == tok.size()) return json(v);
    }
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) c.fail("bad number '" + tok + "'");
    return json(v);
  } catch (const std::exception&) {
    c.fail("bad value '" + tok + "'");
  }
}

json parse_value(Cursor& c) {
  if (c.done()) c.fail("expected a value");
  const char ch = c.peek();
  if (ch == '"') return parse_string(c);
  if (ch == '[') return parse_array(c);
  return parse_scalar(c);
}

std::string parse_key(Cursor& c) {
  std::string key;
  while (!c.done()) {
    const char ch = c.peek();
    if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' ||
        ch == '-') {
      key += ch;
      ++c.pos;
    } else {
      break;
    }
  }
  if (key.empty()) c.fail("expected a key");
  return key;
}

std::vector<std::string> parse_dotted_path(Cursor& c) {
  std::vector<std::string> path{parse_key(c)};
  while (!c.done() && c.peek() == '.') {
    ++c.pos;
    path.push_back(parse_key(c));
  }
  return path;
}

json* descend(json& root, const std::vector<std::string>& path, Cursor& c) {
  json* node = &root;
  for (const std::string& key : path) {
    json& slot = (*node)[key];
    if (slot.is_array()) {
      if (slot.empty()) c.fail("section '" + key + "' conflicts with array");
      node = &slot.back();
    } else {
      if (slot.is_null()) slot = json::object();
      if (!slot.is_object()) c.fail("key '" + key + "' is not a table");
      node = &slot;
    }
  }
  return node;
}

}  // namespace

nlohmann::json parse_toml(const std::string& text) {
  json root = json::object();
  json* current = &root;
  Cursor c{text};

  while (!c.done()) {
    c.skip_ws();
    if (c.done()) break;
    const char ch = c.peek();
    if (ch == '\n') {
      ++c.pos;
      ++c.line;
      continue;
    }
    if (ch == '\r') {
      ++c.pos;
      continue;
    }
    if (ch == '#') {
      while (!c.done() && c.peek() != '\n') ++c.pos;
      continue;
    }
    if (ch == '[') {
      ++c.pos;
      const bool array_table = !c.done() && c.peek() == '[';
      if (array_table) ++c.pos;
      c.skip_ws();
      const std::vector<std::string> path = parse_dotted_path(c);
      c.skip_ws();
      if (c.done() || c.take() != ']') c.fail("expected ']'");
      if (array_table) {
        if (c.done() || c.take() != ']') c.fail("expected ']]'");
      }
      if (array_table) {
        json* parent = &root;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
          parent = descend(*parent, {path[i]}, c);
        }
        json& slot = (*parent)[path.back()];
        if (slot.is_null()) slot = json::array();
        if (!slot.is_array()) c.fail("key '" + path.back() + "' is not an array of tables");
        slot.push_back(json::object());
        current = &slot.back();
      } else {
        current = descend(root, path, c);
      }
      continue;
    }
    // key = value
    const std::vector<std::string> path = parse_dotted_path(c);
    c.skip_ws();
    if (c.done() || c.take() != '=') c.fail("expected '=' after key");
    c.skip_ws();
    const json value = parse_value(c);
    json* node = current;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      node = descend(*node, {path[i]}, c);
    }
    if (node->contains(path.back())) c.fail("duplicate key '" + path.back() + "'");
    (*node)[path.back()] = value;
    // rest of line must be blank or comment
    c.skip_ws();
    if (!c.done() && c.peek() == '#') {
      while (!c.done() && c.peek() != '\n') ++c.pos;
    }
    if (!c.done() && c.peek() == '\r') ++c.pos;
    if (!c.done()) {
      if (c.peek() != '\n') c.fail("unexpected trailing characters");
      ++c.pos;
      ++c.line;
    }
  }
  return root;
}

}  // namespace dmcm
