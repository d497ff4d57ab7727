// Copyright 2026 The refjoint Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "refjoint/errors.hpp"

namespace refjoint {

inline constexpr std::int64_t kPadId = 0;
inline constexpr std::int64_t kUnkId = 1;

/// Token <-> id mapping. Line index in the vocabulary file is the id; ids 0
/// and 1 are reserved for padding and unknown words.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<unk>"}) {}

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 2) throw ConfigError("vocabulary needs the two reserved entries");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      index_[tokens_[i]] = static_cast<std::int64_t>(i);
    }
  }

  // The closed word set of the synthetic expression templates.
  static Vocabulary standard() {
    return Vocabulary({"<pad>", "<unk>", "red",    "green",  "blue",   "yellow",
                       "circle", "square", "triangle", "small", "large", "on",
                       "the",   "left",  "right",  "top",    "bottom", "first",
                       "second", "third", "fourth", "fifth", "from"});
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::int64_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  const std::string& token(std::int64_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) return tokens_[kUnkId];
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::vector<std::int64_t> encode(const std::vector<std::string>& words) const {
    std::vector<std::int64_t> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id(w));
    return ids;
  }

  std::string decode(const std::vector<std::int64_t>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write vocabulary " + path.string());
    for (const auto& t : tokens_) os << t << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read vocabulary " + path.string());
    std::vector<std::string> tokens;
    for (std::string line; std::getline(is, line);) tokens.push_back(line);
    return Vocabulary(std::move(tokens));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
};

}  // namespace refjoint
