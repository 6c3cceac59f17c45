#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "attrib/corpus.hpp"
#include "attrib/embedding_store.hpp"
#include "attrib/error.hpp"
#include "attrib/io.hpp"

namespace attrib {

struct Factor {
  std::string id;
  std::vector<std::string> phrase;
  std::string category;
};

struct BroadCategory {
  std::string id;
  std::string display_name;
  std::set<std::string> member_factor_ids;
};

// Attribution factors grouped into broad categories. Every factor belongs to
// exactly one category and every category has at least one factor.
class FactorCatalog {
 public:
  const std::vector<Factor>& factors() const { return factors_; }
  const std::vector<BroadCategory>& categories() const { return categories_; }

  const Factor& factor(const std::string& id) const {
    auto it = factor_index_.find(id);
    if (it == factor_index_.end()) detail::fail("unknown factor: ", id);
    return factors_[it->second];
  }

  const BroadCategory& category(const std::string& id) const {
    auto it = category_index_.find(id);
    if (it == category_index_.end()) detail::fail("unknown category: ", id);
    return categories_[it->second];
  }

  bool has_category(const std::string& id) const { return category_index_.count(id) != 0; }

  std::set<std::string> category_ids() const {
    std::set<std::string> out;
    for (const auto& c : categories_) out.insert(c.id);
    return out;
  }

  void add_category(std::string id, std::string display_name) {
    if (id.empty()) detail::fail("category id must be nonempty");
    if (category_index_.count(id)) detail::fail("duplicate category: ", id);
    category_index_.emplace(id, categories_.size());
    categories_.push_back({std::move(id), std::move(display_name), {}});
  }

  void add_factor(std::string id, std::vector<std::string> phrase, const std::string& category_id) {
    if (factor_index_.count(id)) {
      const Factor& prev = factors_[factor_index_.at(id)];
      detail::fail("factor ", id, " assigned to multiple categories (", prev.category, ", ", category_id, ")");
    }
    auto cit = category_index_.find(category_id);
    if (cit == category_index_.end()) detail::fail("factor ", id, " assigned to unknown category ", category_id);
    if (phrase.empty()) detail::fail("factor ", id, " has an empty phrase");
    categories_[cit->second].member_factor_ids.insert(id);
    factor_index_.emplace(id, factors_.size());
    factors_.push_back({std::move(id), std::move(phrase), category_id});
  }

  void validate() const {
    for (const auto& c : categories_)
      if (c.member_factor_ids.empty()) detail::fail("category ", c.id, " has no factors");
  }

 private:
  std::vector<Factor> factors_;
  std::vector<BroadCategory> categories_;
  std::map<std::string, std::size_t> factor_index_;
  std::map<std::string, std::size_t> category_index_;
};

// Rows: `CATEGORY<TAB>id<TAB>display_name` and
// `FACTOR<TAB>id<TAB>phrase<TAB>category_id`; '#' starts a comment line.
inline FactorCatalog parse_catalog(std::string_view content) {
  FactorCatalog cat;
  std::size_t line_no = 0;
  for (std::string_view line : io::lines(content)) {
    ++line_no;
    std::string_view t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto cols = io::split_char(t, '\t');
    if (cols[0] == "CATEGORY" && cols.size() == 3) {
      cat.add_category(std::string(io::trim(cols[1])), std::string(io::trim(cols[2])));
    } else if (cols[0] == "FACTOR" && cols.size() == 4) {
      cat.add_factor(std::string(io::trim(cols[1])), text::tokenize(cols[2]), std::string(io::trim(cols[3])));
    } else {
      detail::fail("catalog line ", line_no, ": malformed row");
    }
  }
  cat.validate();
  return cat;
}

inline FactorCatalog load_catalog(const std::filesystem::path& path) { return parse_catalog(io::read_file(path)); }

// Unweighted mean over in-vocabulary phrase tokens; stopwords are kept.
inline Vector factor_embedding(const Factor& f, const EmbeddingStore& store) {
  Vector out(store.dim(), 0.0);
  std::size_t n = 0;
  for (const auto& tok : f.phrase) {
    auto e = store.lookup(tok);
    if (!e) continue;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += (*e)[k];
    ++n;
  }
  if (n == 0) detail::fail("factor ", f.id, ": every phrase token is out of vocabulary");
  for (double& x : out) x /= static_cast<double>(n);
  return out;
}

}  // namespace attrib
