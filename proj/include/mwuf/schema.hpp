#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "mwuf/errors.hpp"

namespace mwuf {

enum class Side : uint8_t { user, item };
enum class FieldKind : uint8_t { categorical, continuous };

struct FeatureField {
  std::string name;
  Side side = Side::item;
  FieldKind kind = FieldKind::categorical;
  bool multi_valued = false;  // token lists (genres, title words), mean-pooled
  bool is_id = false;
  size_t vocab_cap = 0;  // categorical only; keep the most frequent cap tokens, 0 = all
};

// Ordered field declaration plus the shared embedding width k. Immutable
// after construction; all downstream shapes derive from it.
class FeatureSchema {
 public:
  explicit FeatureSchema(std::vector<FeatureField> fields, size_t k = 16)
      : fields_(std::move(fields)), k_(k) {
    if (k_ == 0) throw SchemaError("schema: k must be positive");
    int item_ids = 0, user_ids = 0;
    for (size_t i = 0; i < fields_.size(); ++i) {
      const FeatureField& f = fields_[i];
      for (size_t j = 0; j < i; ++j)
        if (fields_[j].name == f.name) throw SchemaError("schema: duplicate field " + f.name);
      if (f.is_id) {
        if (f.kind != FieldKind::categorical || f.multi_valued)
          throw SchemaError("schema: ID field " + f.name + " must be single categorical");
        (f.side == Side::item ? item_ids : user_ids)++;
        (f.side == Side::item ? item_id_ : user_id_) = i;
      }
      if (f.kind == FieldKind::continuous && f.multi_valued)
        throw SchemaError("schema: continuous field " + f.name + " cannot be multi-valued");
    }
    if (item_ids != 1 || user_ids != 1)
      throw SchemaError("schema: need exactly one item ID and one user ID field");
    for (size_t i = 0; i < fields_.size(); ++i) {
      if (fields_[i].is_id) continue;
      (fields_[i].side == Side::item ? item_feats_ : user_feats_).push_back(i);
    }
  }

  const std::vector<FeatureField>& fields() const { return fields_; }
  size_t k() const { return k_; }
  const FeatureField& item_id_field() const { return fields_[item_id_]; }
  const FeatureField& user_id_field() const { return fields_[user_id_]; }
  // Non-ID fields per side, in declaration order.
  const std::vector<size_t>& item_feature_fields() const { return item_feats_; }
  const std::vector<size_t>& user_feature_fields() const { return user_feats_; }
  size_t n() const { return item_feats_.size(); }
  size_t m() const { return user_feats_.size(); }

 private:
  std::vector<FeatureField> fields_;
  size_t k_;
  size_t item_id_ = 0, user_id_ = 0;
  std::vector<size_t> item_feats_, user_feats_;
};

// A raw column value before encoding: a category token, a token list, or a number.
using RawValue = std::variant<std::string, std::vector<std::string>, double>;

struct RawRow {
  std::map<std::string, RawValue> columns;
  uint8_t label = 0;
  int64_t timestamp = 0;
};

// Dense token index map with one reserved trailing index for unseen values.
class Vocab {
 public:
  // Tokens indexed by first occurrence; when cap > 0 only the cap most
  // frequent survive (ties keep the earlier token).
  static Vocab build(std::span<const std::string> stream, size_t cap = 0) {
    std::unordered_map<std::string, uint64_t> counts;
    std::vector<std::string> order;
    for (const std::string& tok : stream) {
      auto [it, fresh] = counts.try_emplace(tok, 0);
      it->second++;
      if (fresh) order.push_back(tok);
    }
    if (cap > 0 && order.size() > cap) {
      std::vector<size_t> idx(order.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        return counts[order[a]] > counts[order[b]];
      });
      idx.resize(cap);
      std::sort(idx.begin(), idx.end());  // restore first-occurrence order
      std::vector<std::string> kept;
      for (size_t i : idx) kept.push_back(std::move(order[i]));
      order = std::move(kept);
    }
    Vocab v;
    v.tokens_ = std::move(order);
    for (uint32_t i = 0; i < v.tokens_.size(); ++i) v.map_.emplace(v.tokens_[i], i);
    return v;
  }

  // Total table size including the reserved unseen slot.
  size_t size() const { return tokens_.size() + 1; }
  uint32_t unseen() const { return static_cast<uint32_t>(tokens_.size()); }
  uint32_t index(const std::string& token) const {
    auto it = map_.find(token);
    return it == map_.end() ? unseen() : it->second;
  }
  const std::string& token(uint32_t i) const {
    static const std::string kUnseen = "<unk>";
    return i < tokens_.size() ? tokens_[i] : kUnseen;
  }

 private:
  std::unordered_map<std::string, uint32_t> map_;
  std::vector<std::string> tokens_;
};

// One encoded non-ID feature: categorical rows (one, or several for a
// multi-valued field) or a continuous value.
struct EncodedEntry {
  std::vector<uint32_t> indices;
  double value = 0.0;
};

struct EncodedSample {
  uint32_t item_id = 0;
  uint32_t user_id = 0;
  std::vector<EncodedEntry> item_features;  // schema order, ID excluded
  std::vector<EncodedEntry> user_features;
  uint8_t label = 0;
  int64_t timestamp = 0;
};

// Schema plus fitted vocabularies: the immutable encoder raw rows pass through.
class FittedSchema {
 public:
  static FittedSchema fit(FeatureSchema schema, std::span<const RawRow> rows) {
    FittedSchema fs(std::move(schema));
    for (const RawRow& row : rows)
      for (const FeatureField& f : fs.schema_.fields()) fs.column(row, f);
    for (const FeatureField& f : fs.schema_.fields()) {
      if (f.kind != FieldKind::categorical) continue;
      std::vector<std::string> stream;
      for (const RawRow& row : rows) {
        const RawValue& v = fs.column(row, f);
        if (const auto* one = std::get_if<std::string>(&v))
          stream.push_back(*one);
        else if (const auto* many = std::get_if<std::vector<std::string>>(&v))
          stream.insert(stream.end(), many->begin(), many->end());
        else
          throw SchemaError("fit: numeric value in categorical column " + f.name);
      }
      fs.vocabs_.emplace(f.name, Vocab::build(stream, f.vocab_cap));
    }
    return fs;
  }

  const FeatureSchema& schema() const { return schema_; }

  const Vocab& vocab(const std::string& field) const {
    auto it = vocabs_.find(field);
    if (it == vocabs_.end()) throw LookupError("no vocabulary for field " + field);
    return it->second;
  }

  EncodedSample encode(const RawRow& row) const {
    EncodedSample s;
    s.label = row.label;
    if (s.label > 1) throw LabelError("encode: label outside {0,1}");
    s.timestamp = row.timestamp;
    s.item_id = id_index(row, schema_.item_id_field());
    s.user_id = id_index(row, schema_.user_id_field());
    for (size_t i : schema_.item_feature_fields())
      s.item_features.push_back(encode_field(row, schema_.fields()[i]));
    for (size_t i : schema_.user_feature_fields())
      s.user_features.push_back(encode_field(row, schema_.fields()[i]));
    return s;
  }

 private:
  explicit FittedSchema(FeatureSchema schema) : schema_(std::move(schema)) {}

  const RawValue& column(const RawRow& row, const FeatureField& f) const {
    auto it = row.columns.find(f.name);
    if (it == row.columns.end()) throw SchemaError("row missing column " + f.name);
    return it->second;
  }

  uint32_t id_index(const RawRow& row, const FeatureField& f) const {
    const RawValue& v = column(row, f);
    const auto* tok = std::get_if<std::string>(&v);
    if (!tok) throw SchemaError("encode: ID column " + f.name + " must hold a single token");
    return vocab(f.name).index(*tok);
  }

  EncodedEntry encode_field(const RawRow& row, const FeatureField& f) const {
    const RawValue& v = column(row, f);
    EncodedEntry e;
    if (f.kind == FieldKind::continuous) {
      const auto* num = std::get_if<double>(&v);
      if (!num) throw SchemaError("encode: non-numeric value in continuous column " + f.name);
      e.value = *num;
      return e;
    }
    const Vocab& voc = vocab(f.name);
    if (const auto* one = std::get_if<std::string>(&v)) {
      if (f.multi_valued)
        throw SchemaError("encode: multi-valued column " + f.name + " holds a single token");
      e.indices.push_back(voc.index(*one));
    } else if (const auto* many = std::get_if<std::vector<std::string>>(&v)) {
      if (!f.multi_valued)
        throw SchemaError("encode: single-valued column " + f.name + " holds a token list");
      for (const std::string& tok : *many) e.indices.push_back(voc.index(tok));
    } else {
      throw SchemaError("encode: numeric value in categorical column " + f.name);
    }
    return e;
  }

  FeatureSchema schema_;
  std::map<std::string, Vocab> vocabs_;
};

}  // namespace mwuf
