#pragma once

// Instance format, BIO tag scheme, span codec, vocabulary and JSONL loading.

#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mjave/errors.hpp"

namespace mjave {

// Bijection between L attribute labels and the 2L+1 BIO tags. Tag ids:
// O = 0, B-label_l = 1 + 2l, I-label_l = 2 + 2l.
class TagScheme {
 public:
  static constexpr int kOutside = 0;

  TagScheme() = default;
  explicit TagScheme(std::vector<std::string> labels);

  std::size_t num_labels() const { return labels_.size(); }
  std::size_t num_tags() const { return 2 * labels_.size() + 1; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label_name(int label) const;

  // -1 when the name is not a label.
  int label_index(const std::string& name) const;

  int begin_tag(int label) const { return 1 + 2 * label; }
  int inside_tag(int label) const { return 2 + 2 * label; }
  bool is_begin(int tag) const { return tag > 0 && tag % 2 == 1; }
  bool is_inside(int tag) const { return tag > 0 && tag % 2 == 0; }
  // Label owning a B-/I- tag; -1 for O.
  int label_of_tag(int tag) const { return tag == 0 ? -1 : (tag - 1) / 2; }

  std::string tag_name(int tag) const;
  // DataError on an unknown tag name.
  int tag_from_name(const std::string& name) const;

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> label_index_;
};

// Half-open token span [start, end) carrying one attribute label.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  int label = -1;

  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

// Decode maximal spans from a BIO sequence. Never fails: an I- tag without a
// preceding B-/I- of the same label opens a new span, and a label switch
// closes the running span and opens another.
std::vector<Span> tags_to_spans(const std::vector<int>& tags,
                                const TagScheme& scheme);

// Inverse of tags_to_spans for non-overlapping in-range spans.
std::vector<int> spans_to_tags(const std::vector<Span>& spans,
                               std::size_t length, const TagScheme& scheme);

// Sorted unique labels appearing in any span of the sequence.
std::vector<int> derive_attributes(const std::vector<int>& tags,
                                   const TagScheme& scheme);

struct ImageFeatures {
  std::vector<double> global;
  std::vector<std::vector<double>> regions;

  std::size_t dim() const { return global.size(); }
  std::size_t num_regions() const { return regions.size(); }
};

// One product: token sequence, gold labels, gold tags, image features.
// Gold fields may be absent on prediction inputs (has_gold == false).
struct Instance {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<int> attributes;  // sorted label ids
  std::vector<int> tags;        // one per token
  ImageFeatures image;
  bool has_gold = false;
};

// Dataset-level contract shared by generator, loader and model.
struct Manifest {
  std::vector<std::string> labels;
  std::size_t d_v = 32;
  std::size_t k = 9;
  std::size_t max_len = 46;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);

// Token ids with four reserved entries at fixed positions.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens_in_id_order);

  static Vocabulary build(const std::vector<Instance>& instances);

  int add(const std::string& token);
  // kUnk for out-of-vocabulary tokens.
  int id_for(const std::string& token) const;
  const std::string& token_for(int id) const;
  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// encode() output: fixed length max_len + 2. `attend` marks non-[PAD]
// positions ([CLS], real tokens, [SEP]); `real` marks real tokens only.
// Tags are aligned with ids; special and padding positions carry O.
struct Encoded {
  std::vector<int> ids;
  std::vector<unsigned char> attend;
  std::vector<unsigned char> real;
  std::vector<int> tags;
  std::size_t num_real = 0;
};

Encoded encode(const Instance& instance, const Vocabulary& vocab,
               std::size_t max_len);

// JSONL loading with validation against the manifest; every rejection names
// the offending line. Image features may be inline or a {"ref": path} to a
// little-endian float32 file (global vector first, then the K regions),
// resolved relative to the JSONL file.
std::vector<Instance> load_instances(const std::string& path,
                                     const Manifest& manifest);

void save_instances(const std::vector<Instance>& instances,
                    const TagScheme& scheme, const std::string& path);

// Little-endian float32 feature file, global vector first.
void save_feature_file(const ImageFeatures& image, const std::string& path);
ImageFeatures load_feature_file(const std::string& path, std::size_t d_v,
                                std::size_t k);

}  // namespace mjave
