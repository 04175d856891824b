#include "mjave/dataio.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mjave {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// TagScheme
// ---------------------------------------------------------------------------

TagScheme::TagScheme(std::vector<std::string> labels)
    : labels_(std::move(labels)) {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i].empty()) throw DataError("tag scheme: empty label name");
    auto [it, inserted] = label_index_.emplace(labels_[i], static_cast<int>(i));
    if (!inserted) throw DataError("tag scheme: duplicate label " + labels_[i]);
  }
}

const std::string& TagScheme::label_name(int label) const {
  if (label < 0 || static_cast<std::size_t>(label) >= labels_.size())
    throw DataError("tag scheme: label index " + std::to_string(label) +
                    " out of range");
  return labels_[static_cast<std::size_t>(label)];
}

int TagScheme::label_index(const std::string& name) const {
  auto it = label_index_.find(name);
  return it == label_index_.end() ? -1 : it->second;
}

std::string TagScheme::tag_name(int tag) const {
  if (tag == kOutside) return "O";
  if (tag < 0 || static_cast<std::size_t>(tag) >= num_tags())
    throw DataError("tag scheme: tag id " + std::to_string(tag) +
                    " out of range");
  return (is_begin(tag) ? "B-" : "I-") + labels_[(tag - 1) / 2];
}

int TagScheme::tag_from_name(const std::string& name) const {
  if (name == "O") return kOutside;
  if (name.size() > 2 && (name[0] == 'B' || name[0] == 'I') && name[1] == '-') {
    const int label = label_index(name.substr(2));
    if (label >= 0) return name[0] == 'B' ? begin_tag(label) : inside_tag(label);
  }
  throw DataError("unknown tag name: " + name);
}

// ---------------------------------------------------------------------------
// Span codec
// ---------------------------------------------------------------------------

std::vector<Span> tags_to_spans(const std::vector<int>& tags,
                                const TagScheme& scheme) {
  std::vector<Span> spans;
  int open_label = -1;
  std::size_t open_start = 0;
  auto close = [&](std::size_t end) {
    if (open_label >= 0)
      spans.push_back({open_start, end, open_label});
    open_label = -1;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const int tag = tags[i];
    if (tag < 0 || static_cast<std::size_t>(tag) >= scheme.num_tags())
      throw DataError("tags_to_spans: tag id " + std::to_string(tag) +
                      " outside the scheme");
    if (tag == TagScheme::kOutside) {
      close(i);
    } else if (scheme.is_begin(tag)) {
      close(i);
      open_label = scheme.label_of_tag(tag);
      open_start = i;
    } else {  // inside
      const int label = scheme.label_of_tag(tag);
      if (label != open_label) {  // repair: orphan I- opens a new span
        close(i);
        open_label = label;
        open_start = i;
      }
    }
  }
  close(tags.size());
  return spans;
}

std::vector<int> spans_to_tags(const std::vector<Span>& spans,
                               std::size_t length, const TagScheme& scheme) {
  std::vector<int> tags(length, TagScheme::kOutside);
  std::vector<unsigned char> used(length, 0);
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > length) {
      std::ostringstream os;
      os << "spans_to_tags: span [" << s.start << ", " << s.end
         << ") outside sequence of length " << length;
      throw DataError(os.str());
    }
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= scheme.num_labels())
      throw DataError("spans_to_tags: label index " + std::to_string(s.label) +
                      " outside the scheme");
    for (std::size_t i = s.start; i < s.end; ++i) {
      if (used[i]) {
        std::ostringstream os;
        os << "spans_to_tags: overlapping spans at position " << i;
        throw DataError(os.str());
      }
      used[i] = 1;
      tags[i] = i == s.start ? scheme.begin_tag(s.label)
                             : scheme.inside_tag(s.label);
    }
  }
  return tags;
}

std::vector<int> derive_attributes(const std::vector<int>& tags,
                                   const TagScheme& scheme) {
  std::set<int> labels;
  for (const auto& span : tags_to_spans(tags, scheme)) labels.insert(span.label);
  return {labels.begin(), labels.end()};
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("manifest " + path + ": " + e.what());
  }
  Manifest m;
  try {
    m.labels = j.at("labels").get<std::vector<std::string>>();
    m.d_v = j.at("d_v").get<std::size_t>();
    m.k = j.at("k").get<std::size_t>();
    m.max_len = j.at("max_len").get<std::size_t>();
  } catch (const std::exception& e) {
    throw DataError("manifest " + path + ": " + e.what());
  }
  if (m.labels.empty()) throw DataError("manifest " + path + ": no labels");
  if (m.d_v == 0 || m.k == 0 || m.max_len < 3)
    throw DataError("manifest " + path + ": d_v and k must be positive, max_len >= 3");
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  ordered_json j;
  j["labels"] = m.labels;
  j["d_v"] = m.d_v;
  j["k"] = m.k;
  j["max_len"] = m.max_len;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(t);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens_in_id_order) {
  static const std::vector<std::string> reserved = {"[PAD]", "[UNK]", "[CLS]",
                                                    "[SEP]"};
  if (tokens_in_id_order.size() < reserved.size())
    throw DataError("vocabulary: missing reserved tokens");
  for (std::size_t i = 0; i < reserved.size(); ++i)
    if (tokens_in_id_order[i] != reserved[i])
      throw DataError("vocabulary: id " + std::to_string(i) + " must be " +
                      reserved[i]);
  for (const auto& t : tokens_in_id_order) add(t);
}

Vocabulary Vocabulary::build(const std::vector<Instance>& instances) {
  Vocabulary v;
  for (const auto& inst : instances)
    for (const auto& tok : inst.tokens) v.add(tok);
  return v;
}

int Vocabulary::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int id = static_cast<int>(id_to_token_.size());
  id_to_token_.push_back(token);
  token_to_id_.emplace(token, id);
  return id;
}

int Vocabulary::id_for(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_for(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw DataError("vocabulary: token id " + std::to_string(id) +
                    " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

Encoded encode(const Instance& instance, const Vocabulary& vocab,
               std::size_t max_len) {
  if (max_len < 3) throw DataError("encode: max_len must be >= 3");
  if (instance.tokens.empty())
    throw DataError("encode: instance " + instance.id + " has no tokens");
  const std::size_t kept = std::min(instance.tokens.size(), max_len);
  const std::size_t total = max_len + 2;

  Encoded e;
  e.ids.assign(total, Vocabulary::kPad);
  e.attend.assign(total, 0);
  e.real.assign(total, 0);
  e.tags.assign(total, TagScheme::kOutside);
  e.num_real = kept;

  e.ids[0] = Vocabulary::kCls;
  e.attend[0] = 1;
  for (std::size_t i = 0; i < kept; ++i) {
    e.ids[i + 1] = vocab.id_for(instance.tokens[i]);
    e.attend[i + 1] = 1;
    e.real[i + 1] = 1;
    if (!instance.tags.empty()) e.tags[i + 1] = instance.tags[i];
  }
  e.ids[kept + 1] = Vocabulary::kSep;
  e.attend[kept + 1] = 1;
  return e;
}

// ---------------------------------------------------------------------------
// Feature files
// ---------------------------------------------------------------------------

namespace {

std::uint32_t to_le_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  return u;  // assumes little-endian host, checked below
}

void require_little_endian() {
  const std::uint32_t probe = 1;
  unsigned char byte0;
  std::memcpy(&byte0, &probe, 1);
  if (byte0 != 1)
    throw DataError("feature files require a little-endian host");
}

}  // namespace

void save_feature_file(const ImageFeatures& image, const std::string& path) {
  require_little_endian();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file: " + path);
  auto write_vec = [&](const std::vector<double>& v) {
    for (double d : v) {
      const float f = static_cast<float>(d);
      const std::uint32_t u = to_le_bits(f);
      out.write(reinterpret_cast<const char*>(&u), sizeof u);
    }
  };
  write_vec(image.global);
  for (const auto& r : image.regions) write_vec(r);
}

ImageFeatures load_feature_file(const std::string& path, std::size_t d_v,
                                std::size_t k) {
  require_little_endian();
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open feature file: " + path);
  const std::size_t expected = sizeof(float) * d_v * (k + 1);
  const std::size_t actual = static_cast<std::size_t>(in.tellg());
  if (actual != expected) {
    std::ostringstream os;
    os << "feature file " << path << ": " << actual << " bytes, expected "
       << expected << " (d_v=" << d_v << ", k=" << k << ")";
    throw DataError(os.str());
  }
  in.seekg(0);
  std::vector<float> raw(d_v * (k + 1));
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(expected));
  if (!in) throw DataError("feature file " + path + ": short read");

  ImageFeatures img;
  img.global.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(d_v));
  img.regions.resize(k);
  for (std::size_t r = 0; r < k; ++r) {
    const auto begin = raw.begin() + static_cast<std::ptrdiff_t>(d_v * (r + 1));
    img.regions[r].assign(begin, begin + static_cast<std::ptrdiff_t>(d_v));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Instance JSONL
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void line_fail(const std::string& path, std::size_t line,
                            const std::string& what) {
  std::ostringstream os;
  os << path << ": line " << line << ": " << what;
  throw DataError(os.str());
}

std::vector<double> parse_feature_vector(const ordered_json& j,
                                         std::size_t d_v) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != d_v)
    throw DataError("feature vector of length " + std::to_string(v.size()) +
                    ", expected " + std::to_string(d_v));
  return v;
}

}  // namespace

std::vector<Instance> load_instances(const std::string& path,
                                     const Manifest& manifest) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open instance file: " + path);
  const TagScheme scheme(manifest.labels);
  const auto base_dir = std::filesystem::path(path).parent_path();

  std::vector<Instance> instances;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      line_fail(path, line_no, std::string("malformed JSON: ") + e.what());
    }
    try {
      Instance inst;
      inst.id = j.at("id").get<std::string>();
      inst.tokens = j.at("tokens").get<std::vector<std::string>>();
      if (inst.tokens.empty()) throw DataError("empty token list");

      const bool has_attrs = j.contains("attributes");
      const bool has_tags = j.contains("tags");
      if (has_attrs != has_tags)
        throw DataError("attributes and tags must be given together");
      inst.has_gold = has_attrs;
      if (has_attrs) {
        for (const auto& name : j.at("attributes")) {
          const int label = scheme.label_index(name.get<std::string>());
          if (label < 0)
            throw DataError("unknown attribute label: " +
                            name.get<std::string>());
          inst.attributes.push_back(label);
        }
        std::sort(inst.attributes.begin(), inst.attributes.end());
        inst.attributes.erase(
            std::unique(inst.attributes.begin(), inst.attributes.end()),
            inst.attributes.end());

        const auto tag_names = j.at("tags").get<std::vector<std::string>>();
        if (tag_names.size() != inst.tokens.size())
          throw DataError("tags length " + std::to_string(tag_names.size()) +
                          " != tokens length " +
                          std::to_string(inst.tokens.size()));
        for (const auto& t : tag_names)
          inst.tags.push_back(scheme.tag_from_name(t));

        const auto derived = derive_attributes(inst.tags, scheme);
        for (int label : derived)
          if (!std::binary_search(inst.attributes.begin(),
                                  inst.attributes.end(), label))
            throw DataError("tag label " + scheme.label_name(label) +
                            " missing from the attributes set");
      }

      const auto& img = j.at("image");
      if (img.contains("ref")) {
        const auto ref = img.at("ref").get<std::string>();
        const auto resolved = (base_dir / ref).string();
        inst.image = load_feature_file(resolved, manifest.d_v, manifest.k);
      } else {
        inst.image.global = parse_feature_vector(img.at("global"), manifest.d_v);
        const auto& regions = img.at("regions");
        if (regions.size() != manifest.k)
          throw DataError(std::to_string(regions.size()) +
                          " regions, expected " + std::to_string(manifest.k));
        for (const auto& r : regions)
          inst.image.regions.push_back(parse_feature_vector(r, manifest.d_v));
      }
      instances.push_back(std::move(inst));
    } catch (const DataError& e) {
      line_fail(path, line_no, e.what());
    } catch (const std::exception& e) {
      line_fail(path, line_no, e.what());
    }
  }
  return instances;
}

void save_instances(const std::vector<Instance>& instances,
                    const TagScheme& scheme, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write instance file: " + path);
  for (const auto& inst : instances) {
    ordered_json j;
    j["id"] = inst.id;
    j["tokens"] = inst.tokens;
    if (inst.has_gold) {
      std::vector<std::string> attr_names;
      for (int label : inst.attributes)
        attr_names.push_back(scheme.label_name(label));
      j["attributes"] = attr_names;
      std::vector<std::string> tag_names;
      for (int tag : inst.tags) tag_names.push_back(scheme.tag_name(tag));
      j["tags"] = tag_names;
    }
    j["image"]["global"] = inst.image.global;
    j["image"]["regions"] = inst.image.regions;
    out << j.dump() << "\n";
  }
}

}  // namespace mjave
