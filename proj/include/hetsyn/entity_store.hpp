#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hetsyn/error.hpp"
#include "hetsyn/random.hpp"
#include "hetsyn/tsv.hpp"

namespace hetsyn {

enum class EntityKind : std::uint8_t { Drug, Protein, Disease };

inline constexpr EntityKind kAllKinds[] = {EntityKind::Drug, EntityKind::Protein,
                                           EntityKind::Disease};

constexpr std::string_view to_string(EntityKind kind) {
  switch (kind) {
    case EntityKind::Drug: return "Drug";
    case EntityKind::Protein: return "Protein";
    case EntityKind::Disease: return "Disease";
  }
  return "?";
}

inline std::optional<EntityKind> parse_kind(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "drug") return EntityKind::Drug;
  if (lower == "protein" || lower == "gene") return EntityKind::Protein;
  if (lower == "disease") return EntityKind::Disease;
  return std::nullopt;
}

/// Configured embedding width per entity kind.
struct KindDims {
  std::size_t drug = 2304;
  std::size_t protein = 768;
  std::size_t disease = 512;

  std::size_t of(EntityKind kind) const {
    switch (kind) {
      case EntityKind::Drug: return drug;
      case EntityKind::Protein: return protein;
      case EntityKind::Disease: return disease;
    }
    return 0;
  }
};

struct Embedding {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

enum class FingerprintSource : std::uint8_t { Ingested, Toy };

/// Fixed-length bit vector. Hex encoding writes bit 0 as the most significant
/// bit of the first hex digit.
class Fingerprint {
 public:
  explicit Fingerprint(std::size_t length = 2048,
                       FingerprintSource source = FingerprintSource::Ingested)
      : length_(length), words_((length + 63) / 64, 0), source_(source) {}

  std::size_t length() const { return length_; }
  FingerprintSource source() const { return source_; }

  void set(std::size_t bit) { words_[bit / 64] |= (std::uint64_t{1} << (bit % 64)); }
  bool test(std::size_t bit) const { return (words_[bit / 64] >> (bit % 64)) & 1U; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool empty() const { return count() == 0; }

  const std::vector<std::uint64_t>& words() const { return words_; }

  static Fingerprint from_hex(std::string_view hex, std::size_t length) {
    if (hex.size() != (length + 3) / 4) {
      throw Error(ErrorCode::LengthMismatch, "entity-store",
                  "fingerprint hex has " + std::to_string(hex.size()) + " digits, expected " +
                      std::to_string((length + 3) / 4));
    }
    Fingerprint fp(length);
    for (std::size_t i = 0; i < hex.size(); ++i) {
      const char c = hex[i];
      int nibble;
      if (c >= '0' && c <= '9') nibble = c - '0';
      else if (c >= 'a' && c <= 'f') nibble = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') nibble = c - 'A' + 10;
      else throw Error(ErrorCode::ParseError, "entity-store", "bad hex digit in fingerprint");
      for (int b = 0; b < 4; ++b) {
        const std::size_t bit = 4 * i + static_cast<std::size_t>(b);
        if ((nibble >> (3 - b)) & 1) {
          if (bit >= length) {
            throw Error(ErrorCode::LengthMismatch, "entity-store",
                        "fingerprint sets a bit past its length");
          }
          fp.set(bit);
        }
      }
    }
    return fp;
  }

  std::string to_hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out((length_ + 3) / 4, '0');
    for (std::size_t i = 0; i < out.size(); ++i) {
      int nibble = 0;
      for (int b = 0; b < 4; ++b) {
        const std::size_t bit = 4 * i + static_cast<std::size_t>(b);
        if (bit < length_ && test(bit)) nibble |= 1 << (3 - b);
      }
      out[i] = kDigits[nibble];
    }
    return out;
  }

  friend bool operator==(const Fingerprint& a, const Fingerprint& b) {
    return a.length_ == b.length_ && a.words_ == b.words_;
  }

 private:
  std::size_t length_;
  std::vector<std::uint64_t> words_;
  FingerprintSource source_;
};

/// Deterministic stand-in for a chemistry fingerprint: every character 1-, 2-
/// and 3-gram of the string is hashed to one bit.
inline Fingerprint toy_fingerprint(std::string_view smiles, std::size_t length = 2048) {
  if (length == 0) {
    throw Error(ErrorCode::InvalidArgument, "entity-store", "fingerprint length must be > 0");
  }
  Fingerprint fp(length, FingerprintSource::Toy);
  for (std::size_t k = 1; k <= 3; ++k) {
    for (std::size_t i = 0; i + k <= smiles.size(); ++i) {
      const auto h = splitmix64(fnv1a(smiles.substr(i, k)) + k);
      fp.set(static_cast<std::size_t>(h % length));
    }
  }
  return fp;
}

struct Entity {
  std::string id;
  EntityKind kind = EntityKind::Drug;
  std::set<std::string> aliases;
  std::optional<std::string> descriptor;
};

/// Index of an entity inside its store. Stable for the store's lifetime;
/// merged-away entities resolve to their survivor.
using EntityHandle = std::uint32_t;

struct LoadReport {
  std::size_t rows = 0;
  std::size_t attached = 0;
  std::vector<std::string> unknown_ids;
};

/// Identity-unified registry of drugs, proteins and diseases with their
/// ingested embeddings and fingerprints. Mutable until `freeze()`.
class EntityStore {
 public:
  struct Config {
    KindDims dims;
    std::size_t fingerprint_length = 2048;
  };

  EntityStore() = default;
  explicit EntityStore(Config config) : config_(std::move(config)) {}

  const Config& config() const { return config_; }

  /// Registers a record, merging it into every existing entity that shares
  /// its primary id or an alias. A record bridging several entities folds them
  /// into the earliest-registered one.
  const Entity& register_entity(EntityKind kind, const std::string& primary_id,
                                const std::set<std::string>& aliases = {},
                                const std::optional<std::string>& descriptor = std::nullopt) {
    check_mutable();
    if (primary_id.empty()) {
      throw Error(ErrorCode::InvalidArgument, "entity-store", "primary id must be nonempty");
    }

    std::set<EntityHandle> matched;
    auto visit = [&](const std::string& token) {
      auto it = tokens_.find(token);
      if (it == tokens_.end()) return;
      const auto root = find_root(it->second);
      if (records_[root].entity.kind != kind) {
        throw Error(ErrorCode::KindConflict, "entity-store",
                    "'" + token + "' is already bound to a " +
                        std::string(to_string(records_[root].entity.kind)) + ", not a " +
                        std::string(to_string(kind)));
      }
      matched.insert(root);
    };
    visit(primary_id);
    for (const auto& a : aliases) visit(a);

    if (descriptor && !descriptor->empty()) {
      auto it = descriptors_.find({kind, *descriptor});
      if (it != descriptors_.end() && !matched.contains(find_root(it->second))) {
        throw Error(ErrorCode::DescriptorConflict, "entity-store",
                    "descriptor of '" + primary_id + "' already belongs to '" +
                        records_[find_root(it->second)].entity.id + "' with no shared alias");
      }
    }
    std::set<std::string> descriptors;
    if (descriptor && !descriptor->empty()) descriptors.insert(*descriptor);
    for (auto h : matched) {
      if (records_[h].entity.descriptor) descriptors.insert(*records_[h].entity.descriptor);
    }
    if (descriptors.size() > 1) {
      throw Error(ErrorCode::DescriptorConflict, "entity-store",
                  "merging '" + primary_id + "' would give one entity two descriptors");
    }

    EntityHandle survivor;
    if (matched.empty()) {
      survivor = static_cast<EntityHandle>(records_.size());
      Record rec;
      rec.entity.id = primary_id;
      rec.entity.kind = kind;
      rec.parent = survivor;
      records_.push_back(std::move(rec));
    } else {
      survivor = *matched.begin();
      for (auto h : matched) {
        if (h != survivor) absorb(survivor, h);
      }
    }

    auto& target = records_[survivor];
    for (const auto& a : aliases) target.entity.aliases.insert(a);
    tokens_.emplace(primary_id, survivor);
    for (const auto& a : aliases) tokens_.emplace(a, survivor);
    if (!descriptors.empty()) {
      target.entity.descriptor = *descriptors.begin();
      descriptors_[{kind, *descriptors.begin()}] = survivor;
    }
    return target.entity;
  }

  /// Resolves a primary id or alias to its (surviving) entity.
  std::optional<EntityHandle> find(const std::string& token) const {
    auto it = tokens_.find(token);
    if (it == tokens_.end()) return std::nullopt;
    return find_root(it->second);
  }

  EntityHandle require(const std::string& token) const {
    auto h = find(token);
    if (!h) throw Error(ErrorCode::UnknownEntity, "entity-store", "unknown entity '" + token + "'");
    return *h;
  }

  const Entity& entity(EntityHandle h) const { return records_.at(find_root(h)).entity; }

  /// Surviving entities in registration order.
  std::vector<EntityHandle> entities() const {
    std::vector<EntityHandle> out;
    for (EntityHandle h = 0; h < records_.size(); ++h) {
      if (records_[h].parent == h) out.push_back(h);
    }
    return out;
  }

  std::vector<EntityHandle> entities_of(EntityKind kind) const {
    std::vector<EntityHandle> out;
    for (auto h : entities()) {
      if (records_[h].entity.kind == kind) out.push_back(h);
    }
    return out;
  }

  std::size_t size() const { return entities().size(); }

  void attach_embedding(EntityHandle h, Embedding emb) {
    check_mutable();
    auto& rec = records_.at(find_root(h));
    const auto want = config_.dims.of(rec.entity.kind);
    if (emb.dim() != want) {
      throw Error(ErrorCode::DimMismatch, "entity-store",
                  std::string(to_string(rec.entity.kind)) + " '" + rec.entity.id +
                      "' expects dim " + std::to_string(want) + ", got " +
                      std::to_string(emb.dim()));
    }
    for (double v : emb.values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::InvalidArgument, "entity-store",
                    "non-finite embedding value for '" + rec.entity.id + "'");
      }
    }
    rec.embedding = std::move(emb);
  }

  void attach_fingerprint(EntityHandle h, Fingerprint fp) {
    check_mutable();
    if (fp.length() != config_.fingerprint_length) {
      throw Error(ErrorCode::LengthMismatch, "entity-store",
                  "fingerprint length " + std::to_string(fp.length()) + " != configured " +
                      std::to_string(config_.fingerprint_length));
    }
    records_.at(find_root(h)).fingerprint = std::move(fp);
  }

  const Embedding* embedding(EntityHandle h) const {
    const auto& rec = records_.at(find_root(h));
    return rec.embedding ? &*rec.embedding : nullptr;
  }

  const Fingerprint* fingerprint(EntityHandle h) const {
    const auto& rec = records_.at(find_root(h));
    return rec.fingerprint ? &*rec.fingerprint : nullptr;
  }

  std::size_t empty_fingerprint_count() const {
    std::size_t n = 0;
    for (auto h : entities()) {
      if (records_[h].fingerprint && records_[h].fingerprint->empty()) ++n;
    }
    return n;
  }

  /// Entities TSV: `id  kind  aliases  descriptor`, aliases comma-separated.
  std::size_t load_entities(const std::string& path) {
    tsv::Reader reader(path, {"id", "kind", "aliases", "descriptor"});
    std::vector<std::string> f;
    std::size_t rows = 0;
    while (reader.next(f)) {
      auto kind = parse_kind(f[1]);
      if (!kind) {
        throw Error(ErrorCode::ParseError, "entity-store",
                    reader.where() + ": unknown kind '" + f[1] + "'");
      }
      std::set<std::string> aliases;
      for (auto a : tsv::split(f[2], ',')) {
        a = tsv::trim(a);
        if (!a.empty()) aliases.emplace(a);
      }
      std::optional<std::string> descriptor;
      if (!f[3].empty()) descriptor = f[3];
      try {
        register_entity(*kind, f[0], aliases, descriptor);
      } catch (const Error& e) {
        throw Error(e.code(), e.module(), reader.where() + ": " + e.what());
      }
      ++rows;
    }
    return rows;
  }

  /// Embedding TSV: `id  values`, comma-separated floats. The whole file is
  /// validated before anything is attached, so a DimMismatch leaves the store
  /// untouched.
  std::size_t load_embedding_table(const std::string& path, EntityKind kind,
                                   LoadReport* report = nullptr) {
    check_mutable();
    tsv::Reader reader(path, {"id", "values"});
    std::vector<std::string> f;
    std::vector<std::pair<EntityHandle, Embedding>> staged;
    LoadReport local;
    const auto want = config_.dims.of(kind);
    while (reader.next(f)) {
      ++local.rows;
      Embedding emb;
      for (auto tok : tsv::split(f[1], ',')) {
        emb.values.push_back(tsv::parse_double(tok, reader.where()));
      }
      if (emb.dim() != want) {
        throw Error(ErrorCode::DimMismatch, "entity-store",
                    reader.where() + ": " + std::string(to_string(kind)) + " '" + f[0] +
                        "' has " + std::to_string(emb.dim()) + " values, expected " +
                        std::to_string(want));
      }
      auto h = find(f[0]);
      if (!h || records_[*h].entity.kind != kind) {
        local.unknown_ids.push_back(f[0]);
        continue;
      }
      staged.emplace_back(*h, std::move(emb));
    }
    for (auto& [h, emb] : staged) attach_embedding(h, std::move(emb));
    local.attached = staged.size();
    if (report) *report = local;
    return local.attached;
  }

  /// Fingerprint TSV: `id  hexbits`. Only drugs carry fingerprints.
  std::size_t load_fingerprints(const std::string& path, LoadReport* report = nullptr) {
    check_mutable();
    tsv::Reader reader(path, {"id", "hexbits"});
    std::vector<std::string> f;
    std::vector<std::pair<EntityHandle, Fingerprint>> staged;
    LoadReport local;
    while (reader.next(f)) {
      ++local.rows;
      Fingerprint fp;
      try {
        fp = Fingerprint::from_hex(tsv::trim(f[1]), config_.fingerprint_length);
      } catch (const Error& e) {
        throw Error(e.code(), e.module(), reader.where() + ": " + e.what());
      }
      auto h = find(f[0]);
      if (!h || records_[*h].entity.kind != EntityKind::Drug) {
        local.unknown_ids.push_back(f[0]);
        continue;
      }
      staged.emplace_back(*h, std::move(fp));
    }
    for (auto& [h, fp] : staged) attach_fingerprint(h, std::move(fp));
    local.attached = staged.size();
    if (report) *report = local;
    return local.attached;
  }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

 private:
  struct Record {
    Entity entity;
    std::optional<Embedding> embedding;
    std::optional<Fingerprint> fingerprint;
    EntityHandle parent = 0;
  };

  void check_mutable() const {
    if (frozen_) throw Error(ErrorCode::FrozenStore, "entity-store", "store is frozen");
  }

  EntityHandle find_root(EntityHandle h) const {
    while (records_.at(h).parent != h) h = records_[h].parent;
    return h;
  }

  void absorb(EntityHandle survivor, EntityHandle other) {
    auto& dst = records_[survivor];
    auto& src = records_[other];
    dst.entity.aliases.insert(src.entity.aliases.begin(), src.entity.aliases.end());
    if (!dst.embedding && src.embedding) dst.embedding = std::move(src.embedding);
    if (!dst.fingerprint && src.fingerprint) dst.fingerprint = std::move(src.fingerprint);
    if (src.entity.descriptor) {
      descriptors_[{src.entity.kind, *src.entity.descriptor}] = survivor;
    }
    src.parent = survivor;
  }

  Config config_;
  std::vector<Record> records_;
  std::map<std::string, EntityHandle> tokens_;
  std::map<std::pair<EntityKind, std::string>, EntityHandle> descriptors_;
  bool frozen_ = false;
};

}  // namespace hetsyn
