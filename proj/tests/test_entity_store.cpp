#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "hetsyn/entity_store.hpp"
#include "support/errors.hpp"
#include "support/tempdir.hpp"

using namespace hetsyn;
using hetsyn::testing::TempDir;

namespace {

EntityStore small_store() { return EntityStore({{4, 3, 2}, 64}); }

}  // namespace

TEST(RegisterEntity, SameRecordTwiceIsOneEntity) {
  auto s = small_store();
  s.register_entity(EntityKind::Drug, "D1", {"CHEMBL25"});
  s.register_entity(EntityKind::Drug, "D1", {"CHEMBL25"});
  EXPECT_EQ(s.size(), 1u);
}

TEST(RegisterEntity, SharedAliasMergesRecords) {
  auto s = small_store();
  s.register_entity(EntityKind::Drug, "D1", {"CHEMBL25"});
  const auto& merged = s.register_entity(EntityKind::Drug, "D2", {"CHEMBL25", "DB00945"});
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(merged.id, "D1");
  EXPECT_EQ(merged.aliases, (std::set<std::string>{"CHEMBL25", "DB00945"}));
  EXPECT_EQ(*s.find("D2"), *s.find("D1"));
  EXPECT_EQ(*s.find("DB00945"), *s.find("D1"));
}

TEST(RegisterEntity, AliasBoundToOtherKindIsKindConflict) {
  auto s = small_store();
  s.register_entity(EntityKind::Disease, "S1", {"MONDO:1"});
  EXPECT_ERROR_CODE(s.register_entity(EntityKind::Protein, "P1", {"MONDO:1"}), ErrorCode::KindConflict);
}

TEST(RegisterEntity, DescriptorOnTwoIdsWithoutSharedAliasConflicts) {
  auto s = small_store();
  s.register_entity(EntityKind::Drug, "D1", {"A"}, "CCO");
  EXPECT_ERROR_CODE(s.register_entity(EntityKind::Drug, "D2", {"B"}, "CCO"), ErrorCode::DescriptorConflict);
  // With a shared alias the same descriptor is a plain merge.
  s.register_entity(EntityKind::Drug, "D3", {"A"}, "CCO");
  EXPECT_EQ(s.size(), 1u);
}

TEST(RegisterEntity, EmptyPrimaryIdRejected) {
  auto s = small_store();
  EXPECT_ERROR_CODE(s.register_entity(EntityKind::Drug, ""), ErrorCode::InvalidArgument);
}

TEST(RegisterEntity, BridgingRecordFoldsEntities) {
  auto s = small_store();
  s.register_entity(EntityKind::Drug, "D1", {"a"});
  s.register_entity(EntityKind::Drug, "D2", {"b"});
  s.register_entity(EntityKind::Drug, "D3", {"a", "b"});
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s.entity(*s.find("b")).id, "D1");
}

TEST(RegisterEntity, FrozenStoreRejectsMutation) {
  auto s = small_store();
  s.freeze();
  EXPECT_ERROR_CODE(s.register_entity(EntityKind::Drug, "D1"), ErrorCode::FrozenStore);
}

// Alias partitions must not depend on registration order.
TEST(RegisterEntity, MergeIsOrderIndependent) {
  struct Rec {
    std::string id;
    std::set<std::string> aliases;
  };
  const std::vector<Rec> recs = {{"D1", {"a"}}, {"D2", {"b"}},      {"D3", {"c", "a"}},
                                 {"D4", {"d"}}, {"D5", {"b", "e"}}, {"D6", {"f"}},
                                 {"D7", {"d", "g"}}};
  auto partition = [&](const std::vector<std::size_t>& order) {
    auto s = small_store();
    for (auto i : order) s.register_entity(EntityKind::Drug, recs[i].id, recs[i].aliases);
    std::set<std::set<std::string>> parts;
    for (auto h : s.entities()) {
      std::set<std::string> tokens = s.entity(h).aliases;
      for (const auto& r : recs) {
        if (*s.find(r.id) == h) tokens.insert(r.id);
      }
      parts.insert(tokens);
    }
    return parts;
  };
  std::vector<std::size_t> order(recs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto reference = partition(order);
  EXPECT_EQ(reference.size(), 4u);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    rng.shuffle(std::span<std::size_t>(order));
    EXPECT_EQ(partition(order), reference);
  }
}

TEST(RegisterEntity, AliasResolvesToAtMostOneEntity) {
  auto s = small_store();
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    std::set<std::string> aliases;
    for (int k = 0; k < 2; ++k) aliases.insert("x" + std::to_string(rng.index(150)));
    s.register_entity(EntityKind::Drug, "D" + std::to_string(i), aliases);
  }
  std::map<std::string, EntityHandle> owner;
  for (auto h : s.entities()) {
    for (const auto& a : s.entity(h).aliases) {
      EXPECT_TRUE(owner.emplace(a, h).second) << a << " owned twice";
      EXPECT_EQ(*s.find(a), h);
    }
  }
}

TEST(AttachEmbedding, StoresPublishedDrugWidth) {
  EntityStore s;
  auto h = *s.find(s.register_entity(EntityKind::Drug, "D1").id);
  s.attach_embedding(h, {std::vector<double>(2304, 0.5)});
  ASSERT_NE(s.embedding(h), nullptr);
  EXPECT_EQ(s.embedding(h)->dim(), 2304u);
}

TEST(AttachEmbedding, WrongWidthIsDimMismatch) {
  EntityStore s;
  s.register_entity(EntityKind::Protein, "P1");
  EXPECT_ERROR_CODE(s.attach_embedding(*s.find("P1"), {std::vector<double>(512, 0.0)}), ErrorCode::DimMismatch);
}

TEST(AttachEmbedding, SecondAttachWins) {
  auto s = small_store();
  s.register_entity(EntityKind::Disease, "S1");
  s.attach_embedding(*s.find("S1"), {{1, 2}});
  s.attach_embedding(*s.find("S1"), {{3, 4}});
  EXPECT_EQ(s.embedding(*s.find("S1"))->values, (std::vector<double>{3, 4}));
}

TEST(LoadEmbeddingTable, HeaderOnlyLoadsNothing) {
  TempDir dir("emb");
  auto s = small_store();
  EXPECT_EQ(s.load_embedding_table(dir.write("e.tsv", "id\tvalues\n"), EntityKind::Protein), 0u);
}

TEST(LoadEmbeddingTable, ThreeRowsAndUnknownIdsReported) {
  TempDir dir("emb");
  auto s = small_store();
  for (auto id : {"P1", "P2", "P3"}) s.register_entity(EntityKind::Protein, id);
  const auto path = dir.write("e.tsv",
                              "id\tvalues\n"
                              "P1\t1,2,3\n"
                              "P2\t0.5,-1e-3,2\n"
                              "P3\t0,0,0\n"
                              "P9\t1,1,1\n");
  LoadReport rep;
  EXPECT_EQ(s.load_embedding_table(path, EntityKind::Protein, &rep), 3u);
  EXPECT_EQ(rep.rows, 4u);
  EXPECT_EQ(rep.unknown_ids, std::vector<std::string>{"P9"});
  EXPECT_EQ(s.embedding(*s.find("P2"))->values, (std::vector<double>{0.5, -1e-3, 2}));
}

TEST(LoadEmbeddingTable, ShortRowIsDimMismatchAtThatLine) {
  TempDir dir("emb");
  EntityStore s;  // protein width 768
  s.register_entity(EntityKind::Protein, "P1");
  s.register_entity(EntityKind::Protein, "P2");
  std::string good, bad;
  for (int i = 0; i < 768; ++i) good += (i ? ",0.1" : "0.1");
  for (int i = 0; i < 767; ++i) bad += (i ? ",0.1" : "0.1");
  const auto path = dir.write("e.tsv", "id\tvalues\nP1\t" + good + "\nP2\t" + bad + "\n");
  try {
    s.load_embedding_table(path, EntityKind::Protein);
    FAIL() << "no throw";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  EXPECT_EQ(s.embedding(*s.find("P1")), nullptr) << "load must be all-or-nothing";
}

TEST(LoadEmbeddingTable, MalformedNumberIsParseErrorWithLine) {
  TempDir dir("emb");
  auto s = small_store();
  s.register_entity(EntityKind::Disease, "S1");
  try {
    s.load_embedding_table(dir.write("e.tsv", "id\tvalues\nS1\t1,abc\n"), EntityKind::Disease);
    FAIL() << "no throw";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

TEST(LoadEntities, ParsesAliasesAndDescriptors) {
  TempDir dir("ent");
  auto s = small_store();
  const auto path = dir.write("ent.tsv",
                              "id\tkind\taliases\tdescriptor\n"
                              "D1\tdrug\tCHEMBL25,DB00945\tCC(=O)O\n"
                              "P1\tprotein\t\tMKV\n"
                              "S1\tdisease\t\t\n");
  EXPECT_EQ(s.load_entities(path), 3u);
  const auto& d = s.entity(*s.find("DB00945"));
  EXPECT_EQ(d.id, "D1");
  EXPECT_EQ(d.descriptor, "CC(=O)O");
  EXPECT_EQ(s.entities_of(EntityKind::Protein).size(), 1u);
}

TEST(Fingerprints, HexRoundTripAndEmptyCount) {
  TempDir dir("fp");
  EntityStore s({{4, 3, 2}, 16});
  s.register_entity(EntityKind::Drug, "D1");
  s.register_entity(EntityKind::Drug, "D2");
  s.load_fingerprints(dir.write("fp.tsv", "id\thexbits\nD1\t8001\nD2\t0000\n"));
  const auto* fp = s.fingerprint(*s.find("D1"));
  ASSERT_NE(fp, nullptr);
  EXPECT_EQ(fp->count(), 2u);
  EXPECT_EQ(Fingerprint::from_hex(fp->to_hex(), 16), *fp);
  EXPECT_EQ(s.empty_fingerprint_count(), 1u);
}

TEST(ToyFingerprint, Deterministic) {
  EXPECT_EQ(toy_fingerprint("CC(=O)Oc1ccccc1C(=O)O", 2048), toy_fingerprint("CC(=O)Oc1ccccc1C(=O)O", 2048));
}

TEST(ToyFingerprint, EmptyStringIsAllZero) {
  EXPECT_EQ(toy_fingerprint("", 2048).count(), 0u);
  EXPECT_EQ(toy_fingerprint("", 2048).length(), 2048u);
}

TEST(ToyFingerprint, DistinctStringsDiffer) {
  Rng rng(5);
  const std::string alphabet = "CNOSPFclnos()=#[]123456@+-";
  std::vector<std::string> strings;
  std::set<std::string> seen;
  while (strings.size() < 100) {
    std::string s;
    for (int i = 0; i < 20; ++i) s += alphabet[rng.index(alphabet.size())];
    if (seen.insert(s).second) strings.push_back(s);
  }
  std::vector<Fingerprint> fps;
  for (const auto& s : strings) fps.push_back(toy_fingerprint(s, 2048));
  for (std::size_t i = 0; i < fps.size(); ++i) {
    for (std::size_t j = i + 1; j < fps.size(); ++j) {
      EXPECT_FALSE(fps[i] == fps[j]) << strings[i] << " vs " << strings[j];
    }
  }
}
