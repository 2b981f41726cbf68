// SPDX-License-Identifier: Apache-2.0
#include <random>
#include <thread>

#include "doctest.h"
#include "tts/common/error.hpp"
#include "tts/ledger/ledger.hpp"

using namespace tts;
using namespace tts::ledger;

namespace {

const Principal kSystem{"system", {Role::System}};
const Principal kAnalyst{"analyst", {Role::SecurityAnalyst}};
const Principal kAuditor{"auditor", {Role::Auditor}};

std::shared_ptr<const KeyRing> keys() {
  return std::make_shared<const KeyRing>(
      KeyRing::deterministic("unit", {"system", "analyst", "auditor"}));
}

std::unique_ptr<Ledger> fresh(LedgerConfig cfg = {}) {
  return std::make_unique<Ledger>(cfg, keys(), stepping_clock(100.0, 1.0));
}

Entry entry(const Ledger& l, EntryKind kind, const std::string& subject,
            std::vector<std::string> assets = {}, const std::string& body = "body") {
  return l.make_entry(kind, {subject, std::move(assets)}, as_bytes(body));
}

std::unique_ptr<Ledger> chain_of(std::size_t n) {
  auto l = fresh();
  for (std::size_t i = 0; i < n; ++i) {
    l->append({entry(*l, EntryKind::RuleEntry, "R-" + std::to_string(i), {"sensor1"},
                     "payload " + std::to_string(i)),
               entry(*l, EntryKind::IncidentEntry, "INC-" + std::to_string(i), {"PLC1"})},
              kSystem);
  }
  return l;
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::Io;
}

}  // namespace

TEST_CASE("genesis and linkage") {
  auto l = fresh();
  auto b0 = l->append({entry(*l, EntryKind::RuleEntry, "R-1")}, kAnalyst);
  CHECK(b0.index == 0);
  CHECK(l->block(0)->prev_hash == kZeroDigest);
  auto b1 = l->append({entry(*l, EntryKind::SpecEntry, "spec")}, kAnalyst);
  CHECK(b1.index == 1);
  CHECK(l->block(1)->prev_hash == b0.hash);
  CHECK(l->verify_chain().intact);
}

TEST_CASE("append is permissioned and rejects empty batches") {
  auto l = fresh();
  CHECK(code_of([&] { l->append({entry(*l, EntryKind::RuleEntry, "R-1")}, kAuditor); }) ==
        Errc::Unauthorized);
  CHECK(code_of([&] { l->append({}, kSystem); }) == Errc::EmptyBatch);
  Principal stranger{"stranger", {Role::System}};
  CHECK(code_of([&] { l->append({entry(*l, EntryKind::RuleEntry, "R-1")}, stranger); }) ==
        Errc::Unauthorized);
  CHECK(l->block_count() == 0);
}

TEST_CASE("golden block vector") {
  // Values computed with an independent implementation of the canonical
  // body (Python hashlib + cryptography Ed25519).
  auto ring = std::make_shared<const KeyRing>(KeyRing::deterministic("tts-test-vector", {"system"}));
  Ledger l({}, ring, [] { return 0.0; });
  l.append({l.make_entry(EntryKind::RuleEntry, {"R-1", {"sensor5"}}, as_bytes("hello"))}, kSystem);
  auto b = *l.block(0);
  CHECK(to_hex(b.entries[0].payload_digest) ==
        "492f4fec3d08949f8239b07f4af3e938010195b7f0e60e295835a59d044071e7");
  CHECK(to_hex(b.hash) == "1545528808f402f53c264cbdf24053764619b0fc96082379a538b52339fd11c7");
  CHECK(to_hex(b.signature) ==
        "79a7879b90425ef1babae40af36adb425f01f931d6559a0d983f161a1c7ce85d"
        "915c2dcd256ae68043804b0c6aa725a787fcd29e335acf695389d9655266380b");
  auto pk = ring->public_key("system");
  REQUIRE(pk);
  CHECK(to_hex(ByteView(pk->data(), pk->size())) ==
        "a5c72296176ffe7bde565bc171f1f4ed837e39e34f32ba21556006a2e127d12a");

  Ledger blake({HashAlgorithm::Blake2b256, SignatureAlgorithm::Ed25519}, ring, [] { return 0.0; });
  blake.append({blake.make_entry(EntryKind::RuleEntry, {"R-1", {"sensor5"}}, as_bytes("hello"))},
               kSystem);
  CHECK(to_hex(blake.block(0)->hash) ==
        "385d58366af545c3e7c0a49eacbd5b46458863867b3add77b9c612b0494ce7aa");
  CHECK(blake.verify_chain().intact);
}

TEST_CASE("tamper detection in memory") {
  auto l = chain_of(10);
  CHECK(l->verify_chain().intact);
  CHECK(l->verify_chain().blocks_checked == 10);

  auto blocks = l->snapshot();
  blocks[4].entries[0].payload[6] ^= 0x01;
  auto r = verify_blocks(blocks, l->config(), l->keys());
  CHECK_FALSE(r.intact);
  CHECK(r.broken_at == 4);
  CHECK(r.reason == BreakReason::PayloadDigestMismatch);

  // The writer re-seals block 4 after the edit; block 5 still points at the
  // old hash.
  blocks[4].entries[0].payload_digest = hash(blocks[4].entries[0].payload);
  blocks[4].hash = hash(blocks[4].body());
  blocks[4].signature = l->keys().sign("system", blocks[4].body());
  r = verify_blocks(blocks, l->config(), l->keys());
  CHECK(r.broken_at == 5);
  CHECK(r.reason == BreakReason::LinkageMismatch);

  auto reordered = l->snapshot();
  std::swap(reordered[2], reordered[3]);
  r = verify_blocks(reordered, l->config(), l->keys());
  CHECK(r.broken_at == 2);
  CHECK(r.reason == BreakReason::IndexMismatch);

  auto unsigned_blocks = l->snapshot();
  unsigned_blocks[7].signature[0] ^= 0x80;
  r = verify_blocks(unsigned_blocks, l->config(), l->keys());
  CHECK(r.broken_at == 7);
  CHECK(r.reason == BreakReason::BadSignature);

  KeyRing partial = KeyRing::deterministic("unit", {"analyst"});
  r = verify_blocks(l->snapshot(), l->config(), partial);
  CHECK(r.broken_at == 0);
  CHECK(r.reason == BreakReason::UnknownAuthor);
}

TEST_CASE("export and import round trip") {
  auto l = chain_of(6);
  auto file = l->export_chain();
  auto back = Ledger::import_chain(file, keys(), stepping_clock());
  CHECK(back->export_chain() == file);
  CHECK(back->verify_chain().intact);
  CHECK(back->entry_count() == 12);
  CHECK(verify_chain_file(file, *keys()).intact);

  // Appending to an imported chain links to the last imported block.
  back->append({entry(*back, EntryKind::SpecEntry, "spec")}, kSystem);
  CHECK(back->verify_chain().intact);

  Bytes garbage = file.substr(0, 5);
  CHECK(code_of([&] { Ledger::import_chain(garbage, keys(), stepping_clock()); }) ==
        Errc::Malformed);
}

TEST_CASE("fuzz: any single byte flip is caught at its block") {
  auto l = chain_of(10);
  auto file = l->export_chain();
  // Block extents from the layout: header then per block
  // u32 + body + u32 + signature + hash.
  std::vector<std::size_t> block_end;
  std::size_t pos = 11;
  for (const auto& b : l->snapshot()) {
    pos += 4 + b.body().size() + 4 + b.signature.size() + 32;
    block_end.push_back(pos);
  }
  REQUIRE(block_end.back() == file.size());

  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> where(0, file.size() - 1);
  std::uniform_int_distribution<int> bit(0, 7);
  int detected = 0;
  for (int i = 0; i < 100; ++i) {
    auto at = where(rng);
    auto mutated = file;
    mutated[at] ^= static_cast<std::uint8_t>(1u << bit(rng));
    std::uint64_t expected = 0;
    while (expected < block_end.size() && at >= block_end[expected]) ++expected;
    auto r = verify_chain_file(mutated, *keys());
    if (!r.intact && r.broken_at == expected) ++detected;
    INFO("offset " << at << " reason " << (r.reason ? to_string(*r.reason) : "none"));
    CHECK_FALSE(r.intact);
    CHECK(r.broken_at == expected);
  }
  CHECK(detected == 100);
}

TEST_CASE("query") {
  auto empty = fresh();
  CHECK(empty->query({}).empty());

  auto l = fresh();
  l->append({entry(*l, EntryKind::RuleEntry, "R-1", {"sensor5", "PLC2"})}, kAnalyst);
  l->append({entry(*l, EntryKind::IncidentEntry, "INC-1", {"PLC1"}),
             entry(*l, EntryKind::RuleEntry, "R-2", {"sensor1", "PLC1"})},
            kSystem);
  l->append({entry(*l, EntryKind::RuleEntry, "R-1", {"sensor5", "PLC2"}, "v2")}, kAnalyst);

  QueryFilter rules;
  rules.kind = EntryKind::RuleEntry;
  auto hits = l->query(rules);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].block_index == 0);
  CHECK(hits[1].block_index == 1);
  CHECK(hits[2].block_index == 2);

  QueryFilter r1;
  r1.subject = "R-1";
  hits = l->query(r1);
  REQUIRE(hits.size() == 2);
  CHECK(hits[1].entry.body() == Bytes(as_bytes("v2").begin(), as_bytes("v2").end()));

  QueryFilter plc1;
  plc1.asset_id = "PLC1";
  CHECK(l->query(plc1).size() == 2);

  QueryFilter window;
  window.from_time = 101.0;
  window.to_time = 101.0;
  hits = l->query(window);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].author == "system");
  CHECK(l->query({}).size() == 4);
}

TEST_CASE("property: random operation sequences keep the chain append-only") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> role_pick(0, 4);
  std::uniform_int_distribution<int> kind_pick(1, 4);
  std::uniform_int_distribution<int> batch(0, 3);
  auto l = fresh();
  std::size_t expected_entries = 0;
  std::vector<Bytes> committed_digests;
  for (int op = 0; op < 300; ++op) {
    Principal p{"system", {}};
    int r = role_pick(rng);
    if (r < 4) p.roles.insert(kAllRoles[r]);
    std::vector<Entry> entries;
    int n = batch(rng);
    for (int i = 0; i < n; ++i) {
      entries.push_back(entry(*l, static_cast<EntryKind>(kind_pick(rng)), "S-" + std::to_string(op),
                              {}, std::to_string(op * 10 + i)));
    }
    bool allowed = n > 0;
    for (const auto& e : entries) allowed = allowed && permits(p, write_action(e.kind));
    auto before = l->entry_count();
    try {
      l->append(entries, p);
      CHECK(allowed);
      expected_entries += entries.size();
    } catch (const Error&) {
      CHECK_FALSE(allowed);
    }
    CHECK(l->entry_count() >= before);
    CHECK(l->entry_count() == expected_entries);
    CHECK(l->query({}).size() == expected_entries);
  }
  CHECK(l->verify_chain().intact);
}

TEST_CASE("concurrent appenders serialize") {
  auto l = fresh();
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        l->append({entry(*l, EntryKind::IncidentEntry, "T" + std::to_string(t))}, kSystem);
        l->query({});
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(l->block_count() == 100);
  CHECK(l->verify_chain().intact);
}

TEST_CASE("envelope decoding") {
  auto l = fresh();
  auto e = entry(*l, EntryKind::ProvenanceEntry, "prov/EK/PLC1/sensor1", {"PLC1", "sensor1"}, "x");
  auto env = e.envelope();
  CHECK(env.subject == "prov/EK/PLC1/sensor1");
  CHECK(env.assets == std::vector<std::string>{"PLC1", "sensor1"});
  CHECK(to_string(EntryKind::SpecEntry) == "SpecEntry");
  CHECK(entry_kind_from_string("IncidentEntry") == EntryKind::IncidentEntry);
}
