// SPDX-License-Identifier: Apache-2.0
#pragma once

// Permissioned, append-only hash chain for rules, provenance records,
// specification snapshots and incidents. Sensor streams are not chained.
//
// Chain file:
//   "TTSCHAIN" | version u8 | hash algorithm u8 | signature algorithm u8
//   then per block: u32 body length | body | u32 signature length |
//   signature | 32-byte block hash
// Block body (canonical):
//   index u64 | prev_hash [32] | timestamp f64 | u32 entry count |
//   entries (kind u8 | payload blob | payload_digest [32]) | author str

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "tts/common/access.hpp"
#include "tts/common/canonical.hpp"
#include "tts/common/digest.hpp"

namespace tts::ledger {

enum class EntryKind : std::uint8_t {
  RuleEntry = 1,
  ProvenanceEntry = 2,
  SpecEntry = 3,
  IncidentEntry = 4,
};

std::string_view to_string(EntryKind k) noexcept;
EntryKind entry_kind_from_string(std::string_view name);
Action write_action(EntryKind k) noexcept;

/// Leading part of every payload. Queries filter on it without decoding the
/// kind-specific body.
struct Envelope {
  std::string subject;              // rule id, provenance subject, spec id, incident id
  std::vector<std::string> assets;  // associated asset and sensor ids
};

struct Entry {
  EntryKind kind = EntryKind::RuleEntry;
  Bytes payload;
  Digest payload_digest{};

  static Entry make(EntryKind kind, const Envelope& envelope, ByteView body,
                    HashAlgorithm algo = HashAlgorithm::Sha256);

  /// Throw Error(Malformed) on a payload that does not start with an envelope.
  Envelope envelope() const;
  Bytes body() const;
};

struct Block {
  std::uint64_t index = 0;
  Digest prev_hash{};
  double timestamp = 0.0;
  std::vector<Entry> entries;
  std::string author;
  Bytes signature;
  Digest hash{};

  Bytes body() const;
};

enum class SignatureAlgorithm : std::uint8_t { Ed25519 = 1 };

std::string_view to_string(SignatureAlgorithm a) noexcept;
SignatureAlgorithm signature_algorithm_from_string(std::string_view name);

/// Signing keys per entity. Keys are derived from a seed so a deployment can
/// rebuild the same key ring from configuration.
class KeyRing {
 public:
  using PublicKey = std::array<std::uint8_t, 32>;

  void add_seeded(const std::string& entity_id, std::string_view seed);
  void add_public(const std::string& entity_id, const PublicKey& key);

  bool can_sign(std::string_view entity_id) const;
  bool knows(std::string_view entity_id) const;
  std::optional<PublicKey> public_key(std::string_view entity_id) const;

  Bytes sign(std::string_view entity_id, ByteView message) const;
  bool verify(std::string_view entity_id, ByteView message, ByteView signature) const;

  /// Seeded keys for every listed entity.
  static KeyRing deterministic(std::string_view seed, const std::vector<std::string>& entities);

 private:
  struct Keys {
    PublicKey pk{};
    std::optional<std::array<std::uint8_t, 64>> sk;
  };
  std::map<std::string, Keys, std::less<>> keys_;
};

struct LedgerConfig {
  HashAlgorithm hash = HashAlgorithm::Sha256;
  SignatureAlgorithm signature = SignatureAlgorithm::Ed25519;
};

enum class BreakReason {
  Malformed,
  EmptyBlock,
  IndexMismatch,
  PayloadDigestMismatch,
  HashMismatch,
  BadSignature,
  UnknownAuthor,
  LinkageMismatch,
  TimestampRegression,
};

std::string_view to_string(BreakReason r) noexcept;

struct VerifyResult {
  bool intact = true;
  std::uint64_t broken_at = 0;
  std::optional<BreakReason> reason;
  std::string detail;
  std::uint64_t blocks_checked = 0;

  static VerifyResult broken(std::uint64_t index, BreakReason reason, std::string detail);
};

VerifyResult verify_blocks(const std::vector<Block>& blocks, const LedgerConfig& config,
                           const KeyRing& keys);

struct BlockRef {
  std::uint64_t index = 0;
  Digest hash{};
};

struct QueryFilter {
  std::optional<EntryKind> kind;
  std::optional<std::string> subject;  // rule_id for rule entries
  std::optional<std::string> asset_id;
  std::optional<double> from_time;  // inclusive, block timestamp
  std::optional<double> to_time;    // inclusive
};

struct QueryHit {
  std::uint64_t block_index = 0;
  double timestamp = 0.0;
  std::string author;
  Entry entry;
};

/// Result of reading a chain file. Framing errors do not throw: the blocks
/// parsed so far are kept and the failure is attributed to the block whose
/// bytes could not be read.
struct ParsedChain {
  LedgerConfig config;
  std::vector<Block> blocks;
  std::optional<VerifyResult> framing_error;
};

ParsedChain parse_chain(ByteView file);
Bytes serialize_chain(const std::vector<Block>& blocks, const LedgerConfig& config);

/// Parse then verify; framing errors count as a break at that block.
VerifyResult verify_chain_file(ByteView file, const KeyRing& keys);

/// Single serialized appender, concurrent readers.
class Ledger {
 public:
  using Clock = std::function<double()>;

  Ledger(LedgerConfig config, std::shared_ptr<const KeyRing> keys, Clock clock);

  /// Throws Error(EmptyBatch) on an empty batch and Error(Unauthorized) when
  /// the author lacks the write role for any entry kind or has no signing key.
  BlockRef append(std::vector<Entry> entries, const Principal& author);

  VerifyResult verify_chain() const;
  std::vector<QueryHit> query(const QueryFilter& filter) const;

  std::size_t block_count() const;
  std::size_t entry_count() const;
  std::vector<Block> snapshot() const;
  std::optional<Block> block(std::uint64_t index) const;

  Bytes export_chain() const;

  /// Throws Error(Malformed) when the file does not parse. Integrity is not
  /// checked here; call verify_chain() on the result.
  static std::unique_ptr<Ledger> import_chain(ByteView file, std::shared_ptr<const KeyRing> keys,
                                              Clock clock);

  const LedgerConfig& config() const { return config_; }
  const KeyRing& keys() const { return *keys_; }
  Entry make_entry(EntryKind kind, const Envelope& envelope, ByteView body) const {
    return Entry::make(kind, envelope, body, config_.hash);
  }

 private:
  LedgerConfig config_;
  std::shared_ptr<const KeyRing> keys_;
  Clock clock_;
  mutable std::shared_mutex mu_;
  std::vector<Block> blocks_;
  std::size_t entries_ = 0;
};

/// A clock that advances by `step` seconds on every call, starting at `start`.
Ledger::Clock stepping_clock(double start = 0.0, double step = 1.0);

}  // namespace tts::ledger
