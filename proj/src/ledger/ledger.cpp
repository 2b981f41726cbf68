// SPDX-License-Identifier: Apache-2.0
#include "tts/ledger/ledger.hpp"

#include <sodium.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <mutex>

#include "tts/common/error.hpp"

namespace tts::ledger {

namespace {

constexpr std::string_view kMagic = "TTSCHAIN";
constexpr std::uint8_t kVersion = 1;

}  // namespace

std::string_view to_string(EntryKind k) noexcept {
  switch (k) {
    case EntryKind::RuleEntry: return "RuleEntry";
    case EntryKind::ProvenanceEntry: return "ProvenanceEntry";
    case EntryKind::SpecEntry: return "SpecEntry";
    case EntryKind::IncidentEntry: return "IncidentEntry";
  }
  return "Unknown";
}

EntryKind entry_kind_from_string(std::string_view name) {
  for (auto k : {EntryKind::RuleEntry, EntryKind::ProvenanceEntry, EntryKind::SpecEntry,
                 EntryKind::IncidentEntry}) {
    if (name == to_string(k)) return k;
  }
  throw Error(Errc::InvalidArgument, "unknown entry kind '" + std::string(name) + "'");
}

Action write_action(EntryKind k) noexcept {
  switch (k) {
    case EntryKind::RuleEntry: return Action::WriteRule;
    case EntryKind::ProvenanceEntry: return Action::WriteProvenance;
    case EntryKind::SpecEntry: return Action::WriteSpec;
    case EntryKind::IncidentEntry: return Action::WriteIncident;
  }
  return Action::WriteRule;
}

std::string_view to_string(SignatureAlgorithm a) noexcept {
  switch (a) {
    case SignatureAlgorithm::Ed25519: return "ed25519";
  }
  return "unknown";
}

SignatureAlgorithm signature_algorithm_from_string(std::string_view name) {
  if (name == "ed25519") return SignatureAlgorithm::Ed25519;
  throw Error(Errc::InvalidArgument, "unknown signature algorithm '" + std::string(name) + "'");
}

std::string_view to_string(BreakReason r) noexcept {
  switch (r) {
    case BreakReason::Malformed: return "Malformed";
    case BreakReason::EmptyBlock: return "EmptyBlock";
    case BreakReason::IndexMismatch: return "IndexMismatch";
    case BreakReason::PayloadDigestMismatch: return "PayloadDigestMismatch";
    case BreakReason::HashMismatch: return "HashMismatch";
    case BreakReason::BadSignature: return "BadSignature";
    case BreakReason::UnknownAuthor: return "UnknownAuthor";
    case BreakReason::LinkageMismatch: return "LinkageMismatch";
    case BreakReason::TimestampRegression: return "TimestampRegression";
  }
  return "Unknown";
}

VerifyResult VerifyResult::broken(std::uint64_t index, BreakReason reason, std::string detail) {
  VerifyResult r;
  r.intact = false;
  r.broken_at = index;
  r.reason = reason;
  r.detail = std::move(detail);
  return r;
}

// --- entries and blocks ---------------------------------------------------

Entry Entry::make(EntryKind kind, const Envelope& envelope, ByteView body, HashAlgorithm algo) {
  ByteWriter w;
  w.str(envelope.subject).u32(static_cast<std::uint32_t>(envelope.assets.size()));
  for (const auto& a : envelope.assets) w.str(a);
  w.raw(body);
  Entry e;
  e.kind = kind;
  e.payload = std::move(w).bytes();
  e.payload_digest = hash(e.payload, algo);
  return e;
}

Envelope Entry::envelope() const {
  ByteReader r(payload);
  Envelope env;
  env.subject = r.str();
  auto n = r.u32();
  if (n > r.remaining() / 4) throw Error(Errc::Malformed, "envelope asset count out of range");
  env.assets.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) env.assets.push_back(r.str());
  return env;
}

Bytes Entry::body() const {
  ByteReader r(payload);
  r.str();
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) r.str();
  return r.raw(r.remaining());
}

Bytes Block::body() const {
  ByteWriter w;
  w.u64(index).digest(prev_hash).f64(timestamp).u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.u8(static_cast<std::uint8_t>(e.kind)).blob(e.payload).digest(e.payload_digest);
  }
  w.str(author);
  return std::move(w).bytes();
}

namespace {

Block decode_body(ByteView body) {
  ByteReader r(body);
  Block b;
  b.index = r.u64();
  b.prev_hash = r.digest();
  b.timestamp = r.f64();
  auto n = r.u32();
  // Each entry needs at least kind + blob length + digest.
  if (n > r.remaining() / 37) throw Error(Errc::Malformed, "entry count out of range");
  b.entries.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Entry e;
    auto kind = r.u8();
    if (kind < 1 || kind > 4) throw Error(Errc::Malformed, "unknown entry kind");
    e.kind = static_cast<EntryKind>(kind);
    e.payload = r.blob();
    e.payload_digest = r.digest();
    b.entries.push_back(std::move(e));
  }
  b.author = r.str();
  r.finish();
  return b;
}

}  // namespace

// --- keys -------------------------------------------------------------------

void KeyRing::add_seeded(const std::string& entity_id, std::string_view seed) {
  ensure_crypto();
  std::string material = std::string(seed) + "/" + entity_id;
  auto s = hash(material, HashAlgorithm::Sha256);
  Keys k;
  std::array<std::uint8_t, 64> sk{};
  crypto_sign_seed_keypair(k.pk.data(), sk.data(), s.data());
  k.sk = sk;
  keys_[entity_id] = k;
}

void KeyRing::add_public(const std::string& entity_id, const PublicKey& key) {
  keys_[entity_id] = Keys{key, std::nullopt};
}

bool KeyRing::can_sign(std::string_view entity_id) const {
  auto it = keys_.find(entity_id);
  return it != keys_.end() && it->second.sk.has_value();
}

bool KeyRing::knows(std::string_view entity_id) const { return keys_.find(entity_id) != keys_.end(); }

std::optional<KeyRing::PublicKey> KeyRing::public_key(std::string_view entity_id) const {
  auto it = keys_.find(entity_id);
  if (it == keys_.end()) return std::nullopt;
  return it->second.pk;
}

Bytes KeyRing::sign(std::string_view entity_id, ByteView message) const {
  ensure_crypto();
  auto it = keys_.find(entity_id);
  if (it == keys_.end() || !it->second.sk) {
    throw Error(Errc::Unauthorized, "no signing key for '" + std::string(entity_id) + "'");
  }
  Bytes sig(crypto_sign_BYTES, 0);
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), it->second.sk->data());
  return sig;
}

bool KeyRing::verify(std::string_view entity_id, ByteView message, ByteView signature) const {
  ensure_crypto();
  auto it = keys_.find(entity_id);
  if (it == keys_.end() || signature.size() != crypto_sign_BYTES) return false;
  return crypto_sign_verify_detached(signature.data(), message.data(), message.size(),
                                     it->second.pk.data()) == 0;
}

KeyRing KeyRing::deterministic(std::string_view seed, const std::vector<std::string>& entities) {
  KeyRing ring;
  for (const auto& e : entities) ring.add_seeded(e, seed);
  return ring;
}

// --- verification -----------------------------------------------------------

VerifyResult verify_blocks(const std::vector<Block>& blocks, const LedgerConfig& config,
                           const KeyRing& keys) {
  VerifyResult ok;
  const Block* prev = nullptr;
  for (const auto& b : blocks) {
    auto i = ok.blocks_checked;
    if (b.index != i) {
      return VerifyResult::broken(i, BreakReason::IndexMismatch,
                                  "stored index " + std::to_string(b.index));
    }
    if (b.entries.empty()) return VerifyResult::broken(i, BreakReason::EmptyBlock, "no entries");
    for (std::size_t e = 0; e < b.entries.size(); ++e) {
      if (hash(b.entries[e].payload, config.hash) != b.entries[e].payload_digest) {
        return VerifyResult::broken(i, BreakReason::PayloadDigestMismatch,
                                    "entry " + std::to_string(e));
      }
    }
    auto body = b.body();
    if (hash(body, config.hash) != b.hash) {
      return VerifyResult::broken(i, BreakReason::HashMismatch, "block hash does not match body");
    }
    if (!keys.knows(b.author)) {
      return VerifyResult::broken(i, BreakReason::UnknownAuthor, "author '" + b.author + "'");
    }
    if (!keys.verify(b.author, body, b.signature)) {
      return VerifyResult::broken(i, BreakReason::BadSignature, "signature of '" + b.author + "'");
    }
    const Digest& expected_prev = prev ? prev->hash : kZeroDigest;
    if (b.prev_hash != expected_prev) {
      return VerifyResult::broken(i, BreakReason::LinkageMismatch,
                                  "prev_hash does not match the preceding block");
    }
    if (prev && b.timestamp < prev->timestamp) {
      return VerifyResult::broken(i, BreakReason::TimestampRegression, "timestamp decreased");
    }
    prev = &b;
    ++ok.blocks_checked;
  }
  return ok;
}

// --- file format -------------------------------------------------------------

Bytes serialize_chain(const std::vector<Block>& blocks, const LedgerConfig& config) {
  ByteWriter w;
  w.raw(as_bytes(kMagic)).u8(kVersion);
  w.u8(static_cast<std::uint8_t>(config.hash)).u8(static_cast<std::uint8_t>(config.signature));
  for (const auto& b : blocks) {
    w.blob(b.body()).blob(b.signature).digest(b.hash);
  }
  return std::move(w).bytes();
}

ParsedChain parse_chain(ByteView file) {
  ParsedChain out;
  ByteReader r(file);
  try {
    auto magic = r.raw(kMagic.size());
    if (std::memcmp(magic.data(), kMagic.data(), kMagic.size()) != 0) {
      throw Error(Errc::Malformed, "bad magic");
    }
    if (r.u8() != kVersion) throw Error(Errc::Malformed, "unsupported chain version");
    auto h = r.u8();
    if (h != 1 && h != 2) throw Error(Errc::Malformed, "unknown hash algorithm");
    out.config.hash = static_cast<HashAlgorithm>(h);
    if (r.u8() != 1) throw Error(Errc::Malformed, "unknown signature algorithm");
  } catch (const Error& e) {
    // Header damage is attributed to the first block.
    out.framing_error = VerifyResult::broken(0, BreakReason::Malformed, e.what());
    return out;
  }
  while (r.remaining() > 0) {
    auto index = out.blocks.size();
    try {
      auto body = r.blob();
      auto block = decode_body(body);
      block.signature = r.blob();
      block.hash = r.digest();
      out.blocks.push_back(std::move(block));
    } catch (const Error& e) {
      out.framing_error = VerifyResult::broken(index, BreakReason::Malformed, e.what());
      return out;
    }
  }
  return out;
}

VerifyResult verify_chain_file(ByteView file, const KeyRing& keys) {
  auto parsed = parse_chain(file);
  auto result = verify_blocks(parsed.blocks, parsed.config, keys);
  if (!result.intact) return result;
  if (parsed.framing_error) {
    auto err = *parsed.framing_error;
    err.blocks_checked = result.blocks_checked;
    return err;
  }
  return result;
}

// --- ledger -------------------------------------------------------------------

Ledger::Ledger(LedgerConfig config, std::shared_ptr<const KeyRing> keys, Clock clock)
    : config_(config), keys_(std::move(keys)), clock_(std::move(clock)) {
  if (!keys_) throw Error(Errc::InvalidArgument, "ledger needs a key ring");
  if (!clock_) throw Error(Errc::InvalidArgument, "ledger needs a clock");
}

BlockRef Ledger::append(std::vector<Entry> entries, const Principal& author) {
  if (entries.empty()) throw Error(Errc::EmptyBatch, "append needs at least one entry");
  for (const auto& e : entries) require(author, write_action(e.kind));
  if (!keys_->can_sign(author.entity_id)) {
    throw Error(Errc::Unauthorized, "no signing key registered for '" + author.entity_id + "'");
  }
  std::unique_lock lock(mu_);
  Block b;
  b.index = blocks_.size();
  b.prev_hash = blocks_.empty() ? kZeroDigest : blocks_.back().hash;
  double now = clock_();
  b.timestamp = blocks_.empty() ? now : std::max(now, blocks_.back().timestamp);
  b.entries = std::move(entries);
  b.author = author.entity_id;
  auto body = b.body();
  b.hash = hash(body, config_.hash);
  b.signature = keys_->sign(b.author, body);
  entries_ += b.entries.size();
  blocks_.push_back(std::move(b));
  return {blocks_.back().index, blocks_.back().hash};
}

VerifyResult Ledger::verify_chain() const {
  std::shared_lock lock(mu_);
  return verify_blocks(blocks_, config_, *keys_);
}

std::vector<QueryHit> Ledger::query(const QueryFilter& f) const {
  std::shared_lock lock(mu_);
  std::vector<QueryHit> hits;
  for (const auto& b : blocks_) {
    if (f.from_time && b.timestamp < *f.from_time) continue;
    if (f.to_time && b.timestamp > *f.to_time) continue;
    for (const auto& e : b.entries) {
      if (f.kind && e.kind != *f.kind) continue;
      if (f.subject || f.asset_id) {
        Envelope env;
        try {
          env = e.envelope();
        } catch (const Error&) {
          continue;
        }
        if (f.subject && env.subject != *f.subject) continue;
        if (f.asset_id && std::find(env.assets.begin(), env.assets.end(), *f.asset_id) ==
                              env.assets.end()) {
          continue;
        }
      }
      hits.push_back({b.index, b.timestamp, b.author, e});
    }
  }
  return hits;
}

std::size_t Ledger::block_count() const {
  std::shared_lock lock(mu_);
  return blocks_.size();
}

std::size_t Ledger::entry_count() const {
  std::shared_lock lock(mu_);
  return entries_;
}

std::vector<Block> Ledger::snapshot() const {
  std::shared_lock lock(mu_);
  return blocks_;
}

std::optional<Block> Ledger::block(std::uint64_t index) const {
  std::shared_lock lock(mu_);
  if (index >= blocks_.size()) return std::nullopt;
  return blocks_[index];
}

Bytes Ledger::export_chain() const {
  std::shared_lock lock(mu_);
  return serialize_chain(blocks_, config_);
}

std::unique_ptr<Ledger> Ledger::import_chain(ByteView file, std::shared_ptr<const KeyRing> keys,
                                             Clock clock) {
  auto parsed = parse_chain(file);
  if (parsed.framing_error) {
    throw Error(Errc::Malformed, "chain file unreadable at block " +
                                     std::to_string(parsed.framing_error->broken_at) + ": " +
                                     parsed.framing_error->detail);
  }
  auto ledger = std::make_unique<Ledger>(parsed.config, std::move(keys), std::move(clock));
  for (const auto& b : parsed.blocks) ledger->entries_ += b.entries.size();
  ledger->blocks_ = std::move(parsed.blocks);
  return ledger;
}

Ledger::Clock stepping_clock(double start, double step) {
  auto counter = std::make_shared<std::atomic<std::int64_t>>(0);
  return [counter, start, step] {
    return start + step * static_cast<double>(counter->fetch_add(1));
  };
}

}  // namespace tts::ledger
