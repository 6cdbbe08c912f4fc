#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fedchain/bytes.hpp"
#include "fedchain/sha2.hpp"

// Append-only hash-chained transaction ledger. Stands in for the blockchain
// network: a single logical writer, explicit sealing, SHA-256 everywhere.

namespace fedchain::ledger {

enum class TxKind : std::uint64_t {
  Register = 0,
  ModelUpload = 1,
  ParameterSubmission = 2,
  AggregatedModel = 3,
  UnlearnResult = 4,
  VerificationRecord = 5,
};

inline std::string_view to_string(TxKind k) {
  switch (k) {
    case TxKind::Register: return "Register";
    case TxKind::ModelUpload: return "ModelUpload";
    case TxKind::ParameterSubmission: return "ParameterSubmission";
    case TxKind::AggregatedModel: return "AggregatedModel";
    case TxKind::UnlearnResult: return "UnlearnResult";
    case TxKind::VerificationRecord: return "VerificationRecord";
  }
  return "?";
}

inline std::optional<TxKind> kind_from_string(std::string_view s) {
  for (auto k : {TxKind::Register, TxKind::ModelUpload, TxKind::ParameterSubmission,
                 TxKind::AggregatedModel, TxKind::UnlearnResult, TxKind::VerificationRecord})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

enum class LedgerError {
  NonMonotonicTime,
  EmptyPayload,
  NothingPending,
  UnknownTransaction,
};

inline std::string_view to_string(LedgerError e) {
  switch (e) {
    case LedgerError::NonMonotonicTime: return "NonMonotonicTime";
    case LedgerError::EmptyPayload: return "EmptyPayload";
    case LedgerError::NothingPending: return "NothingPending";
    case LedgerError::UnknownTransaction: return "UnknownTransaction";
  }
  return "?";
}

struct Transaction {
  Digest t_id{};
  TxKind kind = TxKind::Register;
  std::string submitter;
  Digest payload_digest{};
  Bytes payload;
  double sim_time_s = 0.0;

  // t_id binds (kind, submitter, payload_digest, sim_time_s); anyone holding
  // the transaction can recompute it.
  static Digest compute_id(TxKind kind, std::string_view submitter, const Digest& payload_digest,
                           double sim_time_s) {
    CanonicalWriter w;
    w.u64(static_cast<std::uint64_t>(kind)).str(submitter).digest(payload_digest).f64(sim_time_s);
    return Sha256::digest(w.data());
  }
};

struct Block {
  std::uint64_t index = 0;
  Digest prev_hash{};
  std::vector<Transaction> transactions;
  Digest block_hash{};

  static Digest compute_hash(std::uint64_t index, const Digest& prev_hash,
                             const std::vector<Transaction>& txs) {
    CanonicalWriter w;
    w.u64(index).digest(prev_hash).u64(txs.size());
    for (const auto& tx : txs) w.digest(tx.t_id);
    return Sha256::digest(w.data());
  }
};

struct ChainVerdict {
  bool valid = true;
  std::uint64_t first_bad_block = 0;
};

template <typename T>
using Result = std::variant<T, LedgerError>;

template <typename T>
bool ok(const Result<T>& r) {
  return std::holds_alternative<T>(r);
}

template <typename T>
LedgerError error_of(const Result<T>& r) {
  return std::get<LedgerError>(r);
}

class ChainState {
 public:
  Result<Digest> submit_transaction(TxKind kind, std::string_view submitter, Bytes payload,
                                    double sim_time_s) {
    if (payload.empty()) return LedgerError::EmptyPayload;
    if (sim_time_s < last_time_) return LedgerError::NonMonotonicTime;
    Transaction tx;
    tx.kind = kind;
    tx.submitter = std::string(submitter);
    tx.payload = std::move(payload);
    tx.payload_digest = Sha256::digest(tx.payload);
    tx.sim_time_s = sim_time_s;
    tx.t_id = Transaction::compute_id(kind, tx.submitter, tx.payload_digest, sim_time_s);
    last_time_ = sim_time_s;
    pending_.push_back(std::move(tx));
    return pending_.back().t_id;
  }

  Result<const Block*> seal_block() {
    if (pending_.empty()) return LedgerError::NothingPending;
    Block b;
    b.index = blocks_.size();
    b.prev_hash = blocks_.empty() ? Digest{} : blocks_.back().block_hash;
    b.transactions = std::move(pending_);
    pending_.clear();
    b.block_hash = Block::compute_hash(b.index, b.prev_hash, b.transactions);
    blocks_.push_back(std::move(b));
    const Block& sealed = blocks_.back();
    for (std::size_t i = 0; i < sealed.transactions.size(); ++i)
      tx_index_.emplace(sealed.transactions[i].t_id, std::make_pair(sealed.index, i));
    return &sealed;
  }

  // Valid iff every block and transaction invariant holds; reports the lowest
  // violating block otherwise.
  ChainVerdict verify_chain() const {
    for (std::uint64_t i = 0; i < blocks_.size(); ++i) {
      const Block& b = blocks_[i];
      if (b.index != i) return {false, i};
      if (i == 0) {
        if (b.prev_hash != Digest{}) return {false, i};
      } else {
        if (b.prev_hash != blocks_[i - 1].block_hash) return {false, i};
      }
      for (const auto& tx : b.transactions) {
        if (tx.payload_digest != Sha256::digest(tx.payload)) return {false, i};
        if (tx.t_id !=
            Transaction::compute_id(tx.kind, tx.submitter, tx.payload_digest, tx.sim_time_s))
          return {false, i};
      }
      if (b.block_hash != Block::compute_hash(b.index, b.prev_hash, b.transactions))
        return {false, i};
    }
    return {true, 0};
  }

  // Sealed transactions only; pending ones are not final.
  Result<const Transaction*> get_transaction(const Digest& t_id) const {
    auto it = tx_index_.find(t_id);
    if (it == tx_index_.end()) return LedgerError::UnknownTransaction;
    const auto& [block_idx, pos] = it->second;
    return &blocks_[block_idx].transactions[pos];
  }

  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<Transaction>& pending() const { return pending_; }
  double last_time() const { return last_time_; }

  std::size_t count_kind(TxKind k) const {
    std::size_t n = 0;
    for (const auto& b : blocks_)
      for (const auto& tx : b.transactions)
        if (tx.kind == k) ++n;
    return n;
  }

  std::size_t total_sealed() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.transactions.size();
    return n;
  }

  // One block per line; byte-exact for identical runs.
  std::string export_jsonl() const {
    std::string out;
    for (const auto& b : blocks_) {
      nlohmann::json jb;
      jb["index"] = b.index;
      jb["prev_hash"] = to_hex(b.prev_hash);
      jb["block_hash"] = to_hex(b.block_hash);
      nlohmann::json txs = nlohmann::json::array();
      for (const auto& tx : b.transactions) {
        nlohmann::json jt;
        jt["t_id"] = to_hex(tx.t_id);
        jt["kind"] = std::string(to_string(tx.kind));
        jt["submitter"] = tx.submitter;
        jt["payload_digest"] = to_hex(tx.payload_digest);
        jt["sim_time_s"] = tx.sim_time_s;
        txs.push_back(std::move(jt));
      }
      jb["transactions"] = std::move(txs);
      out += jb.dump();
      out += '\n';
    }
    return out;
  }

  // Rebuilds a chain from externally held blocks (tamper tests, audit
  // replay). The tx index is reconstructed; no validation is performed here.
  static ChainState from_parts(std::vector<Block> blocks, std::vector<Transaction> pending) {
    ChainState c;
    c.blocks_ = std::move(blocks);
    c.pending_ = std::move(pending);
    for (const auto& b : c.blocks_)
      for (std::size_t i = 0; i < b.transactions.size(); ++i)
        c.tx_index_.emplace(b.transactions[i].t_id, std::make_pair(b.index, i));
    for (const auto& b : c.blocks_)
      for (const auto& tx : b.transactions) c.last_time_ = std::max(c.last_time_, tx.sim_time_s);
    for (const auto& tx : c.pending_) c.last_time_ = std::max(c.last_time_, tx.sim_time_s);
    return c;
  }

 private:
  std::vector<Block> blocks_;
  std::vector<Transaction> pending_;
  std::map<Digest, std::pair<std::uint64_t, std::size_t>> tx_index_;
  double last_time_ = 0.0;
};

}  // namespace fedchain::ledger
