#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedchain/bytes.hpp"
#include "fedchain/identity.hpp"
#include "fedchain/ledger.hpp"
#include "fedchain/tinylm.hpp"
#include "fedchain/unlearner.hpp"

// Smart-contract state machine: model upload/distribution, client-update
// recording, aggregation commit, and unlearning-result commit. Every state
// change seals exactly one block of transactions, so replaying the ledger
// reconstructs this state. Auth error strings mirror the protocol exactly:
//   "Agent jwt token expired"      (model upload, Alg. 2 path)
//   "Client identity check false"  (client-side submissions)
//   "Agent identity check false"   (agent-side aggregation path)

namespace fedchain::chaincode {

inline constexpr const char* kAgentTokenExpired = "Agent jwt token expired";
inline constexpr const char* kClientCheckFalse = "Client identity check false";
inline constexpr const char* kAgentCheckFalse = "Agent identity check false";

enum class Status {
  Ok,
  AuthError,
  DuplicateSubmission,
  CriteriaNotMet,
  NoGlobalModel,
  VersionMismatch,
  InvalidSubmission,
};

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Ok: return "Ok";
    case Status::AuthError: return "AuthError";
    case Status::DuplicateSubmission: return "DuplicateSubmission";
    case Status::CriteriaNotMet: return "CriteriaNotMet";
    case Status::NoGlobalModel: return "NoGlobalModel";
    case Status::VersionMismatch: return "VersionMismatch";
    case Status::InvalidSubmission: return "InvalidSubmission";
  }
  return "?";
}

struct GlobalModelRecord {
  std::uint64_t version = 0;
  Digest weights_digest{};
  Bytes weights;  // serialized model bytes; exactly the ledgered payload
  Digest t_id{};
};

struct ParameterSubmission {
  std::string client;
  std::uint64_t round = 0;
  Bytes update;        // serialized parameter delta
  std::string flavor;  // "adapter" or "full"
  std::uint64_t sample_count = 0;
  Digest t_id{};
};

struct UnlearnRecord {
  Digest unlearn_t_id{};
  Digest verification_t_id{};
  std::uint64_t base_version = 0;
};

class State {
 public:
  // When set, model payloads carry only the 32-byte digest instead of the
  // full weight bytes (the large-model switch).
  bool digest_only_payloads = false;

  const std::optional<GlobalModelRecord>& global() const { return global_; }
  const std::vector<UnlearnRecord>& unlearn_records() const { return unlearn_records_; }

  const std::vector<ParameterSubmission>& submissions(std::uint64_t round) const {
    static const std::vector<ParameterSubmission> empty;
    auto it = submissions_.find(round);
    return it == submissions_.end() ? empty : it->second;
  }

  struct UploadResult {
    Status status = Status::AuthError;
    std::string error;
    std::uint64_t version = 0;
    Digest t_id{};
  };

  UploadResult upload_global_model(const identity::UserPool& pool, ledger::ChainState& chain,
                                   const identity::AuthToken& token, Bytes weights,
                                   double now_s) {
    UploadResult out;
    auto check = identity::verify_token(pool, token, now_s);
    if (!check.ok() || check.role != identity::Role::Agent) {
      out.error = kAgentTokenExpired;
      return out;
    }
    out.version = global_ ? global_->version + 1 : 0;
    out.t_id = commit_model_record(chain, token.subject(), std::move(weights), out.version,
                                   ledger::TxKind::ModelUpload, now_s);
    out.status = Status::Ok;
    return out;
  }

  struct RecordResult {
    Status status = Status::AuthError;
    std::string error;
    Digest t_id{};
  };

  struct SubmissionIn {
    std::string client;
    std::uint64_t round = 0;
    Bytes update;
    std::string flavor = "adapter";
    std::uint64_t sample_count = 1;
  };

  RecordResult record_client_update(const identity::UserPool& pool, ledger::ChainState& chain,
                                    const identity::AuthToken& token, const SubmissionIn& sub,
                                    double now_s) {
    RecordResult out;
    auto check = identity::verify_token(pool, token, now_s);
    if (!check.ok() || check.role != identity::Role::Client ||
        check.subject != sub.client) {
      out.error = kClientCheckFalse;
      return out;
    }
    if (!global_) {
      out.status = Status::NoGlobalModel;
      out.error = "no global model uploaded";
      return out;
    }
    if (sub.sample_count < 1 || sub.update.empty()) {
      out.status = Status::InvalidSubmission;
      out.error = "submission needs sample_count >= 1 and a non-empty update";
      return out;
    }
    for (const auto& existing : submissions_[sub.round]) {
      if (existing.client == sub.client) {
        out.status = Status::DuplicateSubmission;
        out.error = "duplicate submission for round";
        return out;
      }
    }

    nlohmann::json payload;
    payload["client"] = sub.client;
    payload["flavor"] = sub.flavor;
    payload["round"] = sub.round;
    payload["sample_count"] = sub.sample_count;
    payload["update"] = digest_only_payloads
                            ? to_hex(Sha256::digest(sub.update))
                            : to_hex(std::span<const std::uint8_t>(sub.update.data(),
                                                                   sub.update.size()));
    auto submitted = chain.submit_transaction(ledger::TxKind::ParameterSubmission, sub.client,
                                              to_bytes(payload.dump()), now_s);
    out.t_id = std::get<Digest>(submitted);
    (void)chain.seal_block();

    ParameterSubmission stored{sub.client, sub.round, sub.update, sub.flavor,
                               sub.sample_count, out.t_id};
    submissions_[sub.round].push_back(std::move(stored));
    out.status = Status::Ok;
    return out;
  }

  struct ReleaseResult {
    Status status = Status::AuthError;
    std::string error;
    std::vector<ParameterSubmission> updates;
  };

  ReleaseResult release_parameters_to_agent(const identity::UserPool& pool,
                                            const identity::AuthToken& token,
                                            std::uint64_t round, double now_s) const {
    ReleaseResult out;
    auto check = identity::verify_token(pool, token, now_s);
    if (!check.ok() || check.role != identity::Role::Agent) {
      out.error = kAgentCheckFalse;
      return out;
    }
    out.updates = submissions(round);
    out.status = Status::Ok;
    return out;
  }

  struct CommitResult {
    Status status = Status::AuthError;
    std::string error;
    std::uint64_t version = 0;
    Digest t_id{};
  };

  CommitResult commit_aggregated_model(const identity::UserPool& pool,
                                       ledger::ChainState& chain,
                                       const identity::AuthToken& token, Bytes new_weights,
                                       double now_s) {
    CommitResult out;
    auto check = identity::verify_token(pool, token, now_s);
    if (!check.ok() || check.role != identity::Role::Agent) {
      out.error = kAgentCheckFalse;
      return out;
    }
    if (!global_) {
      out.status = Status::NoGlobalModel;
      out.error = "no prior global model";
      return out;
    }
    out.version = global_->version + 1;
    out.t_id = commit_model_record(chain, token.subject(), std::move(new_weights), out.version,
                                   ledger::TxKind::AggregatedModel, now_s);
    out.status = Status::Ok;
    return out;
  }

  struct UnlearnCommitResult {
    Status status = Status::AuthError;
    std::string error;
    Digest t_id{};               // UnlearnResult transaction
    Digest verification_t_id{};  // VerificationRecord transaction
    unlearner::Verdict verdict;
  };

  // Recomputes the verification from the current global model and the
  // submitted delta; nothing is sealed unless the criteria hold.
  UnlearnCommitResult commit_unlearning_result(const identity::UserPool& pool,
                                               ledger::ChainState& chain,
                                               const identity::AuthToken& token,
                                               const unlearner::UnlearnReport& report,
                                               const unlearner::VerificationCriteria& criteria,
                                               const unlearner::ValidationData& validation,
                                               double now_s) {
    UnlearnCommitResult out;
    auto check = identity::verify_token(pool, token, now_s);
    if (!check.ok() || check.role != identity::Role::Client) {
      out.error = kClientCheckFalse;
      return out;
    }
    if (!global_) {
      out.status = Status::NoGlobalModel;
      out.error = "no global model";
      return out;
    }
    if (report.base_version != global_->version) {
      out.status = Status::VersionMismatch;
      out.error = "report references version " + std::to_string(report.base_version) +
                  ", chain has " + std::to_string(global_->version);
      return out;
    }

    tinylm::Model model = tinylm::deserialize_model(
        std::span<const std::uint8_t>(global_->weights.data(), global_->weights.size()));
    out.verdict = unlearner::verify(model, report, criteria, validation);
    if (!out.verdict.pass) {
      out.status = Status::CriteriaNotMet;
      out.error = "verification criteria not met";
      return out;
    }

    auto submitted = chain.submit_transaction(ledger::TxKind::UnlearnResult, check.subject,
                                              to_bytes(report.to_json().dump()), now_s);
    out.t_id = std::get<Digest>(submitted);

    nlohmann::json record;
    record["criteria"] = criteria.to_json();
    record["unlearn_t_id"] = to_hex(out.t_id);
    record["verdict"] = out.verdict.to_json();
    auto ver = chain.submit_transaction(ledger::TxKind::VerificationRecord, check.subject,
                                        to_bytes(record.dump()), now_s);
    out.verification_t_id = std::get<Digest>(ver);
    (void)chain.seal_block();

    unlearn_records_.push_back({out.t_id, out.verification_t_id, report.base_version});
    out.status = Status::Ok;
    return out;
  }

  // Rebuilds chaincode state by walking the sealed chain; the ledger is the
  // system of record. Requires full payloads (the digest-only switch keeps
  // weights off-chain and cannot be replayed into state).
  static State restore_from_chain(const ledger::ChainState& chain) {
    State st;
    std::uint64_t next_version = 0;
    for (const auto& block : chain.blocks()) {
      for (const auto& tx : block.transactions) {
        switch (tx.kind) {
          case ledger::TxKind::ModelUpload:
          case ledger::TxKind::AggregatedModel: {
            if (tx.payload.size() == 32)
              throw ModuleError("DigestOnlyState",
                                "chain carries digests only; state cannot be replayed");
            st.global_ = GlobalModelRecord{next_version, Sha256::digest(tx.payload),
                                           tx.payload, tx.t_id};
            ++next_version;
            break;
          }
          case ledger::TxKind::ParameterSubmission: {
            auto j = nlohmann::json::parse(tx.payload.begin(), tx.payload.end());
            auto update = from_hex(j.at("update").get<std::string>());
            ParameterSubmission sub;
            sub.client = j.at("client").get<std::string>();
            sub.round = j.at("round").get<std::uint64_t>();
            sub.update = update ? *update : Bytes{};
            sub.flavor = j.at("flavor").get<std::string>();
            sub.sample_count = j.at("sample_count").get<std::uint64_t>();
            sub.t_id = tx.t_id;
            st.submissions_[sub.round].push_back(std::move(sub));
            break;
          }
          case ledger::TxKind::VerificationRecord: {
            auto j = nlohmann::json::parse(tx.payload.begin(), tx.payload.end());
            auto unlearn_id = digest_from_hex(j.at("unlearn_t_id").get<std::string>());
            UnlearnRecord rec;
            if (unlearn_id) rec.unlearn_t_id = *unlearn_id;
            rec.verification_t_id = tx.t_id;
            rec.base_version = next_version == 0 ? 0 : next_version - 1;
            st.unlearn_records_.push_back(rec);
            break;
          }
          default:
            break;
        }
      }
    }
    return st;
  }

 private:
  Digest commit_model_record(ledger::ChainState& chain, const std::string& submitter,
                             Bytes weights, std::uint64_t version, ledger::TxKind kind,
                             double now_s) {
    // The model payload is the serialized weight bytes themselves, so the
    // transaction's payload digest doubles as the model digest.
    Digest weights_digest = Sha256::digest(weights);
    Bytes payload = digest_only_payloads
                        ? Bytes(weights_digest.begin(), weights_digest.end())
                        : weights;
    auto submitted = chain.submit_transaction(kind, submitter, std::move(payload), now_s);
    Digest t_id = std::get<Digest>(submitted);
    (void)chain.seal_block();
    global_ = GlobalModelRecord{version, weights_digest, std::move(weights), t_id};
    return t_id;
  }

  std::optional<GlobalModelRecord> global_;
  std::map<std::uint64_t, std::vector<ParameterSubmission>> submissions_;
  std::vector<UnlearnRecord> unlearn_records_;
};

// Chaincode state reconstructed purely from an exported ledger: version
// counting plus the final model digest, with the hash chain re-verified from
// the export alone.
struct ReplaySummary {
  bool chain_ok = false;
  std::uint64_t model_versions = 0;  // uploads + aggregations
  std::string final_model_digest_hex;
  std::map<std::string, std::size_t> kind_counts;
};

inline ReplaySummary replay_from_jsonl(const std::string& jsonl) {
  ReplaySummary out;
  out.chain_ok = true;
  Digest prev{};
  std::uint64_t expect_index = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string::npos) end = jsonl.size();
    std::string line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    nlohmann::json jb = nlohmann::json::parse(line);

    std::vector<Digest> t_ids;
    for (const auto& jt : jb.at("transactions")) {
      auto t_id = digest_from_hex(jt.at("t_id").get<std::string>());
      if (!t_id) {
        out.chain_ok = false;
        continue;
      }
      t_ids.push_back(*t_id);
      std::string kind = jt.at("kind").get<std::string>();
      out.kind_counts[kind] += 1;
      if (kind == "ModelUpload" || kind == "AggregatedModel") {
        out.model_versions += 1;
        out.final_model_digest_hex = jt.at("payload_digest").get<std::string>();
      }
    }

    auto stated_prev = digest_from_hex(jb.at("prev_hash").get<std::string>());
    auto stated_hash = digest_from_hex(jb.at("block_hash").get<std::string>());
    std::uint64_t index = jb.at("index").get<std::uint64_t>();
    if (!stated_prev || !stated_hash || index != expect_index || *stated_prev != prev) {
      out.chain_ok = false;
    } else {
      CanonicalWriter w;
      w.u64(index).digest(*stated_prev).u64(t_ids.size());
      for (const auto& id : t_ids) w.digest(id);
      if (Sha256::digest(w.data()) != *stated_hash) out.chain_ok = false;
    }
    if (stated_hash) prev = *stated_hash;
    ++expect_index;
  }
  return out;
}

}  // namespace fedchain::chaincode
