#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "fedchain/bytes.hpp"
#include "fedchain/ed25519.hpp"
#include "fedchain/errors.hpp"
#include "fedchain/ledger.hpp"
#include "fedchain/rng.hpp"
#include "fedchain/sha2.hpp"

// Client/agent identity: seeded Ed25519 key pairs, self-signed bearer tokens
// validated against the registered public key, and on-ledger registration.
// All expiry logic runs on the simulated clock.

namespace fedchain::identity {

enum class Role { Client, Agent };

inline std::string_view to_string(Role r) { return r == Role::Client ? "Client" : "Agent"; }

inline std::optional<Role> role_from_string(std::string_view s) {
  if (s == "Client") return Role::Client;
  if (s == "Agent") return Role::Agent;
  return std::nullopt;
}

struct KeyPair {
  ed25519::PublicKey p_k{};
  ed25519::SecretSeed s_k{};
};

// Deterministic under a fixed seed: the secret seed is the first 32 bytes of
// the splitmix64 stream.
inline KeyPair key_generator(std::uint64_t rng_seed) {
  KeyPair kp;
  std::uint64_t s = rng_seed;
  for (int i = 0; i < 4; ++i) {
    std::uint64_t w = splitmix64(s);
    for (int j = 0; j < 8; ++j) kp.s_k[8 * i + j] = static_cast<std::uint8_t>(w >> (8 * j));
  }
  kp.p_k = ed25519::public_from_seed(kp.s_k);
  return kp;
}

struct AuthToken {
  nlohmann::json header;  // alg, typ
  nlohmann::json claims;  // exp, iat, role, sub
  ed25519::Signature signature{};

  // Sorted keys, no whitespace: the signed bytes are reproducible from the
  // field maps alone.
  std::string signing_input() const {
    std::string h = header.dump();
    std::string c = claims.dump();
    return base64url_encode(to_bytes(h)) + "." + base64url_encode(to_bytes(c));
  }

  std::string encode() const {
    return signing_input() + "." +
           base64url_encode(std::span<const std::uint8_t>(signature.data(), signature.size()));
  }

  std::string subject() const { return claims.value("sub", std::string{}); }
  double issued_at() const { return claims.value("iat", 0.0); }
  double expires_at() const { return claims.value("exp", 0.0); }
  std::optional<Role> role() const { return role_from_string(claims.value("role", std::string{})); }

  static std::optional<AuthToken> decode(std::string_view wire) {
    auto dot1 = wire.find('.');
    if (dot1 == std::string_view::npos) return std::nullopt;
    auto dot2 = wire.find('.', dot1 + 1);
    if (dot2 == std::string_view::npos) return std::nullopt;
    auto hb = base64url_decode(wire.substr(0, dot1));
    auto cb = base64url_decode(wire.substr(dot1 + 1, dot2 - dot1 - 1));
    auto sb = base64url_decode(wire.substr(dot2 + 1));
    if (!hb || !cb || !sb || sb->size() != 64) return std::nullopt;
    AuthToken t;
    t.header = nlohmann::json::parse(hb->begin(), hb->end(), nullptr, false);
    t.claims = nlohmann::json::parse(cb->begin(), cb->end(), nullptr, false);
    if (t.header.is_discarded() || t.claims.is_discarded()) return std::nullopt;
    std::copy(sb->begin(), sb->end(), t.signature.begin());
    return t;
  }
};

inline AuthToken generate_token(const KeyPair& pair, std::string_view subject, Role role,
                                double issued_at_s, double ttl_s) {
  if (ttl_s <= 0.0) throw ModuleError("InvalidTTL", "token ttl must be positive");
  AuthToken t;
  t.header = {{"alg", "EdDSA"}, {"typ", "JWT"}};
  t.claims = {{"exp", issued_at_s + ttl_s},
              {"iat", issued_at_s},
              {"role", std::string(to_string(role))},
              {"sub", std::string(subject)}};
  std::string input = t.signing_input();
  t.signature = ed25519::sign(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(input.data()),
                                    input.size()),
      pair.s_k, pair.p_k);
  return t;
}

struct PoolEntry {
  ed25519::PublicKey p_k{};
  Role role = Role::Client;
  Digest registration_t_id{};
};

struct TokenCheck {
  enum class Status { Ok, Expired, BadSignature, UnknownSubject };
  Status status = Status::UnknownSubject;
  std::string subject;
  Role role = Role::Client;

  bool ok() const { return status == Status::Ok; }
};

class UserPool {
 public:
  explicit UserPool(std::uint64_t master_seed = 0, double default_ttl_s = 3600.0)
      : master_seed_(master_seed), default_ttl_s_(default_ttl_s) {}

  bool contains(std::string_view id) const { return entries_.find(std::string(id)) != entries_.end(); }
  const PoolEntry* find(std::string_view id) const {
    auto it = entries_.find(std::string(id));
    return it == entries_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, PoolEntry>& entries() const { return entries_; }
  double default_ttl_s() const { return default_ttl_s_; }

  // Per-identity key seed, independent of registration order.
  std::uint64_t key_seed_for(std::string_view id) const {
    CanonicalWriter w;
    w.u64(master_seed_).str(id);
    Digest d = Sha256::digest(w.data());
    std::uint64_t s = 0;
    for (int i = 0; i < 8; ++i) s |= static_cast<std::uint64_t>(d[i]) << (8 * i);
    return s;
  }

  void insert(const std::string& id, PoolEntry entry) { entries_.emplace(id, entry); }

 private:
  std::map<std::string, PoolEntry> entries_;
  std::uint64_t master_seed_;
  double default_ttl_s_;
};

// Ok only if the subject is registered, the signature verifies under the
// pooled key, the role claim matches the pooled role, and
// issued-at <= now < expires-at.
inline TokenCheck verify_token(const UserPool& pool, const AuthToken& token, double now_s) {
  TokenCheck result;
  result.subject = token.subject();
  const PoolEntry* entry = pool.find(result.subject);
  if (entry == nullptr) {
    result.status = TokenCheck::Status::UnknownSubject;
    return result;
  }
  std::string input = token.signing_input();
  bool sig_ok = ed25519::verify(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(input.data()),
                                    input.size()),
      token.signature, entry->p_k);
  auto claimed_role = token.role();
  if (!sig_ok || !claimed_role || *claimed_role != entry->role) {
    result.status = TokenCheck::Status::BadSignature;
    return result;
  }
  if (!(token.issued_at() <= now_s && now_s < token.expires_at())) {
    result.status = TokenCheck::Status::Expired;
    return result;
  }
  result.status = TokenCheck::Status::Ok;
  result.role = entry->role;
  return result;
}

struct RegisterResult {
  bool already_exists = false;
  AuthToken token;
  KeyPair pair;
  Digest t_id{};
};

// One atomic step: key pair, token, pool entry, and a sealed Register
// transaction carrying (c_id, p_k, role).
inline RegisterResult register_client(UserPool& pool, ledger::ChainState& chain,
                                      std::string_view c_id, Role role, double now_s) {
  RegisterResult out;
  if (pool.contains(c_id)) {
    out.already_exists = true;
    return out;
  }
  out.pair = key_generator(pool.key_seed_for(c_id));
  out.token = generate_token(out.pair, c_id, role, now_s, pool.default_ttl_s());

  nlohmann::json payload = {{"c_id", std::string(c_id)},
                            {"p_k", to_hex(std::span<const std::uint8_t>(out.pair.p_k.data(),
                                                                         out.pair.p_k.size()))},
                            {"role", std::string(to_string(role))}};
  auto submitted = chain.submit_transaction(ledger::TxKind::Register, c_id,
                                            to_bytes(payload.dump()), now_s);
  if (!ledger::ok(submitted))
    throw ModuleError(std::string(ledger::to_string(ledger::error_of(submitted))),
                      "registration transaction rejected for " + std::string(c_id));
  out.t_id = std::get<Digest>(submitted);
  (void)chain.seal_block();

  PoolEntry entry;
  entry.p_k = out.pair.p_k;
  entry.role = role;
  entry.registration_t_id = out.t_id;
  pool.insert(std::string(c_id), entry);
  return out;
}

}  // namespace fedchain::identity
