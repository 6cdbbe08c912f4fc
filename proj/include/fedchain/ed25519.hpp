#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>

#include "fedchain/bytes.hpp"
#include "fedchain/sha2.hpp"

// Compact Ed25519 (RFC 8032) over the 25519 field with 16x16-bit limbs.
// Not constant-time hardened; this backs a deterministic protocol simulation,
// not a network-facing service.

namespace fedchain::ed25519 {

using PublicKey = std::array<std::uint8_t, 32>;
using SecretSeed = std::array<std::uint8_t, 32>;
using Signature = std::array<std::uint8_t, 64>;

namespace detail {

using Fe = std::array<std::int64_t, 16>;  // radix-2^16 field element mod 2^255-19

inline constexpr Fe kZero{};
inline constexpr Fe kOne{1};
// Edwards curve constants: d, 2d, base point (x, y), sqrt(-1).
inline constexpr Fe kD{0x78a3, 0x1359, 0x4dca, 0x75eb, 0xd8ab, 0x4141, 0x0a4d, 0x0070,
                       0xe898, 0x7779, 0x4079, 0x8cc7, 0xfe73, 0x2b6f, 0x6cee, 0x5203};
inline constexpr Fe kD2{0xf159, 0x26b2, 0x9b94, 0xebd6, 0xb156, 0x8283, 0x149a, 0x00e0,
                        0xd130, 0xeef3, 0x80f2, 0x198e, 0xfce7, 0x56df, 0xd9dc, 0x2406};
inline constexpr Fe kBaseX{0xd51a, 0x8f25, 0x2d60, 0xc956, 0xa7b2, 0x9525, 0xc760, 0x692c,
                           0xdc5c, 0xfdd6, 0xe231, 0xc0a4, 0x53fe, 0xcd6e, 0x36d3, 0x2169};
inline constexpr Fe kBaseY{0x6658, 0x6666, 0x6666, 0x6666, 0x6666, 0x6666, 0x6666, 0x6666,
                           0x6666, 0x6666, 0x6666, 0x6666, 0x6666, 0x6666, 0x6666, 0x6666};
inline constexpr Fe kSqrtM1{0xa0b0, 0x4a0e, 0x1b27, 0xc4ee, 0xe478, 0xad2f, 0x1806, 0x2f43,
                            0xd7a7, 0x3dfb, 0x0099, 0x2b4d, 0xdf0b, 0x4fc1, 0x2480, 0x2b83};

inline void carry(Fe& o) {
  for (int i = 0; i < 16; ++i) {
    o[i] += (std::int64_t{1} << 16);
    std::int64_t c = o[i] >> 16;
    o[(i + 1) * (i < 15)] += c - 1 + 37 * (c - 1) * (i == 15);
    o[i] -= c << 16;
  }
}

inline void cselect(Fe& p, Fe& q, int b) {
  std::int64_t mask = ~(static_cast<std::int64_t>(b) - 1);
  for (int i = 0; i < 16; ++i) {
    std::int64_t t = mask & (p[i] ^ q[i]);
    p[i] ^= t;
    q[i] ^= t;
  }
}

inline void pack(std::uint8_t out[32], const Fe& n) {
  Fe t = n;
  carry(t);
  carry(t);
  carry(t);
  for (int pass = 0; pass < 2; ++pass) {
    Fe m{};
    m[0] = t[0] - 0xffed;
    for (int i = 1; i < 15; ++i) {
      m[i] = t[i] - 0xffff - ((m[i - 1] >> 16) & 1);
      m[i - 1] &= 0xffff;
    }
    m[15] = t[15] - 0x7fff - ((m[14] >> 16) & 1);
    int b = (m[15] >> 16) & 1;
    m[14] &= 0xffff;
    cselect(t, m, 1 - b);
  }
  for (int i = 0; i < 16; ++i) {
    out[2 * i] = static_cast<std::uint8_t>(t[i] & 0xff);
    out[2 * i + 1] = static_cast<std::uint8_t>(t[i] >> 8);
  }
}

inline void unpack(Fe& o, const std::uint8_t in[32]) {
  for (int i = 0; i < 16; ++i)
    o[i] = in[2 * i] + (static_cast<std::int64_t>(in[2 * i + 1]) << 8);
  o[15] &= 0x7fff;
}

inline bool equal(const Fe& a, const Fe& b) {
  std::uint8_t c[32], d[32];
  pack(c, a);
  pack(d, b);
  return std::memcmp(c, d, 32) == 0;
}

inline int parity(const Fe& a) {
  std::uint8_t d[32];
  pack(d, a);
  return d[0] & 1;
}

inline void add(Fe& o, const Fe& a, const Fe& b) {
  for (int i = 0; i < 16; ++i) o[i] = a[i] + b[i];
}

inline void sub(Fe& o, const Fe& a, const Fe& b) {
  for (int i = 0; i < 16; ++i) o[i] = a[i] - b[i];
}

inline void mul(Fe& o, const Fe& a, const Fe& b) {
  std::int64_t t[31] = {0};
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) t[i + j] += a[i] * b[j];
  for (int i = 0; i < 15; ++i) t[i] += 38 * t[i + 16];
  for (int i = 0; i < 16; ++i) o[i] = t[i];
  carry(o);
  carry(o);
}

inline void square(Fe& o, const Fe& a) { mul(o, a, a); }

inline void invert(Fe& o, const Fe& a) {
  Fe c = a;
  for (int i = 253; i >= 0; --i) {
    square(c, c);
    if (i != 2 && i != 4) mul(c, c, a);
  }
  o = c;
}

inline void pow2523(Fe& o, const Fe& a) {  // a^((p-5)/8)
  Fe c = a;
  for (int i = 250; i >= 0; --i) {
    square(c, c);
    if (i != 1) mul(c, c, a);
  }
  o = c;
}

// Extended homogeneous point (X:Y:Z:T), XY = ZT.
struct Point {
  Fe x, y, z, t;
};

inline void point_add(Point& p, const Point& q) {
  Fe a, b, c, d, e, f, g, h, s;
  sub(a, p.y, p.x);
  sub(s, q.y, q.x);
  mul(a, a, s);
  add(b, p.x, p.y);
  add(s, q.x, q.y);
  mul(b, b, s);
  mul(c, p.t, q.t);
  mul(c, c, kD2);
  mul(d, p.z, q.z);
  add(d, d, d);
  sub(e, b, a);
  sub(f, d, c);
  add(g, d, c);
  add(h, b, a);
  mul(p.x, e, f);
  mul(p.y, h, g);
  mul(p.z, g, f);
  mul(p.t, e, h);
}

inline void point_cswap(Point& p, Point& q, int b) {
  cselect(p.x, q.x, b);
  cselect(p.y, q.y, b);
  cselect(p.z, q.z, b);
  cselect(p.t, q.t, b);
}

inline void point_pack(std::uint8_t out[32], const Point& p) {
  Fe zi, tx, ty;
  invert(zi, p.z);
  mul(tx, p.x, zi);
  mul(ty, p.y, zi);
  pack(out, ty);
  out[31] ^= static_cast<std::uint8_t>(parity(tx) << 7);
}

inline void scalar_mult(Point& p, Point q, const std::uint8_t scalar[32]) {
  p.x = kZero;
  p.y = kOne;
  p.z = kOne;
  p.t = kZero;
  for (int i = 255; i >= 0; --i) {
    int b = (scalar[i / 8] >> (i & 7)) & 1;
    point_cswap(p, q, b);
    point_add(q, p);
    point_add(p, p);
    point_cswap(p, q, b);
  }
}

inline void scalar_base(Point& p, const std::uint8_t scalar[32]) {
  Point q;
  q.x = kBaseX;
  q.y = kBaseY;
  q.z = kOne;
  mul(q.t, kBaseX, kBaseY);
  scalar_mult(p, q, scalar);
}

// Group order L, little-endian bytes.
inline constexpr std::uint64_t kOrder[32] = {
    0xed, 0xd3, 0xf5, 0x5c, 0x1a, 0x63, 0x12, 0x58, 0xd6, 0x9c, 0xf7,
    0xa2, 0xde, 0xf9, 0xde, 0x14, 0,    0,    0,    0,    0,    0,
    0,    0,    0,    0,    0,    0,    0,    0,    0,    0x10};

inline void mod_order(std::uint8_t r[32], std::int64_t x[64]) {
  for (int i = 63; i >= 32; --i) {
    std::int64_t c = 0;
    int j;
    for (j = i - 32; j < i - 12; ++j) {
      x[j] += c - 16 * x[i] * static_cast<std::int64_t>(kOrder[j - (i - 32)]);
      c = (x[j] + 128) >> 8;
      x[j] -= c << 8;
    }
    x[j] += c;
    x[i] = 0;
  }
  std::int64_t c = 0;
  for (int j = 0; j < 32; ++j) {
    x[j] += c - (x[31] >> 4) * static_cast<std::int64_t>(kOrder[j]);
    c = x[j] >> 8;
    x[j] &= 255;
  }
  for (int j = 0; j < 32; ++j) x[j] -= c * static_cast<std::int64_t>(kOrder[j]);
  for (int i = 0; i < 32; ++i) {
    x[i + 1] += x[i] >> 8;
    r[i] = static_cast<std::uint8_t>(x[i] & 255);
  }
}

inline void reduce64(std::uint8_t r[64]) {
  std::int64_t x[64];
  for (int i = 0; i < 64; ++i) x[i] = r[i];
  for (int i = 0; i < 64; ++i) r[i] = 0;
  mod_order(r, x);
}

inline bool point_unpack_neg(Point& r, const std::uint8_t p[32]) {
  Fe t, chk, num, den, den2, den4, den6;
  r.z = kOne;
  unpack(r.y, p);
  square(num, r.y);
  mul(den, num, kD);
  sub(num, num, r.z);
  add(den, r.z, den);

  square(den2, den);
  square(den4, den2);
  mul(den6, den4, den2);
  mul(t, den6, num);
  mul(t, t, den);

  pow2523(t, t);
  mul(t, t, num);
  mul(t, t, den);
  mul(t, t, den);
  mul(r.x, t, den);

  square(chk, r.x);
  mul(chk, chk, den);
  if (!equal(chk, num)) mul(r.x, r.x, kSqrtM1);

  square(chk, r.x);
  mul(chk, chk, den);
  if (!equal(chk, num)) return false;

  if (parity(r.x) == (p[31] >> 7)) sub(r.x, kZero, r.x);

  mul(r.t, r.x, r.y);
  return true;
}

inline void clamp(std::uint8_t d[64]) {
  d[0] &= 248;
  d[31] &= 127;
  d[31] |= 64;
}

}  // namespace detail

inline PublicKey public_from_seed(const SecretSeed& seed) {
  Sha512 h;
  h.update(seed.data(), seed.size());
  auto d = h.finish();
  detail::clamp(d.data());
  detail::Point p;
  detail::scalar_base(p, d.data());
  PublicKey pk;
  detail::point_pack(pk.data(), p);
  return pk;
}

inline Signature sign(std::span<const std::uint8_t> msg, const SecretSeed& seed,
                      const PublicKey& pk) {
  Sha512 h;
  h.update(seed.data(), seed.size());
  auto d = h.finish();
  detail::clamp(d.data());

  // r = H(prefix || M) mod L
  Sha512 hr;
  hr.update(d.data() + 32, 32);
  hr.update(msg.data(), msg.size());
  auto r = hr.finish();
  detail::reduce64(r.data());

  detail::Point p;
  detail::scalar_base(p, r.data());
  Signature sig;
  detail::point_pack(sig.data(), p);

  // k = H(R || A || M) mod L
  Sha512 hk;
  hk.update(sig.data(), 32);
  hk.update(pk.data(), 32);
  hk.update(msg.data(), msg.size());
  auto k = hk.finish();
  detail::reduce64(k.data());

  // S = r + k*s mod L
  std::int64_t x[64] = {0};
  for (int i = 0; i < 32; ++i) x[i] = r[i];
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) x[i + j] += static_cast<std::int64_t>(k[i]) * d[j];
  detail::mod_order(sig.data() + 32, x);
  return sig;
}

inline bool verify(std::span<const std::uint8_t> msg, const Signature& sig,
                   const PublicKey& pk) {
  detail::Point q;
  if (!detail::point_unpack_neg(q, pk.data())) return false;

  Sha512 hk;
  hk.update(sig.data(), 32);
  hk.update(pk.data(), 32);
  hk.update(msg.data(), msg.size());
  auto k = hk.finish();
  detail::reduce64(k.data());

  detail::Point p;
  detail::scalar_mult(p, q, k.data());  // k * (-A)

  detail::Point sb;
  detail::scalar_base(sb, sig.data() + 32);  // S * B
  detail::point_add(p, sb);

  std::uint8_t packed[32];
  detail::point_pack(packed, p);
  return std::memcmp(packed, sig.data(), 32) == 0;
}

}  // namespace fedchain::ed25519
