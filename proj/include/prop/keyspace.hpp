#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prop/linalg.hpp"
#include "prop/rng.hpp"

namespace prop {

// A user key: either the null element or a fixed-length bit vector.
class Key {
public:
    Key() = default; // null
    explicit Key(std::vector<std::uint8_t> bits);

    static Key null() { return Key(); }
    static Key random(int length, Rng& rng);
    static Key from_hex(const std::string& text);
    static Key from_passphrase(const std::string& passphrase, int length);

    bool is_null() const { return bits_.empty() && !has_bits_; }
    int length() const { return static_cast<int>(bits_.size()); }
    const std::vector<std::uint8_t>& bits() const;

    Key with_flipped(const std::vector<int>& positions) const;

    std::string to_hex() const; // "N:hexdigits", or "null"
    bool operator==(const Key& other) const;
    bool operator!=(const Key& other) const { return !(*this == other); }
    bool operator<(const Key& other) const; // for ordered containers

private:
    std::vector<std::uint8_t> bits_;
    bool has_bits_ = false;
};

int hamming(const Key& a, const Key& b);

// ±1 encoding of the key bits for encoder input.
Vector key_to_features(const Key& k);
Key key_from_features(const Vector& v);

// K1 of the inductive loss: keys within Hamming distance [1, epsilon] of some
// user key, excluding the user keys themselves.
std::vector<Key> sample_K1(const std::vector<Key>& user_keys, int epsilon, int count, Rng& rng);

// K2: `count` uniform keys excluding everything in `avoid` (typically the
// user keys plus the current K1), plus the null key once.
std::vector<Key> sample_K2(const std::vector<Key>& avoid, int count, int key_len, Rng& rng);

// One key at exactly Hamming distance d from `base`.
Key sample_at_distance(const Key& base, int d, Rng& rng);

struct KeyBatch {
    std::vector<std::pair<Key, int>> personalized; // (key, objective id)
    std::vector<Key> neighbors_k1;
    std::vector<Key> random_k2; // includes Null exactly once
};

// Throws on any violation of the disjointness invariants.
void validate_key_batch(const KeyBatch& batch);

} // namespace prop
