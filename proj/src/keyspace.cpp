#include "prop/keyspace.hpp"

#include <algorithm>
#include <set>

#include "prop/error.hpp"

namespace prop {

Key::Key(std::vector<std::uint8_t> bits) : bits_(std::move(bits)), has_bits_(true) {
    if (bits_.empty())
        throw Error(ErrorKind::Config, "Key: zero-length bit vector");
    for (auto b : bits_)
        if (b > 1) throw Error(ErrorKind::Config, "Key: bits must be 0 or 1");
}

Key Key::random(int length, Rng& rng) {
    std::vector<std::uint8_t> bits(length);
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng.integer(2));
    return Key(std::move(bits));
}

const std::vector<std::uint8_t>& Key::bits() const {
    if (is_null())
        throw Error(ErrorKind::Logic, "Key: null key has no bits");
    return bits_;
}

Key Key::with_flipped(const std::vector<int>& positions) const {
    std::vector<std::uint8_t> b = bits();
    for (int p : positions) {
        if (p < 0 || p >= static_cast<int>(b.size()))
            throw Error(ErrorKind::Logic, "Key: flip position out of range");
        b[p] ^= 1;
    }
    return Key(std::move(b));
}

// Bits pack MSB-first into hex nibbles; trailing pad bits of the last nibble
// are zero.
std::string Key::to_hex() const {
    if (is_null()) return "null";
    int n = length();
    int digits = (n + 3) / 4;
    std::string out = std::to_string(n) + ":";
    static const char* hexd = "0123456789abcdef";
    for (int d = 0; d < digits; ++d) {
        int nib = 0;
        for (int j = 0; j < 4; ++j) {
            int idx = d * 4 + j;
            int bit = idx < n ? bits_[idx] : 0;
            nib = (nib << 1) | bit;
        }
        out.push_back(hexd[nib]);
    }
    return out;
}

Key Key::from_hex(const std::string& text) {
    if (text == "null") return Key::null();
    auto colon = text.find(':');
    if (colon == std::string::npos)
        throw Error(ErrorKind::Config, "Key: expected '<bits>:<hex>' or 'null', got '" + text + "'");
    int n = 0;
    try {
        n = std::stoi(text.substr(0, colon));
    } catch (...) {
        throw Error(ErrorKind::Config, "Key: bad bit length in '" + text + "'");
    }
    if (n <= 0) throw Error(ErrorKind::Config, "Key: bit length must be positive");
    std::string hex = text.substr(colon + 1);
    int digits = (n + 3) / 4;
    if (static_cast<int>(hex.size()) != digits)
        throw Error(ErrorKind::Config, "Key: expected " + std::to_string(digits) + " hex digits");
    std::vector<std::uint8_t> bits(n, 0);
    for (int d = 0; d < digits; ++d) {
        char c = hex[d];
        int nib;
        if (c >= '0' && c <= '9') nib = c - '0';
        else if (c >= 'a' && c <= 'f') nib = c - 'a' + 10;
        else throw Error(ErrorKind::Config, "Key: invalid hex digit");
        for (int j = 0; j < 4; ++j) {
            int idx = d * 4 + j;
            int bit = (nib >> (3 - j)) & 1;
            if (idx < n) bits[idx] = static_cast<std::uint8_t>(bit);
            else if (bit) throw Error(ErrorKind::Config, "Key: nonzero pad bits");
        }
    }
    return Key(std::move(bits));
}

// FNV-1a based bit derivation. A convenience for demos, not a security claim.
Key Key::from_passphrase(const std::string& passphrase, int length) {
    if (length <= 0) throw Error(ErrorKind::Config, "Key: length must be positive");
    std::vector<std::uint8_t> bits(length);
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint8_t byte) {
        h ^= byte;
        h *= 0x100000001b3ull;
    };
    for (char c : passphrase) mix(static_cast<std::uint8_t>(c));
    for (int i = 0; i < length; ++i) {
        mix(static_cast<std::uint8_t>(i & 0xff));
        mix(static_cast<std::uint8_t>((i >> 8) & 0xff));
        // Avalanche before taking a bit; raw FNV low bits are periodic.
        std::uint64_t z = h;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        z ^= z >> 31;
        bits[i] = static_cast<std::uint8_t>(z & 1);
    }
    return Key(std::move(bits));
}

bool Key::operator==(const Key& other) const {
    if (is_null() || other.is_null()) return is_null() && other.is_null();
    return bits_ == other.bits_;
}

bool Key::operator<(const Key& other) const {
    if (is_null() != other.is_null()) return is_null();
    return bits_ < other.bits_;
}

int hamming(const Key& a, const Key& b) {
    if (a.is_null() || b.is_null())
        throw Error(ErrorKind::Logic, "hamming: null key operand");
    if (a.length() != b.length())
        throw Error(ErrorKind::Logic, "hamming: key length mismatch");
    int d = 0;
    const auto& ba = a.bits();
    const auto& bb = b.bits();
    for (int i = 0; i < a.length(); ++i) d += ba[i] != bb[i];
    return d;
}

Vector key_to_features(const Key& k) {
    if (k.is_null())
        throw Error(ErrorKind::Logic, "key_to_features: null key has no feature encoding");
    Vector v(k.length());
    for (int i = 0; i < k.length(); ++i) v[i] = k.bits()[i] ? 1.0 : -1.0;
    return v;
}

Key key_from_features(const Vector& v) {
    std::vector<std::uint8_t> bits(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) bits[i] = v[i] > 0.0 ? 1 : 0;
    return Key(std::move(bits));
}

static bool in_set(const Key& k, const std::vector<Key>& keys) {
    return std::find(keys.begin(), keys.end(), k) != keys.end();
}

Key sample_at_distance(const Key& base, int d, Rng& rng) {
    if (d == 0) return base;
    if (d < 0 || d > base.length())
        throw Error(ErrorKind::Config, "sample_at_distance: bad distance");
    // Uniform d-subset of positions via partial Fisher-Yates.
    std::vector<int> pos(base.length());
    for (int i = 0; i < base.length(); ++i) pos[i] = i;
    for (int i = 0; i < d; ++i) {
        int j = i + static_cast<int>(rng.integer(pos.size() - i));
        std::swap(pos[i], pos[j]);
    }
    pos.resize(d);
    return base.with_flipped(pos);
}

std::vector<Key> sample_K1(const std::vector<Key>& user_keys, int epsilon, int count, Rng& rng) {
    if (epsilon < 1)
        throw Error(ErrorKind::Config, "sample_K1: epsilon must be >= 1");
    if (user_keys.empty())
        throw Error(ErrorKind::Config, "sample_K1: user key set is empty");
    for (const auto& k : user_keys)
        if (k.is_null()) throw Error(ErrorKind::Config, "sample_K1: null user key");
    std::vector<Key> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Key sample;
        int attempts = 0;
        do {
            if (++attempts > 1000)
                throw Error(ErrorKind::Numeric, "sample_K1: rejection sampling exhausted");
            const Key& anchor = user_keys[rng.integer(user_keys.size())];
            int flips = 1 + static_cast<int>(rng.integer(epsilon));
            flips = std::min(flips, anchor.length());
            sample = sample_at_distance(anchor, flips, rng);
        } while (in_set(sample, user_keys) || in_set(sample, out));
        out.push_back(sample);
    }
    return out;
}

std::vector<Key> sample_K2(const std::vector<Key>& avoid, int count, int key_len, Rng& rng) {
    if (count < 0)
        throw Error(ErrorKind::Config, "sample_K2: count must be >= 0");
    std::vector<Key> out;
    out.reserve(count + 1);
    for (int i = 0; i < count; ++i) {
        Key sample;
        int attempts = 0;
        do {
            if (++attempts > 1000)
                throw Error(ErrorKind::Numeric, "sample_K2: rejection sampling exhausted");
            sample = Key::random(key_len, rng);
        } while (in_set(sample, avoid) || in_set(sample, out));
        out.push_back(sample);
    }
    out.push_back(Key::null());
    return out;
}

void validate_key_batch(const KeyBatch& batch) {
    std::set<Key> seen;
    std::vector<Key> user_keys;
    for (const auto& [k, id] : batch.personalized) {
        (void)id;
        if (k.is_null())
            throw Error(ErrorKind::Logic, "key batch: null personalized key");
        if (!seen.insert(k).second)
            throw Error(ErrorKind::Logic, "key batch: duplicate key across fields");
        user_keys.push_back(k);
    }
    for (const auto& k : batch.neighbors_k1) {
        if (k.is_null())
            throw Error(ErrorKind::Logic, "key batch: null key in K1");
        if (!seen.insert(k).second)
            throw Error(ErrorKind::Logic, "key batch: duplicate key across fields");
        bool near = false;
        for (const auto& u : user_keys)
            if (hamming(k, u) >= 1) { near = true; break; }
        if (!near)
            throw Error(ErrorKind::Logic, "key batch: K1 member coincides with a user key");
    }
    int nulls = 0;
    for (const auto& k : batch.random_k2) {
        if (k.is_null()) {
            ++nulls;
            continue;
        }
        if (!seen.insert(k).second)
            throw Error(ErrorKind::Logic, "key batch: duplicate key across fields");
    }
    if (nulls != 1)
        throw Error(ErrorKind::Logic, "key batch: K2 must contain the null key exactly once");
}

} // namespace prop
