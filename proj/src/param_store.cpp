#include "fogflow/param_store.hpp"

#include <cmath>
#include <cstring>

#include "fogflow/errors.hpp"

namespace fogflow {

ParamStore::Entry& ParamStore::add(const std::string& name, std::vector<double> value) {
    if (has(name)) throw ValidationError("ParamStore: duplicate entry '" + name + "'");
    Entry e;
    e.name = name;
    e.grad.assign(value.size(), 0.0);
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    return entries_.back();
}

bool ParamStore::has(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    for (auto& e : entries_)
        if (e.name == name) return e;
    throw ValidationError("ParamStore: no entry '" + name + "'");
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw ValidationError("ParamStore: no entry '" + name + "'");
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

bool ParamStore::all_finite() const {
    for (const auto& e : entries_)
        for (double v : e.value)
            if (!std::isfinite(v)) return false;
    return true;
}

std::uint64_t ParamStore::value_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& e : entries_) {
        mix(e.name.data(), e.name.size());
        mix(e.value.data(), e.value.size() * sizeof(double));
    }
    return h;
}

std::vector<double> ParamStore::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_size());
    for (const auto& e : entries_) flat.insert(flat.end(), e.value.begin(), e.value.end());
    return flat;
}

void ParamStore::unflatten(const std::vector<double>& flat) {
    if (flat.size() != total_size()) throw ValidationError("ParamStore: unflatten size mismatch");
    std::size_t off = 0;
    for (auto& e : entries_) {
        std::copy(flat.begin() + off, flat.begin() + off + e.value.size(), e.value.begin());
        off += e.value.size();
    }
}

}  // namespace fogflow
