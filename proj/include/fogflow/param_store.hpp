#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fogflow {

// Named flat parameter vectors with paired gradient slots. All trainable
// state in the repo lives in stores; optimizer and EMA updates mutate them
// single-threaded.
class ParamStore {
public:
    struct Entry {
        std::string name;
        std::vector<double> value;
        std::vector<double> grad;  // same length as value
    };

    // Adds a named vector (zero-initialized gradients). Throws on duplicates.
    Entry& add(const std::string& name, std::vector<double> value);

    bool has(const std::string& name) const;
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;

    std::vector<double>& value(const std::string& name) { return entry(name).value; }
    const std::vector<double>& value(const std::string& name) const { return entry(name).value; }
    std::vector<double>& grad(const std::string& name) { return entry(name).grad; }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    void zero_grads();
    std::size_t total_size() const;
    bool all_finite() const;

    // Order-sensitive FNV-1a hash over parameter bytes; used by tests to
    // assert that a store was not touched.
    std::uint64_t value_hash() const;

    // Concatenated copy of all values in entry order, and its inverse.
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);

private:
    std::vector<Entry> entries_;
};

}  // namespace fogflow
