#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dashfusion/rng.hpp"
#include "dashfusion/tensor.hpp"

namespace dashfusion {

template <std::floating_point T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
};

/// Named parameters in registration order. Names are unique.
template <std::floating_point T>
class ParameterStore {
public:
    const Tensor<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
        if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
        index_.emplace(name, items_.size());
        items_.push_back({name, value.detach(), trainable});
        return items_.back().value;
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    const Parameter<T>& at(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return items_[it->second];
    }
    const Tensor<T>& get(const std::string& name) const { return at(name).value; }

    void set(const std::string& name, Tensor<T> value) {
        auto& p = items_[index_of(name)];
        if (p.value.shape() != value.shape()) {
            throw DimensionError("parameter '" + name + "' is " + to_string(p.value.shape()) + ", got " +
                                 to_string(value.shape()));
        }
        p.value = value.detach();
    }

    void set_trainable(const std::string& name, bool trainable) { items_[index_of(name)].trainable = trainable; }

    std::size_t size() const noexcept { return items_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.value.size();
        return n;
    }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    template <std::floating_point U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& p : items_) out.add(p.name, p.value.template cast<U>(), p.trainable);
        return out;
    }

private:
    std::size_t index_of(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<Parameter<T>> items_;
    std::map<std::string, std::size_t> index_;
};

/// Name lookup for one forward pass. With a tape, trainable parameters are
/// registered as tape variables on first use; otherwise they are constants.
template <std::floating_point T>
class ParamView {
public:
    explicit ParamView(const ParameterStore<T>& store, Tape<T>* tape = nullptr) : store_(&store), tape_(tape) {}

    Tensor<T> operator()(const std::string& name) const {
        const auto& p = store_->at(name);
        if (!tape_ || !p.trainable) return p.value;
        auto it = bound_.find(name);
        if (it == bound_.end()) it = bound_.emplace(name, tape_->variable(name, p.value)).first;
        return it->second;
    }

    Tape<T>* tape() const noexcept { return tape_; }
    const ParameterStore<T>& store() const noexcept { return *store_; }

private:
    const ParameterStore<T>* store_;
    Tape<T>* tape_;
    mutable std::map<std::string, Tensor<T>> bound_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <std::floating_point T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> v(fan_in * fan_out);
    for (auto& x : v) x = static_cast<T>(uniform(rng, -bound, bound));
    return Tensor<T>::matrix(fan_in, fan_out, std::move(v));
}

struct ParamCoordinate {
    std::string name;
    std::size_t index = 0;
};

/// `count` distinct coordinates drawn uniformly over every trainable scalar.
template <std::floating_point T>
std::vector<ParamCoordinate> random_coordinates(const ParameterStore<T>& store, std::size_t count, Rng& rng) {
    std::vector<std::pair<const Parameter<T>*, std::size_t>> offsets;
    std::size_t total = 0;
    for (const auto& p : store) {
        if (!p.trainable) continue;
        offsets.emplace_back(&p, total);
        total += p.value.size();
    }
    count = std::min(count, total);
    std::vector<std::size_t> picked;
    while (picked.size() < count) {
        const auto flat = static_cast<std::size_t>(uniform_index(rng, total));
        if (std::find(picked.begin(), picked.end(), flat) == picked.end()) picked.push_back(flat);
    }
    std::vector<ParamCoordinate> out;
    for (auto flat : picked) {
        auto it = std::upper_bound(offsets.begin(), offsets.end(), flat,
                                   [](std::size_t f, const auto& o) { return f < o.second; });
        --it;
        out.push_back({it->first->name, flat - it->second});
    }
    return out;
}

/// Autodiff vs central differences for selected parameter coordinates of a
/// scalar loss. `loss` must build its graph through the supplied view.
template <std::floating_point T>
GradCheckReport grad_check_params(const ParameterStore<T>& store,
                                  const std::function<Tensor<T>(const ParamView<T>&)>& loss,
                                  const std::vector<ParamCoordinate>& coords, T h = T(1e-5)) {
    Tape<T> tape;
    const ParamView<T> view(store, &tape);
    const auto grads = tape.backward(loss(view));
    GradCheckReport report;
    for (const auto& c : coords) {
        const auto it = grads.find(c.name);
        const double ad = it == grads.end() ? 0.0 : static_cast<double>(it->second[c.index]);
        auto eval = [&](T delta) {
            ParameterStore<T> shifted = store;
            std::vector<T> v(store.get(c.name).values().begin(), store.get(c.name).values().end());
            v[c.index] += delta;
            shifted.set(c.name, Tensor<T>(store.get(c.name).shape(), std::move(v)));
            return loss(ParamView<T>(shifted)).item();
        };
        const double fd = static_cast<double>((eval(h) - eval(-h)) / (T(2) * h));
        report.add({c.name, c.index, ad, fd, 0});
    }
    return report;
}

}  // namespace dashfusion
