#include "pointbox/pseudogt.hpp"

#include <cmath>

#include "pointbox/error.hpp"

namespace pointbox {

std::vector<PseudoGT> init_pseudo_gt(std::span<const Pointd> points, std::span<const double> nn_dists,
                                     std::span<const AnchorSpec> specs) {
    if (points.size() != nn_dists.size() || points.size() < 2) {
        throw FewerThanTwoPoints("pseudo GT init needs matching points/distances, at least two");
    }
    if (specs.empty()) {
        throw InsufficientData("pseudo GT init needs anchor specs");
    }
    std::vector<PseudoGT> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double side = nn_dists[i];
        const double square_area = side * side;
        const AnchorSpec* best = nullptr;
        double best_cost = 0;
        for (const auto& s : specs) {
            const double cost = std::abs(std::log(s.scale * s.scale / square_area)) + std::abs(std::log(s.aspect));
            if (best == nullptr || cost < best_cost) {
                best = &s;
                best_cost = cost;
            }
        }
        PseudoGT pgt;
        pgt.point = points[i];
        pgt.box = {points[i].x, points[i].y, best->width(), best->height()};
        pgt.cap = side;
        pgt.history.push_back({0, pgt.box.w, pgt.box.h});
        out.push_back(std::move(pgt));
    }
    return out;
}

PseudoGT update_pseudo_gt(PseudoGT pgt, std::span<const Candidate> candidates, int epoch) {
    if (candidates.empty()) {
        pgt.active = false;
        return pgt;
    }
    pgt.active = true;
    const Candidate* best = nullptr;
    for (const auto& c : candidates) {
        if (std::min(c.box.w, c.box.h) < pgt.cap && (best == nullptr || c.score > best->score)) {
            best = &c;
        }
    }
    if (best != nullptr) {
        pgt.box = {pgt.point.x, pgt.point.y, best->box.w, best->box.h};
        pgt.history.push_back({epoch, pgt.box.w, pgt.box.h});
    }
    return pgt;
}

void PseudoStore::insert(const std::string& scene_id, std::vector<PseudoGT> entries) {
    entries_[scene_id] = std::move(entries);
}

const std::vector<PseudoGT>& PseudoStore::at(const std::string& scene_id) const {
    return entries_.at(scene_id);
}

std::vector<PseudoGT>& PseudoStore::at(const std::string& scene_id) {
    return entries_.at(scene_id);
}

void PseudoStore::reactivate_all() {
    for (auto& [id, entries] : entries_) {
        for (auto& e : entries) {
            e.active = true;
        }
    }
}

bool operator==(const PseudoStore& a, const PseudoStore& b) {
    if (a.entries_.size() != b.entries_.size()) {
        return false;
    }
    for (const auto& [id, entries] : a.entries_) {
        auto it = b.entries_.find(id);
        if (it == b.entries_.end() || it->second.size() != entries.size()) {
            return false;
        }
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& x = entries[i];
            const auto& y = it->second[i];
            if (!(x.point == y.point) || !(x.box == y.box) || x.cap != y.cap || x.active != y.active) {
                return false;
            }
        }
    }
    return true;
}

nlohmann::json history_json(const PseudoStore& store) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [id, entries] : store.all()) {
        auto& heads = j[id] = nlohmann::json::array();
        for (const auto& e : entries) {
            nlohmann::json trail = nlohmann::json::array();
            for (const auto& r : e.history) {
                trail.push_back({r.epoch, r.w, r.h});
            }
            heads.push_back({{"point", {e.point.x, e.point.y}}, {"cap", e.cap}, {"history", trail}});
        }
    }
    return j;
}

} // namespace pointbox
