#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pointbox/anchors.hpp"
#include "pointbox/geometry.hpp"

namespace pointbox {

struct SizeRecord {
    int epoch = 0;
    double w = 0;
    double h = 0;
};

/// Surrogate box for one annotated head. The center is pinned to the
/// annotation; only the extent is ever revised.
struct PseudoGT {
    Pointd point;
    Boxd box;
    /// Nearest-neighbour distance; accepted updates stay strictly below it.
    double cap = 0;
    bool active = true;
    std::vector<SizeRecord> history;
};

struct Candidate {
    Boxd box;
    double score = 0;
};

/// Square of side d(g, NN_g) at each point, snapped to the anchor spec closest
/// in log area plus log aspect.
std::vector<PseudoGT> init_pseudo_gt(std::span<const Pointd> points, std::span<const double> nn_dists,
                                     std::span<const AnchorSpec> specs);

/// One end-of-epoch revision. Takes the best-scored candidate whose shorter
/// side is below the cap; an empty candidate list deactivates the entry.
PseudoGT update_pseudo_gt(PseudoGT pgt, std::span<const Candidate> candidates, int epoch);

/// Per-scene pseudo boxes, keyed by scene id.
class PseudoStore {
public:
    void insert(const std::string& scene_id, std::vector<PseudoGT> entries);
    const std::vector<PseudoGT>& at(const std::string& scene_id) const;
    std::vector<PseudoGT>& at(const std::string& scene_id);
    bool contains(const std::string& scene_id) const { return entries_.contains(scene_id); }
    const std::map<std::string, std::vector<PseudoGT>>& all() const { return entries_; }

    void reactivate_all();

    friend bool operator==(const PseudoStore&, const PseudoStore&);

private:
    std::map<std::string, std::vector<PseudoGT>> entries_;
};

/// Diagnostic dump: per scene, per head, the (epoch, w, h) trail.
nlohmann::json history_json(const PseudoStore& store);

} // namespace pointbox
