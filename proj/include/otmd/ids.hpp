#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>

namespace otmd {

/// Integer identifier tagged with the kind of object it names, so that a link
/// id cannot be passed where a node id is expected.
template <class Tag>
struct Id {
    std::int64_t value = -1;

    constexpr Id() = default;
    constexpr explicit Id(std::int64_t v) : value(v) {}

    friend constexpr auto operator<=>(const Id&, const Id&) = default;
    friend std::ostream& operator<<(std::ostream& os, const Id& id) { return os << id.value; }
};

using NodeId = Id<struct NodeTag>;
using LinkId = Id<struct LinkTag>;
using RoadConnectionId = Id<struct RoadConnectionTag>;
using VehicleTypeId = Id<struct VehicleTypeTag>;
using LaneGroupId = Id<struct LaneGroupTag>;

/// Next-link marker for vehicles that leave the network at the end of their
/// current (sink) link.
inline constexpr LinkId kTerminal{-1};

/// Lane groups are numbered link_id * kLaneGroupStride + position, so a group
/// id is stable no matter which subnetwork computes it.
inline constexpr std::int64_t kLaneGroupStride = 100;
inline constexpr int kMaxLanes = 99;

constexpr LaneGroupId lane_group_id(LinkId link, int position) {
    return LaneGroupId{link.value * kLaneGroupStride + position};
}
constexpr LinkId lane_group_link(LaneGroupId group) { return LinkId{group.value / kLaneGroupStride}; }

}  // namespace otmd

template <class Tag>
struct std::hash<otmd::Id<Tag>> {
    std::size_t operator()(const otmd::Id<Tag>& id) const noexcept {
        return std::hash<std::int64_t>{}(id.value);
    }
};
