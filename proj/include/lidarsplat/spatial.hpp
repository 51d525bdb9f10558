#pragma once

#include "lidarsplat/types.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace lsplat {

struct Neighbor {
    std::size_t index;
    double distance;
};

/// Balanced kd-tree over a fixed point set.
///
/// Queries are exact: results equal an exhaustive scan, with ties on
/// distance resolved toward the lowest point index.
class KdTree {
public:
    KdTree() = default;
    /// Throws Error on empty or non-finite input.
    explicit KdTree(std::vector<Vec3> points);

    bool empty() const { return points_.empty(); }
    std::size_t size() const { return points_.size(); }
    const std::vector<Vec3>& points() const { return points_; }

    Neighbor nearest(const Vec3& query) const;
    /// Up to k neighbours sorted by (distance, index).
    std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;

private:
    struct Node {
        std::uint32_t begin, end;   // range into order_
        std::int32_t left = -1, right = -1;
        std::int32_t split_dim = -1; // -1 marks a leaf
        double split_value = 0.0;
    };

    std::int32_t build_node(std::uint32_t begin, std::uint32_t end, int depth);

    std::vector<Vec3> points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

/// Per-point PCA normals over k nearest neighbours (the point itself
/// included), oriented to have non-negative dot product with `reference`.
/// Collinear neighbourhoods get the coordinate axis most orthogonal to the
/// line, orthogonalised against it.
std::vector<Vec3> estimate_normals(const KdTree& tree, std::size_t k = 16,
                                   const Vec3& reference = Vec3::UnitZ());

/// Removes the component of `n` along `normal`: n - (n.N / N.N) N.
Vec3 project_to_tangent(const Vec3& n, const Vec3& normal);

} // namespace lsplat
