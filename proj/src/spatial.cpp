#include "lidarsplat/spatial.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace lsplat {

namespace {

constexpr std::uint32_t kLeafSize = 8;

inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    const double dz = a.z() - b.z();
    return dx * dx + dy * dy + dz * dz;
}

// (distance^2, index) ordering shared by every query path.
struct Candidate {
    double d2;
    std::size_t index;
    bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

} // namespace

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) {
        throw Error("kd-tree: cannot build an index over an empty point set");
    }
    if (points_.size() >= std::numeric_limits<std::uint32_t>::max()) {
        throw Error("kd-tree: too many points");
    }
    for (std::size_t i = 0; i < points_.size(); ++i) {
        if (!points_[i].allFinite()) {
            throw Error("kd-tree: point " + std::to_string(i) + " is not finite");
        }
    }
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build_node(0, static_cast<std::uint32_t>(points_.size()), 0);
}

std::int32_t KdTree::build_node(std::uint32_t begin, std::uint32_t end, int depth) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) {
        return id;
    }

    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::uint32_t i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int dim = 0;
    (hi - lo).maxCoeff(&dim);
    if (hi[dim] == lo[dim]) {
        return id; // all coincident: keep as a (large) leaf
    }

    const std::uint32_t mid = begin + (end - begin) / 2;
    auto less = [&](std::uint32_t a, std::uint32_t b) {
        const double ca = points_[a][dim], cb = points_[b][dim];
        return ca < cb || (ca == cb && a < b);
    };
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, less);

    nodes_[id].split_dim = dim;
    nodes_[id].split_value = points_[order_[mid]][dim];
    const auto left = build_node(begin, mid, depth + 1);
    const auto right = build_node(mid, end, depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

Neighbor KdTree::nearest(const Vec3& query) const {
    if (points_.empty()) {
        throw Error("kd-tree: query on empty index");
    }
    Candidate best{std::numeric_limits<double>::infinity(), std::numeric_limits<std::size_t>::max()};

    // Explicit stack of (node, lower bound on squared distance).
    std::vector<std::pair<std::int32_t, double>> stack;
    stack.reserve(64);
    stack.emplace_back(0, 0.0);
    while (!stack.empty()) {
        const auto [id, bound] = stack.back();
        stack.pop_back();
        if (bound > best.d2) {
            continue;
        }
        const Node& node = nodes_[id];
        if (node.split_dim < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const Candidate c{squared_distance(query, points_[order_[i]]), order_[i]};
                if (c < best) {
                    best = c;
                }
            }
            continue;
        }
        const double diff = query[node.split_dim] - node.split_value;
        const std::int32_t near = diff < 0.0 ? node.left : node.right;
        const std::int32_t far = diff < 0.0 ? node.right : node.left;
        // Far first so the near side is popped next.
        stack.emplace_back(far, diff * diff);
        stack.emplace_back(near, 0.0);
    }
    return {best.index, std::sqrt(best.d2)};
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, std::size_t k) const {
    if (points_.empty()) {
        throw Error("kd-tree: query on empty index");
    }
    k = std::min(k, points_.size());
    std::vector<Neighbor> out;
    if (k == 0) {
        return out;
    }
    std::priority_queue<Candidate> heap; // max-heap: worst candidate on top
    auto worst = [&] { return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.top().d2; };

    std::vector<std::pair<std::int32_t, double>> stack;
    stack.reserve(64);
    stack.emplace_back(0, 0.0);
    while (!stack.empty()) {
        const auto [id, bound] = stack.back();
        stack.pop_back();
        if (bound > worst()) {
            continue;
        }
        const Node& node = nodes_[id];
        if (node.split_dim < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const Candidate c{squared_distance(query, points_[order_[i]]), order_[i]};
                if (heap.size() < k) {
                    heap.push(c);
                } else if (c < heap.top()) {
                    heap.pop();
                    heap.push(c);
                }
            }
            continue;
        }
        const double diff = query[node.split_dim] - node.split_value;
        const std::int32_t near = diff < 0.0 ? node.left : node.right;
        const std::int32_t far = diff < 0.0 ? node.right : node.left;
        stack.emplace_back(far, diff * diff);
        stack.emplace_back(near, 0.0);
    }

    out.resize(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = {heap.top().index, std::sqrt(heap.top().d2)};
        heap.pop();
    }
    return out;
}

std::vector<Vec3> estimate_normals(const KdTree& tree, std::size_t k, const Vec3& reference) {
    const std::size_t n = tree.size();
    if (k < 3) {
        throw Error("estimate_normals: k must be at least 3");
    }
    if (k > n) {
        throw Error("estimate_normals: k = " + std::to_string(k) + " exceeds point count " + std::to_string(n));
    }
    const Vec3 ref = reference.normalized();
    std::vector<Vec3> normals(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto nbrs = tree.knn(tree.points()[i], k);
        Vec3 mean = Vec3::Zero();
        for (const auto& nb : nbrs) {
            mean += tree.points()[nb.index];
        }
        mean /= static_cast<double>(nbrs.size());
        Mat3 cov = Mat3::Zero();
        for (const auto& nb : nbrs) {
            const Vec3 d = tree.points()[nb.index] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        const Vec3 lambda = eig.eigenvalues(); // ascending

        Vec3 normal;
        if (lambda[2] <= 0.0) {
            normal = ref; // coincident points
        } else if (lambda[1] <= 1e-12 * lambda[2]) {
            // Collinear: pick the axis least aligned with the line.
            const Vec3 line = eig.eigenvectors().col(2);
            int axis = 0;
            line.cwiseAbs().minCoeff(&axis);
            const Vec3 a = Vec3::Unit(axis);
            normal = (a - a.dot(line) * line).normalized();
        } else {
            normal = eig.eigenvectors().col(0).normalized();
        }
        if (normal.dot(ref) < 0.0) {
            normal = -normal;
        }
        normals[i] = normal;
    }
    return normals;
}

Vec3 project_to_tangent(const Vec3& n, const Vec3& normal) {
    return n - (n.dot(normal) / normal.dot(normal)) * normal;
}

} // namespace lsplat
