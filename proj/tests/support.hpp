#pragma once

#include "elbclm/dataset.hpp"
#include "elbclm/pdm.hpp"
#include "elbclm/shape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace elbclm::testing {

inline Shape random_shape(std::mt19937_64& rng, std::size_t n, double spread = 10.0) {
    std::normal_distribution<double> g(0.0, spread);
    Eigen::VectorXd v(static_cast<Eigen::Index>(2 * n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
    return Shape(v);
}

inline SimilarityTransform random_similarity(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> s(0.5, 2.0), th(-std::numbers::pi, std::numbers::pi),
        t(-50.0, 50.0);
    return {s(rng), th(rng), t(rng), t(rng)};
}

/// Pose with q drawn inside +-2 sigma and s in [0.5, 2].
inline PoseParams random_pose(std::mt19937_64& rng, const PdmModel& pdm, double q_sigmas = 2.0) {
    std::uniform_real_distribution<double> s(0.5, 2.0), th(-1.0, 1.0), t(-50.0, 50.0),
        u(-q_sigmas, q_sigmas);
    PoseParams p;
    p.s = s(rng);
    p.theta = th(rng);
    p.tx = t(rng);
    p.ty = t(rng);
    p.q.resize(static_cast<Eigen::Index>(pdm.modes()));
    for (Eigen::Index j = 0; j < p.q.size(); ++j) p.q[j] = u(rng) * std::sqrt(pdm.eigenvalues()[j]);
    return p;
}

/// Basis of the four similarity directions at `mean` (unnormalized).
inline Eigen::MatrixXd rigid_directions(const Eigen::VectorXd& mean) {
    const Eigen::Index n = mean.size() / 2;
    Eigen::MatrixXd r(2 * n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        r.row(2 * i) << mean[2 * i], -mean[2 * i + 1], 1.0, 0.0;
        r.row(2 * i + 1) << mean[2 * i + 1], mean[2 * i], 0.0, 1.0;
    }
    return r;
}

/// Random PDM with `m` modes orthogonal to the similarity directions of a
/// random centered unit-norm mean.
inline PdmModel random_pdm(std::mt19937_64& rng, std::size_t n, std::size_t m,
                           double top_sigma = 0.05) {
    Eigen::VectorXd mean = random_shape(rng, n).coords();
    const double cx = mean(Eigen::seq(0, Eigen::last, 2)).mean();
    const double cy = mean(Eigen::seq(1, Eigen::last, 2)).mean();
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
        mean[2 * i] -= cx;
        mean[2 * i + 1] -= cy;
    }
    mean.normalize();

    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd all(2 * n, 4 + m);
    all.leftCols(4) = rigid_directions(mean);
    for (Eigen::Index j = 4; j < all.cols(); ++j)
        for (Eigen::Index i = 0; i < all.rows(); ++i) all(i, j) = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(all);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(all.rows(), all.cols());
    Eigen::MatrixXd basis = q.rightCols(static_cast<Eigen::Index>(m));
    Eigen::VectorXd lambda(static_cast<Eigen::Index>(m));
    for (Eigen::Index j = 0; j < lambda.size(); ++j) {
        const double sigma = top_sigma * std::pow(0.7, static_cast<double>(j));
        lambda[j] = sigma * sigma;
    }
    return PdmModel(mean, basis, lambda, 1.0);
}

/// Small synthetic blob corpus from the 68-point face template.
inline SyntheticCorpus face_corpus(std::size_t count, std::uint64_t seed, double noise = 0.0) {
    return generate_synthetic_corpus(face_template_pdm(), count, noise, ImageLaw{}, seed);
}

}  // namespace elbclm::testing
