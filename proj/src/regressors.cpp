#include "elbclm/regressors.hpp"

#include "elbclm/errors.hpp"
#include "elbclm/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <limits>
#include <random>

namespace elbclm {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Solves the symmetric system A X = B. With `require_conditioned` a
/// Jacobi-equilibrated condition number above 1e12 is reported as singular.
MatrixXd solve_spd(MatrixXd A, const MatrixXd& B, bool require_conditioned) {
    VectorXd d = A.diagonal().cwiseMax(0.0).cwiseSqrt();
    for (Index i = 0; i < d.size(); ++i)
        if (d[i] == 0.0) {
            if (require_conditioned) throw SingularSystem("Gram matrix has an all-zero column");
            d[i] = 1.0;
        }
    const VectorXd dinv = d.cwiseInverse();
    A = dinv.asDiagonal() * A * dinv.asDiagonal();
    const Eigen::LLT<MatrixXd> llt(A);
    if (llt.info() != Eigen::Success)
        throw SingularSystem("normal equations are not positive definite");
    if (require_conditioned && !(llt.rcond() >= 1e-12))
        throw SingularSystem("Gram matrix is rank deficient (condition > 1e12)");
    return dinv.asDiagonal() * llt.solve(dinv.asDiagonal() * B);
}

bool constant_nonzero(const VectorXd& column) {
    return column.size() > 0 && column[0] != 0.0 && (column.array() == column[0]).all();
}

}  // namespace

double resolve_ridge_lambda(double ridge_lambda, double scale, double gram_trace,
                            std::size_t feature_count) {
    if (ridge_lambda >= 0.0) return ridge_lambda;
    if (feature_count == 0 || !(gram_trace > 0.0)) return scale;
    return scale * gram_trace / static_cast<double>(feature_count);
}

LinearRegressor train_ridge(const MatrixXd& features, const MatrixXd& targets,
                            double ridge_lambda, double ridge_scale) {
    const Index N = features.rows(), d = features.cols();
    if (N < 1 || d < 1) throw InsufficientData("ridge regression needs at least one sample");
    if (targets.rows() != N) throw DimensionMismatch("features and targets disagree on sample count");
    if (ridge_lambda < 0.0) {
        const auto body = features.leftCols(d - 1);
        const double trace =
            (body.rowwise() - body.colwise().mean()).squaredNorm();
        ridge_lambda = resolve_ridge_lambda(ridge_lambda, ridge_scale, trace,
                                            static_cast<std::size_t>(d - 1));
    }
    if (!(ridge_lambda >= 0.0)) throw InvalidArgument("ridge_lambda must be >= 0");

    LinearRegressor model;
    model.ridge_lambda = ridge_lambda;

    if (ridge_lambda > 0.0 && d > N && d > 1 && constant_nonzero(features.col(d - 1))) {
        // Dual form on centered data; equivalent to leaving the bias unpenalized.
        const double bias_value = features(0, d - 1);
        const auto body = features.leftCols(d - 1);
        const VectorXd mu = body.colwise().mean();
        const Eigen::RowVectorXd ybar = targets.colwise().mean();
        const MatrixXd Fc = body.rowwise() - mu.transpose();
        const MatrixXd Yc = targets.rowwise() - ybar;
        MatrixXd K = MatrixXd::Zero(N, N);
        K.selfadjointView<Eigen::Lower>().rankUpdate(Fc);
        K = K.selfadjointView<Eigen::Lower>();
        K.diagonal().array() += ridge_lambda;
        const MatrixXd A = solve_spd(std::move(K), Yc, false);
        model.weights.resize(targets.cols(), d);
        model.weights.leftCols(d - 1) = (Fc.transpose() * A).transpose();
        model.weights.col(d - 1) = (ybar.transpose() - model.weights.leftCols(d - 1) * mu) / bias_value;
        return model;
    }

    MatrixXd G = MatrixXd::Zero(d, d);
    G.selfadjointView<Eigen::Lower>().rankUpdate(features.transpose());
    G = G.selfadjointView<Eigen::Lower>();
    G.diagonal().head(d - 1).array() += ridge_lambda;
    const MatrixXd rhs = features.transpose() * targets;
    model.weights = solve_spd(std::move(G), rhs, ridge_lambda == 0.0).transpose();
    return model;
}

Eigen::VectorXd predict_ridge(const LinearRegressor& model, const VectorXd& f) {
    if (f.size() != model.weights.cols())
        throw DimensionMismatch("feature length " + std::to_string(f.size()) +
                                " does not match regressor width " +
                                std::to_string(model.weights.cols()));
    return model.weights * f;
}

void ForestConfig::validate() const {
    if (trees_per_landmark < 1) throw InvalidArgument("trees_per_landmark must be >= 1");
    if (max_depth < 1 || max_depth > 16) throw InvalidArgument("max_depth must lie in [1, 16]");
    if (candidate_splits < 1) throw InvalidArgument("candidate_splits must be >= 1");
    if (!(bootstrap_fraction > 0.0 && bootstrap_fraction <= 1.0))
        throw InvalidArgument("bootstrap_fraction must lie in (0, 1]");
}

int RegressionTree::leaf(const double* landmark_features, int depth) const {
    int node = 0;
    for (int level = 0; level < depth; ++level)
        node = 2 * node + 1 + (landmark_features[feature[static_cast<std::size_t>(node)]] >
                                       threshold[static_cast<std::size_t>(node)]
                                   ? 1
                                   : 0);
    return node - ((1 << depth) - 1);
}

std::vector<std::int32_t> ForestStage::encode(const VectorXd& features) const {
    if (static_cast<std::size_t>(features.size()) != layout.total())
        throw DimensionMismatch("forest stage expects " + std::to_string(layout.total()) +
                                " features, got " + std::to_string(features.size()));
    const int T = config.trees_per_landmark;
    const int leaves = config.leaves_per_tree();
    std::vector<std::int32_t> active(trees.size());
    for (std::size_t t = 0; t < trees.size(); ++t) {
        const std::size_t landmark = t / static_cast<std::size_t>(T);
        const double* block = features.data() + landmark * layout.per_landmark;
        active[t] = static_cast<std::int32_t>(t) * leaves + trees[t].leaf(block, config.max_depth);
    }
    return active;
}

namespace {

struct NodeSplit {
    std::int32_t feature = 0;
    double threshold = std::numeric_limits<double>::infinity();
};

/// Grows one tree on the rows `sample` of `features` restricted to the
/// landmark block starting at `column`, scoring splits on `targets` (N x 2).
RegressionTree grow_tree(const MatrixXd& features, Index column, Index width,
                         const MatrixXd& targets, std::vector<Index> sample,
                         const ForestConfig& cfg, std::mt19937_64& rng) {
    const int depth = cfg.max_depth;
    const std::size_t internal = (std::size_t{1} << depth) - 1;
    RegressionTree tree;
    tree.feature.assign(internal, 0);
    tree.threshold.assign(internal, std::numeric_limits<double>::infinity());

    std::vector<std::vector<Index>> members(2 * internal + 1);
    members[0] = std::move(sample);
    std::uniform_int_distribution<Index> pick_feature(0, width - 1);

    for (std::size_t node = 0; node < internal; ++node) {
        std::vector<Index>& rows = members[node];
        NodeSplit best;
        if (rows.size() >= 2) {
            std::uniform_int_distribution<std::size_t> pick_row(0, rows.size() - 1);
            double best_score = -std::numeric_limits<double>::infinity();
            Eigen::Vector2d total = Eigen::Vector2d::Zero();
            for (Index r : rows) total += targets.row(r).transpose();
            for (int c = 0; c < cfg.candidate_splits; ++c) {
                const Index f = pick_feature(rng);
                const double thr = features(rows[pick_row(rng)], column + f);
                Eigen::Vector2d right_sum = Eigen::Vector2d::Zero();
                std::size_t right_count = 0;
                for (Index r : rows)
                    if (features(r, column + f) > thr) {
                        right_sum += targets.row(r).transpose();
                        ++right_count;
                    }
                const std::size_t left_count = rows.size() - right_count;
                if (right_count == 0 || left_count == 0) continue;
                const Eigen::Vector2d left_sum = total - right_sum;
                // Maximizing this is equivalent to minimizing the children's SSE.
                const double score = left_sum.squaredNorm() / static_cast<double>(left_count) +
                                     right_sum.squaredNorm() / static_cast<double>(right_count);
                if (score > best_score) {
                    best_score = score;
                    best = {static_cast<std::int32_t>(f), thr};
                }
            }
        }
        tree.feature[node] = best.feature;
        tree.threshold[node] = best.threshold;
        std::vector<Index>& left = members[2 * node + 1];
        std::vector<Index>& right = members[2 * node + 2];
        for (Index r : rows)
            (features(r, column + best.feature) > best.threshold ? right : left).push_back(r);
        std::vector<Index>().swap(rows);
    }
    return tree;
}

}  // namespace

ForestStage train_forest_stage(const MatrixXd& features, const MatrixXd& targets,
                               const FeatureLayout& layout, const ForestConfig& config,
                               double ridge_lambda, std::uint64_t seed, double ridge_scale,
                               int threads) {
    config.validate();
    const Index N = features.rows();
    if (N < 2) throw InsufficientData("forest stage training needs >= 2 samples");
    if (targets.rows() != N) throw DimensionMismatch("features and targets disagree on sample count");
    if (static_cast<std::size_t>(features.cols()) != layout.total())
        throw DimensionMismatch("feature matrix width does not match the layout");
    if (static_cast<std::size_t>(targets.cols()) != 2 * layout.landmarks)
        throw DimensionMismatch("targets must have 2n columns");
    if (layout.per_landmark < 1) throw InvalidArgument("forest stage needs per-landmark features");

    ForestStage stage;
    stage.config = config;
    stage.layout = layout;
    const int T = config.trees_per_landmark;
    stage.trees.resize(layout.landmarks * static_cast<std::size_t>(T));

    const auto bag = static_cast<std::size_t>(
        std::max<double>(1.0, std::round(config.bootstrap_fraction * static_cast<double>(N))));
    parallel_for(stage.trees.size(), threads, [&](std::size_t t) {
        const std::size_t landmark = t / static_cast<std::size_t>(T);
        std::mt19937_64 rng(derive_seed(seed, landmark, t));
        std::uniform_int_distribution<Index> draw(0, N - 1);
        std::vector<Index> sample(bag);
        for (auto& s : sample) s = draw(rng);
        const MatrixXd local = targets.middleCols(static_cast<Index>(2 * landmark), 2);
        stage.trees[t] = grow_tree(features, static_cast<Index>(landmark * layout.per_landmark),
                                   static_cast<Index>(layout.per_landmark), local, std::move(sample),
                                   config, rng);
    });

    // Global map over [leaf indicators | q block] with an unpenalized intercept.
    const Index L = static_cast<Index>(stage.leaf_count());
    const Index Q = static_cast<Index>(layout.q_length);
    const Index D = L + Q;
    const Index k = targets.cols();
    const Index qpos = static_cast<Index>(layout.landmark_block());

    Eigen::SparseMatrix<double, Eigen::RowMajor> S(N, L);
    {
        std::vector<Eigen::Triplet<double>> entries;
        entries.reserve(static_cast<std::size_t>(N) * stage.trees.size());
        std::vector<std::vector<std::int32_t>> codes(static_cast<std::size_t>(N));
        parallel_for(static_cast<std::size_t>(N), threads, [&](std::size_t i) {
            codes[i] = stage.encode(features.row(static_cast<Index>(i)).transpose());
        });
        for (Index i = 0; i < N; ++i)
            for (std::int32_t leaf : codes[static_cast<std::size_t>(i)]) entries.emplace_back(i, leaf, 1.0);
        S.setFromTriplets(entries.begin(), entries.end());
    }
    const MatrixXd Qm = features.middleCols(qpos, Q);

    VectorXd mu(D);
    mu.head(L) = (Eigen::RowVectorXd::Ones(N) * S).transpose() / static_cast<double>(N);
    mu.tail(Q) = Qm.colwise().mean().transpose();
    const Eigen::RowVectorXd ybar = targets.colwise().mean();
    const auto n_samples = static_cast<double>(N);

    double trace = 0.0;
    for (Index j = 0; j < L; ++j) trace += n_samples * mu[j] * (1.0 - mu[j]);
    for (Index j = 0; j < Q; ++j) trace += (Qm.col(j).array() - mu[L + j]).square().sum();
    const double lambda = resolve_ridge_lambda(ridge_lambda, ridge_scale, trace,
                                               static_cast<std::size_t>(D));
    if (!(lambda >= 0.0)) throw InvalidArgument("ridge_lambda must be >= 0");
    stage.ridge_lambda = lambda;

    MatrixXd W;  // D x k
    if (D <= N || lambda == 0.0) {
        MatrixXd G(D, D);
        const Eigen::SparseMatrix<double> St = S.transpose();
        G.topLeftCorner(L, L) = MatrixXd(St * S);
        G.topRightCorner(L, Q) = St * Qm;
        G.bottomLeftCorner(Q, L) = G.topRightCorner(L, Q).transpose();
        G.bottomRightCorner(Q, Q) = Qm.transpose() * Qm;
        G.noalias() -= n_samples * mu * mu.transpose();
        G.diagonal().array() += lambda;
        MatrixXd rhs(D, k);
        rhs.topRows(L) = St * targets;
        rhs.bottomRows(Q) = Qm.transpose() * targets;
        rhs.noalias() -= n_samples * mu * ybar;
        W = solve_spd(std::move(G), rhs, lambda == 0.0);
    } else {
        const VectorXd r = S * mu.head(L) + Qm * mu.tail(Q);
        MatrixXd K = MatrixXd(S * Eigen::SparseMatrix<double>(S.transpose()));
        K.noalias() += Qm * Qm.transpose();
        K.colwise() -= r;
        K.rowwise() -= r.transpose();
        K.array() += mu.squaredNorm();
        K.diagonal().array() += lambda;
        const MatrixXd Yc = targets.rowwise() - ybar;
        const MatrixXd A = solve_spd(std::move(K), Yc, false);
        const Eigen::RowVectorXd colsum = A.colwise().sum();
        W.resize(D, k);
        W.topRows(L) = Eigen::SparseMatrix<double>(S.transpose()) * A;
        W.bottomRows(Q) = Qm.transpose() * A;
        W.noalias() -= mu * colsum;
    }
    stage.global_linear = W.transpose();
    stage.offset = ybar.transpose() - stage.global_linear * mu;
    return stage;
}

VectorXd predict_forest_stage(const ForestStage& model, const VectorXd& features) {
    const std::vector<std::int32_t> active = model.encode(features);
    VectorXd out = model.offset;
    for (std::int32_t leaf : active) out += model.global_linear.col(leaf);
    // Column-by-column so the result matches a dense product bit for bit.
    const Index L = static_cast<Index>(model.leaf_count());
    const Index qpos = static_cast<Index>(model.layout.landmark_block());
    for (Index j = 0; j < static_cast<Index>(model.layout.q_length); ++j)
        out += model.global_linear.col(L + j) * features[qpos + j];
    return out;
}

VectorXd predict_forest_stage(const ForestStage& model, const GrayImage& image, const Shape& shape,
                              double face_scale, const PixelDiffConfig& pixel) {
    if (shape.size() != model.layout.landmarks)
        throw DimensionMismatch("shape landmark count does not match the forest stage");
    VectorXd features = VectorXd::Zero(static_cast<Index>(model.layout.total()));
    const auto per = static_cast<Index>(model.layout.per_landmark);
    for (std::size_t i = 0; i < shape.size(); ++i)
        features.segment(static_cast<Index>(i) * per, per) =
            extract_pixel_diff(image, shape, i, face_scale, pixel);
    features[features.size() - 1] = 1.0;
    return predict_forest_stage(model, features);
}

VectorXd densify_forest_input(const ForestStage& model, const VectorXd& features) {
    const Index L = static_cast<Index>(model.leaf_count());
    const Index Q = static_cast<Index>(model.layout.q_length);
    VectorXd dense = VectorXd::Zero(L + Q);
    for (std::int32_t leaf : model.encode(features)) dense[leaf] = 1.0;
    if (Q > 0) dense.tail(Q) = features.segment(static_cast<Index>(model.layout.landmark_block()), Q);
    return dense;
}

}  // namespace elbclm
