#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "core.hpp"

namespace tabens {

struct MixtureSpec {
    std::size_t rows = 300;
    std::size_t dims = 8;
    int classes = 2;
    int components_per_class = 2;
    double separation = 1.5;  // scale of the component means; noise is unit variance
    double label_noise = 0.05;
};

// Each class is a mixture of isotropic Gaussians with randomly placed means.
// A fraction of labels is flipped uniformly so no learner reaches accuracy 1.
// Rows are assigned round-robin to classes before shuffling, so every class
// holds at least rows / classes members.
inline Dataset make_gaussian_mixture(const std::string& id, const MixtureSpec& spec, std::uint64_t seed) {
    require(spec.classes >= 2, ErrorCode::InvalidArgument, "mixture needs at least two classes");
    require(spec.rows >= 3 * static_cast<std::size_t>(spec.classes), ErrorCode::InvalidArgument,
            "mixture needs at least three rows per class");
    require(spec.dims >= 1 && spec.components_per_class >= 1, ErrorCode::InvalidArgument,
            "mixture needs dims and components");
    SplitMix64 rng(seed);
    const std::size_t C = static_cast<std::size_t>(spec.classes);
    const std::size_t M = static_cast<std::size_t>(spec.components_per_class);
    Matrix means(C * M, spec.dims);
    for (double& v : means.data()) v = spec.separation * rng.normal();

    Dataset ds;
    ds.id = id;
    ds.class_count = spec.classes;
    ds.features = Matrix(spec.rows, spec.dims);
    ds.labels.resize(spec.rows);
    for (std::size_t i = 0; i < spec.rows; ++i) ds.labels[i] = static_cast<int>(i % C);
    rng.shuffle(ds.labels);
    for (std::size_t i = 0; i < spec.rows; ++i) {
        const std::size_t comp = static_cast<std::size_t>(ds.labels[i]) * M + rng.below(M);
        for (std::size_t j = 0; j < spec.dims; ++j) ds.features(i, j) = means(comp, j) + rng.normal();
        if (rng.uniform() < spec.label_noise) ds.labels[i] = static_cast<int>(rng.below(C));
    }
    for (int c = 0; c < spec.classes; ++c) ds.class_names.push_back(std::to_string(c));
    for (std::size_t j = 0; j < spec.dims; ++j) ds.feature_names.push_back("x" + std::to_string(j));
    ds.validate();
    return ds;
}

// The desk-scale suite: `count` mixtures, n=300, d=8, alternating two and three classes.
inline std::vector<Dataset> desk_suite(std::size_t count = 10, std::uint64_t seed = 2024) {
    std::vector<Dataset> out;
    for (std::size_t i = 0; i < count; ++i) {
        MixtureSpec s;
        s.classes = i % 2 == 0 ? 2 : 3;
        const std::string id = (i < 10 ? "desk0" : "desk") + std::to_string(i);
        out.push_back(make_gaussian_mixture(id, s, derive_seed(seed, i)));
    }
    return out;
}

}  // namespace tabens
