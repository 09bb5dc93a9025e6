/**
 * @file data_synth.hpp
 * @brief Seeded synthetic datasets whose labels are invariant under a known
 * symmetry group.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "eqxai/symmetry.hpp"

namespace eqxai {

enum class DatasetKind { ecg_like, toy_images, point_clouds, token_bags, motif_graphs };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view name);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::ecg_like;
    std::size_t n_train = 512;
    std::size_t n_test = 256;
    double noise_level = 0.05;
    std::uint64_t seed = 0;
};

struct Sample {
    Signal x;
    std::size_t label = 0;
    std::vector<int> concepts;  // binary attributes, one per concept name
    std::string latent;         // generative parameters, for debugging
};

struct Dataset {
    DatasetSpec spec;
    DomainShape shape;
    std::size_t classes = 0;
    std::string group_kind;  // make_group() name of the label-preserving group
    std::vector<std::string> concept_names;
    std::vector<Sample> train;
    std::vector<Sample> test;

    SymmetryGroup group() const { return make_group(group_kind, shape); }
};

Dataset generate(const DatasetSpec& spec);

std::vector<Signal> inputs(const std::vector<Sample>& samples);
std::vector<std::size_t> labels(const std::vector<Sample>& samples);

/// Group-invariant summary statistics of a signal (autocorrelation,
/// histograms, spectral traces, sorted norms), used by the nearest-centroid
/// baseline.
std::vector<double> invariant_features(DatasetKind kind, const Signal& x);

/// Test accuracy of a nearest-centroid classifier on invariant features,
/// centroids estimated on the training split.
double nearest_centroid_accuracy(const Dataset& d);

/// Number of triangles of an undirected graph given as a dense adjacency.
std::size_t count_triangles(const std::vector<double>& adjacency, std::size_t nodes);

/// Writes `<stem>.eqx` (EQXAI1 container) and `<stem>.json` (manifest).
void save_dataset(const std::filesystem::path& stem, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& stem);

} // namespace eqxai
