#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtecg/tensor.hpp"

namespace mtecg {

// One fixed-length multi-lead recording. Samples are stored at the 32-bit
// file precision and promoted to doubles when entering the model.
struct EcgRecord {
    std::string id;
    std::string patient_id; // empty: the record is its own split group
    int k_leads = 0;
    int q_samples = 0;
    int sampling_rate_hz = 0;
    std::vector<float> samples; // lead-major, k_leads * q_samples values
    std::vector<std::uint8_t> labels;

    // K x Q matrix of doubles.
    Tensor signal_matrix() const;
};

struct Dataset {
    std::vector<std::string> label_names;
    std::string provenance;
    std::vector<EcgRecord> records;

    int n_labels() const { return static_cast<int>(label_names.size()); }
    // Shared shape/rate/label-count across records, unique ids, finite samples.
    void validate() const;
};

struct SplitSpec {
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
    std::uint64_t seed = 0;
};

struct SplitResult {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Reads a JSON manifest {label_names, records: [{id, path, k, q,
// sampling_rate_hz, labels, patient_id?}]}; signal paths resolve relative to
// the manifest's directory and hold raw little-endian float32, lead-major.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Writes signals/<id>.f32 plus <manifest_name> under dir. Deterministic byte
// output for a given dataset.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                  const std::string& manifest_name = "manifest.json");

// Deterministic beat-template signal for one record: Gaussian P/Q/R/S/T bumps
// per beat plus low-amplitude noise; each active label toggles one distinct
// morphology feature. Pure in all arguments, so records differing only in one
// label can be compared feature-by-feature.
std::vector<float> synthesize_signal(int k_leads, int q_samples,
                                     const std::vector<std::uint8_t>& labels,
                                     std::uint64_t record_seed);

Dataset generate_synthetic(int n_records, int k_leads, int q_samples, int n_labels,
                           std::uint64_t seed);

// Grouped, hash-ordered partition: records sharing a patient_id stay
// together; sizes are round(fraction * n_groups) for val/test with train
// absorbing the remainder. Errors if any part would be empty.
SplitResult split_dataset(const Dataset& dataset, const SplitSpec& spec);

} // namespace mtecg
