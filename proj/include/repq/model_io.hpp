#pragma once

#include <filesystem>
#include <vector>

#include "repq/model.hpp"

namespace repq {

// A batch of network inputs with optional per-sample labels.
struct SampleSet {
    Tensor batch; // N x C x H x W
    std::vector<int> labels; // empty when unlabeled, else one per sample

    int count() const { return batch.empty() ? 0 : batch.dim(0); }
    bool labeled() const { return !labels.empty(); }
};

// Models and sample sets are stored as a directory holding manifest.json plus
// raw little-endian float32 blobs. Loading what save wrote reproduces the
// exact bytes of every tensor.
void save_model(const RepModel& m, const std::filesystem::path& dir);
RepModel load_model(const std::filesystem::path& dir);

void save_samples(const SampleSet& s, const std::filesystem::path& dir);
SampleSet load_samples(const std::filesystem::path& dir);

// Shared blob helpers, also used by the quantized-model files.
void write_blob_f32(const std::filesystem::path& file, std::span<const float> data);
std::vector<float> read_blob_f32(const std::filesystem::path& file, std::size_t count);
void write_blob_int(const std::filesystem::path& file, std::span<const std::int32_t> codes,
                    int storage_bits);
std::vector<std::int32_t> read_blob_int(const std::filesystem::path& file, std::size_t count,
                                        int storage_bits);

// Integer blob width for a given code bit depth: 8, 16 or 32.
int storage_bits_for(int quant_bits);

} // namespace repq
