#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mergeval/safetensors.hpp"

namespace mergeval::merge {

using tensorstore::CheckpointFile;
using tensorstore::CheckpointIndex;
using tensorstore::DType;
using tensorstore::NamedTensor;
using tensorstore::Tensor;

// One low-rank update: delta = (scale_numerator / rank) * B.A with
// A: rank x d_in and B: d_out x rank.
struct LoraPair {
    std::string target;  // base tensor the pair patches
    Tensor a;
    Tensor b;
    uint64_t rank = 0;
    double scale_numerator = 0.0;
};

struct LoraAdapter {
    std::vector<LoraPair> pairs;

    const LoraPair* find(std::string_view target) const;
};

enum class MergeMode {
    Interpolate,
    LoraRescale,
};

std::string_view merge_mode_name(MergeMode m);

struct MergeSpec {
    MergeMode mode = MergeMode::Interpolate;
    std::vector<double> alphas;                         // strictly increasing, each in [0,1]
    std::optional<DType> output_dtype;                  // default: per-tensor base dtype
    std::string output_naming = "merged-a{alpha}.safetensors";
    bool overwrite = false;
    bool extrapolate = false;  // permit alpha > 1 for apply_lora
    int jobs = 1;

    void validate() const;  // throws InvalidMergeSpec
};

struct MergeOptions {
    std::optional<DType> output_dtype;
    bool extrapolate = false;
    int jobs = 1;
};

// Whole-weight interpolation: (1-alpha)*base + alpha*ft elementwise. The
// endpoints bypass arithmetic so alpha=0 and alpha=1 copy bit-exactly.
std::vector<NamedTensor> interpolate(const CheckpointFile& base, const CheckpointFile& ft,
                                     double alpha, const MergeOptions& opts = {});

// LoRA rescaling: patched weights become W_base + alpha*(scale/rank)*(B.A);
// everything else is copied from base.
std::vector<NamedTensor> apply_lora(const CheckpointFile& base, const LoraAdapter& adapter,
                                    double alpha, const MergeOptions& opts = {});

// Binds raw adapter tensor names ("<prefix><module>.lora_A.weight" /
// ".lora_B.weight") to base weights "<module>.weight".
struct NameMapRule {
    std::string strip_prefix = "base_model.model.";
    std::string a_suffix = ".lora_A.weight";
    std::string b_suffix = ".lora_B.weight";
    std::string target_suffix = ".weight";
    // Nominal LoRA scale; (scale_numerator / rank) multiplies B.A. When unset
    // it defaults to the pair's rank, i.e. scale 1.
    std::optional<double> scale_numerator;
};

LoraAdapter match_names(const CheckpointIndex& base, const CheckpointFile& adapter_file,
                        const NameMapRule& rule = {});

// Per-alpha deviation between the interpolation route and the LoRA-rescale
// route over all patched tensors.
struct EquivalenceRow {
    double alpha = 0.0;
    double max_abs = 0.0;
    double rms = 0.0;
    std::string worst_tensor;
};

std::vector<EquivalenceRow> equivalence_report(const CheckpointFile& base, const LoraAdapter& adapter,
                                               const std::vector<double>& alphas);

struct SweepEntry {
    double alpha = 0.0;
    std::string path;
    std::string sha256;
    std::string mode;
};

// Writes one checkpoint per alpha plus a line-delimited JSON manifest
// ("manifest.jsonl") of {alpha, path, sha256, mode} rows.
std::vector<SweepEntry> sweep(const CheckpointFile& base, const CheckpointFile* ft,
                              const LoraAdapter* adapter, const MergeSpec& spec,
                              const std::filesystem::path& out_dir);

// Elementwise/ low-rank kernels, exposed for the equivalence check.
Tensor lerp_tensor(const Tensor& base, const Tensor& ft, double alpha);
Tensor lora_patch(const Tensor& base, const LoraPair& pair, double alpha);

}  // namespace mergeval::merge
