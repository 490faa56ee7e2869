#include "mergeval/merge.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"

#include "mergeval/errors.hpp"
#include "mergeval/io.hpp"
#include "mergeval/sha256.hpp"

namespace mergeval::merge {

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work items must be
// independent; output determinism comes from writing to disjoint slots.
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> workers;
    std::exception_ptr error;
    std::mutex error_mu;
    const size_t nthreads = std::min<size_t>(jobs, n);
    workers.reserve(nthreads);
    for (size_t t = 0; t < nthreads; ++t) {
        workers.emplace_back([&] {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

std::string shape_str(const std::vector<uint64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void check_name_sets(const CheckpointIndex& base, const CheckpointIndex& ft) {
    std::set<std::string> base_names, ft_names;
    for (const auto& e : base.entries) base_names.insert(e.name);
    for (const auto& e : ft.entries) ft_names.insert(e.name);
    std::vector<std::string> only_base, only_ft;
    std::set_difference(base_names.begin(), base_names.end(), ft_names.begin(), ft_names.end(),
                        std::back_inserter(only_base));
    std::set_difference(ft_names.begin(), ft_names.end(), base_names.begin(), base_names.end(),
                        std::back_inserter(only_ft));
    if (!only_base.empty() || !only_ft.empty()) {
        std::string msg = "tensor name sets differ;";
        if (!only_base.empty()) {
            msg += " only in base:";
            for (const auto& n : only_base) msg += " '" + n + "'";
        }
        if (!only_ft.empty()) {
            msg += " only in fine-tune:";
            for (const auto& n : only_ft) msg += " '" + n + "'";
        }
        throw NameSetMismatch(msg);
    }
}

void check_alpha(double alpha, bool extrapolate) {
    if (std::isnan(alpha) || alpha < 0.0 || (alpha > 1.0 && !extrapolate)) {
        throw InvalidMergeSpec("alpha " + fmt_num(alpha) +
                               " outside [0,1]; pass --extrapolate to allow values above 1");
    }
}

DType output_dtype_for(const MergeOptions& opts, DType base_dtype) {
    return opts.output_dtype.value_or(base_dtype);
}

// Entries in payload layout order, so merged outputs keep the base file's
// byte layout and the alpha endpoints stay bit-identical to their sources.
std::vector<const tensorstore::TensorEntry*> payload_order(const CheckpointIndex& index) {
    std::vector<const tensorstore::TensorEntry*> entries;
    entries.reserve(index.entries.size());
    for (const auto& e : index.entries) entries.push_back(&e);
    std::sort(entries.begin(), entries.end(),
              [](const tensorstore::TensorEntry* a, const tensorstore::TensorEntry* b) {
                  return a->begin != b->begin ? a->begin < b->begin : a->name < b->name;
              });
    return entries;
}

}  // namespace

const LoraPair* LoraAdapter::find(std::string_view target) const {
    for (const auto& p : pairs) {
        if (p.target == target) return &p;
    }
    return nullptr;
}

std::string_view merge_mode_name(MergeMode m) {
    return m == MergeMode::Interpolate ? "interpolate" : "lora-rescale";
}

void MergeSpec::validate() const {
    if (alphas.empty()) throw InvalidMergeSpec("alpha list is empty");
    for (size_t i = 0; i < alphas.size(); ++i) {
        check_alpha(alphas[i], extrapolate);
        if (i > 0 && !(alphas[i] > alphas[i - 1])) {
            throw InvalidMergeSpec("alphas must be strictly increasing");
        }
    }
    if (output_naming.find("{alpha}") == std::string::npos) {
        throw InvalidMergeSpec("output naming pattern must contain '{alpha}'");
    }
}

Tensor lerp_tensor(const Tensor& base, const Tensor& ft, double alpha) {
    if (alpha == 0.0) return base;
    if (alpha == 1.0) return ft;
    Tensor out;
    out.shape = base.shape;
    out.values.resize(base.values.size());
    const float a = static_cast<float>(alpha);
    const float one_minus_a = static_cast<float>(1.0 - alpha);
    for (size_t i = 0; i < base.values.size(); ++i) {
        out.values[i] = one_minus_a * base.values[i] + a * ft.values[i];
    }
    return out;
}

Tensor lora_patch(const Tensor& base, const LoraPair& pair, double alpha) {
    if (base.shape.size() != 2) {
        throw ShapeMismatch("LoRA target '" + pair.target + "' must be 2-D, got shape " +
                            shape_str(base.shape));
    }
    const uint64_t d_out = base.shape[0];
    const uint64_t d_in = base.shape[1];
    const uint64_t r = pair.rank;
    if (pair.a.shape.size() != 2 || pair.b.shape.size() != 2 || pair.a.shape[0] != r ||
        pair.b.shape[1] != r) {
        throw RankMismatch("pair for '" + pair.target + "': A " + shape_str(pair.a.shape) + " and B " +
                           shape_str(pair.b.shape) + " do not agree on rank " + std::to_string(r));
    }
    if (pair.b.shape[0] != d_out || pair.a.shape[1] != d_in) {
        throw ShapeMismatch("pair for '" + pair.target + "': B.A gives " +
                            std::to_string(pair.b.shape[0]) + "x" + std::to_string(pair.a.shape[1]) +
                            ", target wants " + shape_str(base.shape));
    }
    Tensor out;
    out.shape = base.shape;
    out.values.resize(base.values.size());
    if (alpha == 0.0) {
        out.values = base.values;
        return out;
    }
    const double scale = alpha * (pair.scale_numerator / static_cast<double>(r));
    for (uint64_t o = 0; o < d_out; ++o) {
        for (uint64_t i = 0; i < d_in; ++i) {
            double acc = 0.0;  // sums accumulate in 64-bit
            for (uint64_t k = 0; k < r; ++k) {
                acc += static_cast<double>(pair.b.values[o * r + k]) *
                       static_cast<double>(pair.a.values[k * d_in + i]);
            }
            out.values[o * d_in + i] =
                base.values[o * d_in + i] + static_cast<float>(scale * acc);
        }
    }
    return out;
}

std::vector<NamedTensor> interpolate(const CheckpointFile& base, const CheckpointFile& ft,
                                     double alpha, const MergeOptions& opts) {
    check_alpha(alpha, opts.extrapolate);
    check_name_sets(base.index(), ft.index());
    for (const auto& e : base.index().entries) {
        const auto& fe = ft.index().at(e.name);
        if (fe.shape != e.shape) {
            throw ShapeMismatch("tensor '" + e.name + "': base shape " + shape_str(e.shape) +
                                " vs fine-tune shape " + shape_str(fe.shape));
        }
    }
    const auto ordered = payload_order(base.index());
    std::vector<NamedTensor> out(ordered.size());
    parallel_for(out.size(), opts.jobs, [&](size_t i) {
        const auto& e = *ordered[i];
        NamedTensor nt;
        nt.name = e.name;
        nt.dtype = output_dtype_for(opts, e.dtype);
        if (alpha == 0.0) {
            nt.tensor = base.read(e.name);
        } else if (alpha == 1.0) {
            nt.tensor = ft.read(e.name);
        } else {
            nt.tensor = lerp_tensor(base.read(e.name), ft.read(e.name), alpha);
        }
        out[i] = std::move(nt);
    });
    return out;
}

std::vector<NamedTensor> apply_lora(const CheckpointFile& base, const LoraAdapter& adapter,
                                    double alpha, const MergeOptions& opts) {
    check_alpha(alpha, opts.extrapolate);
    for (const auto& p : adapter.pairs) {
        if (!base.index().find(p.target)) {
            throw UnresolvedTarget("adapter targets '" + p.target + "' which the base checkpoint lacks");
        }
    }
    const auto ordered = payload_order(base.index());
    std::vector<NamedTensor> out(ordered.size());
    parallel_for(out.size(), opts.jobs, [&](size_t i) {
        const auto& e = *ordered[i];
        NamedTensor nt;
        nt.name = e.name;
        nt.dtype = output_dtype_for(opts, e.dtype);
        const LoraPair* pair = adapter.find(e.name);
        if (pair && alpha != 0.0) {
            nt.tensor = lora_patch(base.read(e.name), *pair, alpha);
        } else {
            nt.tensor = base.read(e.name);
        }
        out[i] = std::move(nt);
    });
    return out;
}

LoraAdapter match_names(const CheckpointIndex& base, const CheckpointFile& adapter_file,
                        const NameMapRule& rule) {
    struct Half {
        std::optional<std::string> a_name;
        std::optional<std::string> b_name;
    };
    std::map<std::string, Half> modules;  // module_path -> raw tensor names

    auto strip = [&](const std::string& name) {
        if (!rule.strip_prefix.empty() && name.rfind(rule.strip_prefix, 0) == 0) {
            return name.substr(rule.strip_prefix.size());
        }
        return name;
    };

    for (const auto& e : adapter_file.index().entries) {
        const std::string stripped = strip(e.name);
        if (stripped.size() > rule.a_suffix.size() &&
            stripped.ends_with(rule.a_suffix)) {
            modules[stripped.substr(0, stripped.size() - rule.a_suffix.size())].a_name = e.name;
        } else if (stripped.size() > rule.b_suffix.size() && stripped.ends_with(rule.b_suffix)) {
            modules[stripped.substr(0, stripped.size() - rule.b_suffix.size())].b_name = e.name;
        }
        // non-lora tensors in the adapter file are ignored
    }
    if (modules.empty()) {
        throw OrphanHalf("adapter contains no tensors matching '*" + rule.a_suffix + "' / '*" +
                         rule.b_suffix + "'");
    }

    LoraAdapter adapter;
    for (const auto& [module_path, half] : modules) {
        if (!half.a_name) throw OrphanHalf("module '" + module_path + "' has lora_B but no lora_A");
        if (!half.b_name) throw OrphanHalf("module '" + module_path + "' has lora_A but no lora_B");
        LoraPair pair;
        pair.target = module_path + rule.target_suffix;
        const auto* target_entry = base.find(pair.target);
        if (!target_entry) {
            throw UnresolvedTarget("adapter module '" + module_path + "' resolves to '" + pair.target +
                                   "' which the base checkpoint lacks");
        }
        pair.a = adapter_file.read(*half.a_name);
        pair.b = adapter_file.read(*half.b_name);
        if (pair.a.shape.size() != 2 || pair.b.shape.size() != 2) {
            throw ShapeMismatch("module '" + module_path + "': lora_A/lora_B must be 2-D");
        }
        if (pair.a.shape[0] != pair.b.shape[1]) {
            throw RankMismatch("module '" + module_path + "': A rank " + std::to_string(pair.a.shape[0]) +
                               " vs B rank " + std::to_string(pair.b.shape[1]));
        }
        pair.rank = pair.a.shape[0];
        if (pair.rank < 1) throw RankMismatch("module '" + module_path + "': rank must be >= 1");
        if (target_entry->shape.size() != 2 || pair.b.shape[0] != target_entry->shape[0] ||
            pair.a.shape[1] != target_entry->shape[1]) {
            throw ShapeMismatch("module '" + module_path + "': B.A gives " +
                                std::to_string(pair.b.shape[0]) + "x" + std::to_string(pair.a.shape[1]) +
                                ", target '" + pair.target + "' has shape " +
                                shape_str(target_entry->shape));
        }
        pair.scale_numerator = rule.scale_numerator.value_or(static_cast<double>(pair.rank));
        adapter.pairs.push_back(std::move(pair));
    }
    return adapter;
}

std::vector<EquivalenceRow> equivalence_report(const CheckpointFile& base, const LoraAdapter& adapter,
                                               const std::vector<double>& alphas) {
    // Materialize the fine-tune once in working precision.
    std::map<std::string, Tensor> materialized;
    for (const auto& p : adapter.pairs) {
        if (!base.index().find(p.target)) {
            throw UnresolvedTarget("adapter targets '" + p.target + "' which the base checkpoint lacks");
        }
        materialized[p.target] = lora_patch(base.read(p.target), p, 1.0);
    }
    std::vector<EquivalenceRow> rows;
    for (double alpha : alphas) {
        check_alpha(alpha, /*extrapolate=*/true);
        EquivalenceRow row;
        row.alpha = alpha;
        double sq_sum = 0.0;
        uint64_t count = 0;
        for (const auto& p : adapter.pairs) {
            const Tensor base_t = base.read(p.target);
            const Tensor via_interp = lerp_tensor(base_t, materialized.at(p.target), alpha);
            const Tensor via_lora = lora_patch(base_t, p, alpha);
            double tensor_max = 0.0;
            for (size_t i = 0; i < via_interp.values.size(); ++i) {
                const double d = std::abs(static_cast<double>(via_interp.values[i]) -
                                          static_cast<double>(via_lora.values[i]));
                tensor_max = std::max(tensor_max, d);
                sq_sum += d * d;
            }
            count += via_interp.values.size();
            if (tensor_max >= row.max_abs) {
                if (tensor_max > row.max_abs || row.worst_tensor.empty()) {
                    row.max_abs = tensor_max;
                    row.worst_tensor = p.target;
                }
            }
        }
        row.rms = count > 0 ? std::sqrt(sq_sum / static_cast<double>(count)) : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<SweepEntry> sweep(const CheckpointFile& base, const CheckpointFile* ft,
                              const LoraAdapter* adapter, const MergeSpec& spec,
                              const std::filesystem::path& out_dir) {
    spec.validate();
    if (spec.mode == MergeMode::Interpolate && !ft) {
        throw InvalidMergeSpec("interpolate mode needs a fine-tuned checkpoint");
    }
    if (spec.mode == MergeMode::LoraRescale && !adapter) {
        throw InvalidMergeSpec("lora-rescale mode needs an adapter");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    MergeOptions mopts;
    mopts.output_dtype = spec.output_dtype;
    mopts.extrapolate = spec.extrapolate;
    mopts.jobs = spec.jobs;

    std::vector<SweepEntry> entries;
    for (double alpha : spec.alphas) {
        std::string name = spec.output_naming;
        name.replace(name.find("{alpha}"), 7, fmt_num(alpha));
        const auto path = out_dir / name;
        if (std::filesystem::exists(path) && !spec.overwrite) {
            throw OutputExists("refusing to overwrite " + path.string() + " (use --overwrite)");
        }
        const auto tensors = spec.mode == MergeMode::Interpolate
                                 ? interpolate(base, *ft, alpha, mopts)
                                 : apply_lora(base, *adapter, alpha, mopts);
        const auto bytes = tensorstore::write_checkpoint(tensors, base.index().metadata);
        write_file(path, bytes);
        SweepEntry entry;
        entry.alpha = alpha;
        entry.path = path.string();
        entry.sha256 = sha256_hex(bytes);
        entry.mode = std::string(merge_mode_name(spec.mode));
        entries.push_back(std::move(entry));
    }

    std::string manifest;
    for (const auto& e : entries) {
        nlohmann::json row = {
            {"alpha", e.alpha},
            {"path", e.path},
            {"sha256", e.sha256},
            {"mode", e.mode},
        };
        manifest += row.dump();
        manifest += '\n';
    }
    write_file(out_dir / "manifest.jsonl", manifest);
    return entries;
}

}  // namespace mergeval::merge
