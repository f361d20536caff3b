#pragma once

// Read-only analyses over a frozen model: the representational-collapse L∞
// probe, attention-sink/sign diagnostics, OV eigenvalue positivity, a
// per-step timing benchmark, and signed attention-map export as PPM images.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cog/errors.hpp"
#include "cog/model.hpp"
#include "cog/optimizer.hpp"
#include "cog/trainer.hpp"

namespace cog {

enum class ProbeTask { FindingZero, CountingOnes };

inline std::string to_string(ProbeTask t) {
    return t == ProbeTask::FindingZero ? "finding_zero" : "counting_ones";
}

inline ProbeTask probe_task_from_string(std::string s) {
    std::replace(s.begin(), s.end(), '-', '_');
    if (s == "finding_zero") return ProbeTask::FindingZero;
    if (s == "counting_ones") return ProbeTask::CountingOnes;
    throw config_error("unknown probe task '" + s +
                       "' (expected finding-zero or counting-ones)");
}

/// Minimally differing sequence pair over byte tokens '0'/'1'.
/// FindingZero: A = n+1 ones, B = a zero then n ones (equal lengths).
/// CountingOnes: A = n ones, B = n+1 ones (lengths differ by one).
inline std::pair<std::vector<int>, std::vector<int>> build_task_pair(ProbeTask task, int n) {
    if (n < 1) throw config_error("probe n must be >= 1");
    const int one = '1', zero = '0';
    std::vector<int> a, b;
    if (task == ProbeTask::FindingZero) {
        a.assign(static_cast<std::size_t>(n) + 1, one);
        b.assign(static_cast<std::size_t>(n) + 1, one);
        b[0] = zero;
    } else {
        a.assign(static_cast<std::size_t>(n), one);
        b.assign(static_cast<std::size_t>(n) + 1, one);
    }
    return {std::move(a), std::move(b)};
}

struct ProbeEntry {
    int n = 0;
    double linf_norm = 0.0;
    double normalized = 0.0;
};

struct ProbeReport {
    ProbeTask task = ProbeTask::FindingZero;
    std::string model_tag;
    int reference_n = 0;
    bool pre_norm_capture = false;
    /// CountingOnes is rebuilt from the task name alone; flagged so reports
    /// are honest about the construction being ours.
    bool reconstructed_construction = false;
    std::vector<ProbeEntry> entries;
};

inline nlohmann::json to_json(const ProbeReport& r) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : r.entries)
        entries.push_back(
            {{"n", e.n}, {"linf_norm", e.linf_norm}, {"normalized", e.normalized}});
    return nlohmann::json{{"task", to_string(r.task)},
                          {"model_tag", r.model_tag},
                          {"reference_n", r.reference_n},
                          {"pre_norm_capture", r.pre_norm_capture},
                          {"reconstructed_construction", r.reconstructed_construction},
                          {"entries", std::move(entries)}};
}

namespace detail {

/// Final-position representation: the row feeding next-token prediction,
/// after the final norm by default (pre-norm capture behind the flag).
template <typename Scalar>
Eigen::RowVectorXd final_position_rep(const Cogformer<Scalar>& m, std::span<const int> tokens,
                                      bool pre_norm) {
    const auto out = forward(m, tokens);
    const auto& h = pre_norm ? out.final_prenorm : out.final_hidden;
    return h.row(h.rows() - 1).template cast<double>();
}

}  // namespace detail

/// L∞ distance between the final-position representations of each task
/// pair, for every n, normalized by the value at reference_n.
template <typename Scalar>
ProbeReport collapse_probe(const Cogformer<Scalar>& model, ProbeTask task,
                           std::span<const int> n_list, int reference_n, bool pre_norm = false,
                           std::string model_tag = "") {
    if (std::find(n_list.begin(), n_list.end(), reference_n) == n_list.end())
        throw config_error("reference n " + std::to_string(reference_n) + " is not in the n list");
    ProbeReport report;
    report.task = task;
    report.model_tag = std::move(model_tag);
    report.reference_n = reference_n;
    report.pre_norm_capture = pre_norm;
    report.reconstructed_construction = (task == ProbeTask::CountingOnes);
    double ref_value = -1.0;
    for (int n : n_list) {
        if (n + 1 > model.config.context_len)
            throw config_error("probe n " + std::to_string(n) + " needs " + std::to_string(n + 1) +
                               " tokens, beyond context_len " +
                               std::to_string(model.config.context_len));
        const auto [a, b] = build_task_pair(task, n);
        const auto rep_a = detail::final_position_rep(model, a, pre_norm);
        const auto rep_b = detail::final_position_rep(model, b, pre_norm);
        const double linf = (rep_a - rep_b).cwiseAbs().maxCoeff();
        report.entries.push_back({n, linf, 0.0});
        if (n == reference_n) ref_value = linf;
    }
    if (ref_value == 0.0)
        throw numeric_error("collapse probe reference value is exactly zero; cannot normalize");
    for (auto& e : report.entries) e.normalized = e.linf_norm / ref_value;
    return report;
}

struct HeadDiagnostics {
    double sink_score = 0.0;     ///< mean over rows of |a(i,0)| / sum_j |a(i,j)|
    double neg_fraction = 0.0;   ///< fraction of unmasked entries below zero
    double row_sum_min = 0.0;    ///< extrema of signed row sums
    double row_sum_max = 0.0;
    int degenerate_row_count = 0;
    std::optional<double> ov_positivity;  ///< absent if the eigensolver fails
};

struct DiagnosticsReport {
    int n_tokens = 0;
    std::vector<std::vector<HeadDiagnostics>> layers;  ///< [layer][head]
};

inline nlohmann::json to_json(const DiagnosticsReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : r.layers) {
        nlohmann::json heads = nlohmann::json::array();
        for (const auto& h : layer) {
            nlohmann::json entry{{"sink_score", h.sink_score},
                                 {"neg_fraction", h.neg_fraction},
                                 {"row_sum_min", h.row_sum_min},
                                 {"row_sum_max", h.row_sum_max},
                                 {"degenerate_row_count", h.degenerate_row_count}};
            if (h.ov_positivity)
                entry["ov_positivity"] = *h.ov_positivity;
            else
                entry["ov_positivity"] = nullptr;
            heads.push_back(std::move(entry));
        }
        layers.push_back(std::move(heads));
    }
    return nlohmann::json{{"n_tokens", r.n_tokens}, {"layers", std::move(layers)}};
}

/// Sink/sign/row-sum statistics of one head's weight matrix under a causal
/// mask. Degenerate (all-zero) rows contribute zero to the sink mean and
/// are counted separately.
template <typename Scalar>
HeadDiagnostics head_stats(const Matrix<Scalar>& weights) {
    const Index n = weights.rows();
    check_shape(weights.cols() == n, "head_stats expects a square weight matrix");
    HeadDiagnostics d;
    double sink_sum = 0.0;
    std::int64_t negatives = 0;
    double rs_min = std::numeric_limits<double>::infinity();
    double rs_max = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
        double abs_sum = 0.0, signed_sum = 0.0;
        for (Index j = 0; j <= i; ++j) {
            const double w = static_cast<double>(weights(i, j));
            abs_sum += std::abs(w);
            signed_sum += w;
            if (w < 0.0) ++negatives;
        }
        if (abs_sum == 0.0)
            ++d.degenerate_row_count;
        else
            sink_sum += std::abs(static_cast<double>(weights(i, 0))) / abs_sum;
        rs_min = std::min(rs_min, signed_sum);
        rs_max = std::max(rs_max, signed_sum);
    }
    d.sink_score = sink_sum / static_cast<double>(n);
    d.neg_fraction =
        static_cast<double>(negatives) / (static_cast<double>(n) * static_cast<double>(n + 1) / 2.0);
    d.row_sum_min = rs_min;
    d.row_sum_max = rs_max;
    return d;
}

/// Eigenvalue positivity of the composed value-output map M = w_v_head ·
/// w_o_head: sum of real parts over sum of magnitudes, in [-1, 1]; +1 means
/// pure copying, -1 pure deletion. Zero matrix maps to 0; solver failure to
/// nullopt.
template <typename Scalar>
std::optional<double> ov_positivity(const Matrix<Scalar>& w_v_head,
                                    const Matrix<Scalar>& w_o_head) {
    check_shape(w_v_head.cols() == w_o_head.rows() && w_v_head.rows() == w_o_head.cols(),
                "ov_positivity expects shapes d x d_head and d_head x d");
    const Eigen::MatrixXd m =
        (w_v_head.template cast<double>() * w_o_head.template cast<double>()).eval();
    Eigen::EigenSolver<Eigen::MatrixXd> solver(m, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) return std::nullopt;
    const auto& eig = solver.eigenvalues();
    double re_sum = 0.0, abs_sum = 0.0;
    for (Eigen::Index i = 0; i < eig.size(); ++i) {
        re_sum += eig[i].real();
        abs_sum += std::abs(eig[i]);
    }
    if (abs_sum == 0.0) return 0.0;
    return re_sum / abs_sum;
}

/// Per-head attention statistics plus OV positivity over one text prompt
/// (truncated to the context window).
template <typename Scalar>
DiagnosticsReport attn_diagnostics(const Cogformer<Scalar>& model, std::string_view text) {
    std::vector<int> tokens = tokenize_bytes(text);
    if (tokens.empty()) throw config_error("diagnose: text is empty");
    if (static_cast<Index>(tokens.size()) > model.config.context_len)
        tokens.resize(static_cast<std::size_t>(model.config.context_len));
    ForwardOptions opts;
    opts.capture_attention = true;
    const auto out = forward(model, tokens, opts);

    const Index dh = model.config.d_model / model.config.n_heads;
    DiagnosticsReport report;
    report.n_tokens = static_cast<int>(tokens.size());
    report.layers.resize(model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& attn = model.layers[l].attn;
        for (int h = 0; h < model.config.n_heads; ++h) {
            HeadDiagnostics d = head_stats(out.attention[l][static_cast<std::size_t>(h)].weights);
            d.ov_positivity =
                ov_positivity<Scalar>(attn.w_v.middleCols(h * dh, dh).eval(),
                                      attn.w_o.middleRows(h * dh, dh).eval());
            report.layers[l].push_back(std::move(d));
        }
    }
    return report;
}

struct BenchEntry {
    int len = 0;
    double softmax_ms_per_step = 0.0;
    double cog_ms_per_step = 0.0;
    double ratio = 0.0;  ///< cog / softmax
};

struct BenchReport {
    int reps = 0;
    std::vector<BenchEntry> entries;
};

inline nlohmann::json to_json(const BenchReport& r) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : r.entries)
        entries.push_back({{"len", e.len},
                           {"softmax_ms_per_step", e.softmax_ms_per_step},
                           {"cog_ms_per_step", e.cog_ms_per_step},
                           {"ratio", e.ratio}});
    return nlohmann::json{{"reps", r.reps}, {"entries", std::move(entries)}};
}

namespace detail {

/// Median wall time of a full training step (forward, backward, clip,
/// optimizer update) on one random sequence, after one untimed warmup step.
template <typename Scalar>
double median_step_ms(const ModelConfig& cfg, int reps) {
    Cogformer<Scalar> model = init_params<Scalar>(cfg);
    OptimState<Scalar> optim = OptimState<Scalar>::zero_like(model);
    Cogformer<Scalar> grads = zeros_like(model);
    auto grad_refs = param_refs(grads);
    TrainConfig tc;
    std::vector<int> tokens(static_cast<std::size_t>(cfg.context_len));
    const Rng rng{cfg.seed, stream_of("bench_tokens")};
    for (std::size_t i = 0; i < tokens.size(); ++i)
        tokens[i] = static_cast<int>(rng_bits(rng, i) % static_cast<std::uint64_t>(cfg.vocab_size));

    using clock = std::chrono::steady_clock;
    std::vector<double> times;
    for (int r = 0; r < reps + 1; ++r) {
        const auto t0 = clock::now();
        for (auto& ref : grad_refs) ref.tensor->setZero();
        loss_and_grads(model, tokens, grads);
        clip_grad_norm(grads, tc.clip_norm);
        adamw_step(model, grads, optim, lr_at(0, tc), tc);
        const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        if (r > 0) times.push_back(ms);  // first iteration is warmup
    }
    std::sort(times.begin(), times.end());
    const std::size_t mid = times.size() / 2;
    return times.size() % 2 == 1 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

}  // namespace detail

/// Times one training step at each sequence length for an all-softmax model
/// and its signed-attention twin (first/last layers softmax). Each length
/// runs with context_len set to that length so the sequence fills the
/// window.
template <typename Scalar>
BenchReport timing_bench(const ModelConfig& base, std::span<const int> lengths, int reps) {
    if (reps < 3) throw config_error("bench: reps must be >= 3");
    BenchReport report;
    report.reps = reps;
    for (int len : lengths) {
        if (len < 2) throw config_error("bench: lengths must be >= 2");
        ModelConfig cfg = base;
        cfg.context_len = len;
        cfg.validate();
        cfg.activation_policy = ActivationPolicy::AllSoftmax;
        const double soft_ms = detail::median_step_ms<Scalar>(cfg, reps);
        cfg.activation_policy = ActivationPolicy::CogExceptFirstAndLast;
        const double cog_ms = detail::median_step_ms<Scalar>(cfg, reps);
        report.entries.push_back({len, soft_ms, cog_ms, cog_ms / soft_ms});
    }
    return report;
}

namespace detail {

/// Signed weight to RGB: +1 is pure red, -1 pure blue, 0 white, linear in
/// between; masked (zero) cells are white.
inline std::array<unsigned char, 3> weight_to_rgb(double w) {
    w = std::clamp(w, -1.0, 1.0);
    const auto fade = [](double x) {
        return static_cast<unsigned char>(std::lround(255.0 * (1.0 - x)));
    };
    if (w > 0.0) return {255, fade(w), fade(w)};
    if (w < 0.0) return {fade(-w), fade(-w), 255};
    return {255, 255, 255};
}

}  // namespace detail

/// One binary PPM (P6) per head, n x n pixels, named layer{L}_head{H}.ppm.
template <typename Scalar>
std::vector<std::filesystem::path> export_attention_maps(const Cogformer<Scalar>& model,
                                                         std::string_view text,
                                                         const std::filesystem::path& out_dir) {
    std::vector<int> tokens = tokenize_bytes(text);
    if (tokens.empty()) throw config_error("export-attn: text is empty");
    if (static_cast<Index>(tokens.size()) > model.config.context_len)
        tokens.resize(static_cast<std::size_t>(model.config.context_len));
    ForwardOptions opts;
    opts.capture_attention = true;
    const auto out = forward(model, tokens, opts);
    std::filesystem::create_directories(out_dir);

    const auto n = static_cast<Index>(tokens.size());
    std::vector<std::filesystem::path> written;
    for (std::size_t l = 0; l < out.attention.size(); ++l) {
        for (std::size_t h = 0; h < out.attention[l].size(); ++h) {
            const auto& w = out.attention[l][h].weights;
            const auto file =
                out_dir / ("layer" + std::to_string(l) + "_head" + std::to_string(h) + ".ppm");
            std::ofstream img(file, std::ios::binary | std::ios::trunc);
            if (!img) throw config_error("cannot write attention map: " + file.string());
            img << "P6\n" << n << ' ' << n << "\n255\n";
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < n; ++j) {
                    const auto rgb = detail::weight_to_rgb(static_cast<double>(w(i, j)));
                    img.write(reinterpret_cast<const char*>(rgb.data()), 3);
                }
            if (!img) throw config_error("failed writing attention map: " + file.string());
            written.push_back(file);
        }
    }
    return written;
}

}  // namespace cog
