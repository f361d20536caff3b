#pragma once

// Byte tokenizer and the deterministic training loop: contiguous
// context-length windows shuffled by a seeded per-epoch permutation, AdamW
// with warmup+cosine schedule and global-norm clipping, JSONL loss trace,
// periodic checkpoints. Batch selection is a pure function of the step
// index, so resuming from a checkpoint replays the exact uninterrupted run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cog/checkpoint.hpp"
#include "cog/errors.hpp"
#include "cog/model.hpp"
#include "cog/optimizer.hpp"
#include "cog/rng.hpp"

namespace cog {

/// One token per byte; token id = byte value.
inline std::vector<int> tokenize_bytes(std::string_view text) {
    std::vector<int> tokens(text.size());
    for (std::size_t i = 0; i < text.size(); ++i)
        tokens[i] = static_cast<unsigned char>(text[i]);
    return tokens;
}

inline std::string detokenize_bytes(std::span<const int> tokens) {
    std::string text;
    text.reserve(tokens.size());
    for (int t : tokens) {
        if (t < 0 || t > 255)
            throw std::invalid_argument("detokenize_bytes: token " + std::to_string(t) +
                                        " outside byte range");
        text.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return text;
}

struct TraceEntry {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

using LossTrace = std::vector<TraceEntry>;

inline nlohmann::json to_json(const TraceEntry& e) {
    return nlohmann::json{
        {"step", e.step}, {"loss", e.loss}, {"lr", e.lr}, {"wall_ms", e.wall_ms}};
}

namespace detail {

/// Maps a global sequence slot (step * seqs_per_step + j) to a corpus
/// window index. Windows are contiguous, non-overlapping context_len runs;
/// each epoch visits all of them once in a seeded shuffled order. Pure in
/// (seed, n_windows, slot), which is what makes resume exact.
class BatchSchedule {
public:
    BatchSchedule(std::uint64_t seed, std::int64_t n_windows)
        : seed_(seed), n_windows_(n_windows) {}

    std::int64_t window_at(std::int64_t slot) {
        const std::int64_t epoch = slot / n_windows_;
        const std::int64_t pos = slot % n_windows_;
        if (epoch != perm_epoch_) {
            Rng rng{seed_, stream_of("batch_epoch." + std::to_string(epoch))};
            perm_ = random_permutation(rng, static_cast<std::size_t>(n_windows_));
            perm_epoch_ = epoch;
        }
        return static_cast<std::int64_t>(perm_[static_cast<std::size_t>(pos)]);
    }

private:
    std::uint64_t seed_;
    std::int64_t n_windows_;
    std::vector<std::size_t> perm_;
    std::int64_t perm_epoch_ = -1;
};

}  // namespace detail

/// Runs steps [start_step, total_steps) over a pre-tokenized corpus.
/// Writes trace.jsonl and ckpt_<step>.cogckpt files into out_dir when it is
/// nonempty; returns the logged trace either way.
template <typename Scalar>
LossTrace train_on_tokens(Cogformer<Scalar>& model, OptimState<Scalar>& optim, int start_step,
                          const std::vector<int>& tokens, const TrainConfig& cfg,
                          const std::filesystem::path& out_dir = {}) {
    cfg.validate();
    model.config.validate();
    if (start_step < 0 || start_step > cfg.total_steps)
        throw config_error("train: start step " + std::to_string(start_step) +
                           " outside [0, total_steps]");
    const auto ctx = static_cast<std::int64_t>(model.config.context_len);
    const auto n_windows = static_cast<std::int64_t>(tokens.size()) / ctx;
    if (n_windows < 1)
        throw config_error("corpus has " + std::to_string(tokens.size()) +
                           " tokens, shorter than context_len " + std::to_string(ctx));
    const int seqs_per_step = static_cast<int>(std::max<std::int64_t>(1, cfg.batch_tokens / ctx));

    std::ofstream trace_out;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        trace_out.open(out_dir / "trace.jsonl",
                       start_step > 0 ? std::ios::app : std::ios::trunc);
        if (!trace_out)
            throw config_error("cannot open trace file in " + out_dir.string());
    }

    detail::BatchSchedule schedule(cfg.seed, n_windows);
    Cogformer<Scalar> grads = zeros_like(model);
    auto grad_refs = param_refs(grads);
    LossTrace trace;
    using clock = std::chrono::steady_clock;

    for (int step = start_step; step < cfg.total_steps; ++step) {
        const auto t0 = clock::now();
        for (auto& ref : grad_refs) ref.tensor->setZero();
        double loss_sum = 0.0;
        for (int j = 0; j < seqs_per_step; ++j) {
            const std::int64_t w =
                schedule.window_at(static_cast<std::int64_t>(step) * seqs_per_step + j);
            loss_sum += loss_and_grads(
                model, std::span<const int>(tokens.data() + w * ctx, static_cast<std::size_t>(ctx)),
                grads);
        }
        const double loss = loss_sum / seqs_per_step;
        if (!std::isfinite(loss))
            throw numeric_error("training loss is not finite at step " + std::to_string(step));
        if (seqs_per_step > 1) {
            const Scalar inv = Scalar(1) / static_cast<Scalar>(seqs_per_step);
            for (auto& ref : grad_refs) *ref.tensor *= inv;
        }
        clip_grad_norm(grads, cfg.clip_norm);
        const double lr = lr_at(step, cfg);
        adamw_step(model, grads, optim, lr, cfg);
        const double wall_ms =
            std::chrono::duration<double, std::milli>(clock::now() - t0).count();

        if (step % cfg.log_every == 0 || step == cfg.total_steps - 1) {
            const TraceEntry entry{step, loss, lr, wall_ms};
            trace.push_back(entry);
            if (trace_out) {
                trace_out << to_json(entry).dump() << '\n';
                trace_out.flush();
            }
        }
        if (!out_dir.empty() && ((step + 1) % cfg.ckpt_every == 0 || step == cfg.total_steps - 1))
            save_checkpoint(model, optim, step + 1, cfg,
                            out_dir / ("ckpt_" + std::to_string(step + 1) + ".cogckpt"));
    }
    return trace;
}

/// Reads a corpus file as raw bytes and trains on it.
template <typename Scalar>
LossTrace train(Cogformer<Scalar>& model, OptimState<Scalar>& optim, int start_step,
                const std::filesystem::path& corpus_path, const TrainConfig& cfg,
                const std::filesystem::path& out_dir = {}) {
    std::ifstream in(corpus_path, std::ios::binary);
    if (!in) throw config_error("cannot open corpus: " + corpus_path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return train_on_tokens(model, optim, start_step, tokenize_bytes(text), cfg, out_dir);
}

}  // namespace cog
