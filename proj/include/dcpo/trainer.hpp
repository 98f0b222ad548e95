#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcpo/advantage.hpp"
#include "dcpo/clipping.hpp"
#include "dcpo/policy_sim.hpp"
#include "dcpo/reward.hpp"
#include "dcpo/surrogate.hpp"

namespace dcpo {

enum class Method { Grpo, Dapo, Gspo, Dcpo };

std::string to_string(Method method);
Method method_from(const std::string& name);
LossMode loss_mode_of(Method method);

struct TrainConfig {
    Method method = Method::Dcpo;
    std::uint64_t seed = 1;
    int steps = 400;
    int group_size = 16;     // G
    int gen_batch = 64;      // prompts per generation step
    int mini_batch = 8;      // prompts per parameter update
    double learning_rate = 0.125;
    // The only-token-mean objective sums response means where the baselines
    // average over mini_batch*G responses. When set, baseline gradients are
    // rescaled by that factor so one unit of learning rate produces the same
    // per-response step for every method (the role the optimizer's
    // per-parameter normalization plays at full scale).
    bool scale_lr_per_method = true;
    double beta = 0.01;      // KL coefficient, GRPO only
    ClipConfig clip;         // mode is implied by the method
    int eval_cadence = 20;
    int eval_k = 4;
    int eval_count = 64;     // generated eval tasks when no file is given
    std::string task_path;       // empty -> generate tasks.count tasks
    std::string eval_task_path;  // empty -> generate eval_count tasks
    PolicyConfig policy;
    TaskGenConfig tasks;
    int dapo_resample_factor = 4;  // refill budget = factor * gen_batch
    double init_logit_scale = 0.0;

    void validate() const;
    static TrainConfig defaults_for(Method method);
};

std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

struct StepReport {
    int step = 0;
    double objective = 0.0;
    double tcr = 0.0;
    double rur = 0.0;       // percent
    double entropy = 0.0;   // nats
    double mean_reward = 0.0;
    double avg1 = 0.0;      // latest greedy accuracy
    double avgk = 0.0;      // latest sampled accuracy
    std::int64_t clipped_tokens = 0;
    std::int64_t total_tokens = 0;
    std::int64_t responses_generated = 0;
    std::int64_t responses_discarded = 0;
};

struct StepOutcome {
    StepReport report;
    bool skipped = false;    // DAPO exhausted its refill budget with nothing kept
    bool evaluated = false;  // report.avg1/avgk are fresh this step
};

struct RunState {
    TabularPolicy policy;
    TabularPolicy ref_policy;
    std::unordered_map<std::uint64_t, PromptStats> prompt_stats;
    std::vector<TaskInstance> tasks;
    std::vector<TaskInstance> eval_tasks;
    std::vector<std::size_t> order;  // epoch shuffle of task indices
    std::size_t cursor = 0;
    int epoch = 0;
    int step = 0;  // completed steps
    double last_avg1 = 0.0;
    double last_avgk = 0.0;
};

RunState init_run_state(const TrainConfig& cfg);

// One training step: snapshot, generate, score, (DAPO) filter, standardize,
// minibatched updates against the snapshot, report.
StepOutcome run_step(RunState& state, const TrainConfig& cfg);

struct DapoFilterOutcome {
    std::vector<RolloutGroup> kept;
    std::int64_t groups_generated = 0;  // initial batch plus refills
    std::int64_t groups_discarded = 0;
};

// Drops groups whose responses all share one correctness outcome
// (0 < #correct < G fails) and refills from `regenerate` until the target
// batch size or the resample budget is reached. Correctness is reward == 1.
DapoFilterOutcome dapo_filter(std::vector<RolloutGroup> groups, int group_size,
                              int target_batch, std::int64_t resample_budget,
                              const std::function<std::optional<RolloutGroup>()>& regenerate);

// (Avg@1, Avg@k): greedy accuracy and mean accuracy of k temperature-1
// samples per task. Throws std::invalid_argument on an empty task set.
std::pair<double, double> evaluate(const TabularPolicy& policy,
                                   std::span<const TaskInstance> tasks, int k,
                                   std::uint64_t seed);

// Full run: executes cfg.steps steps and persists config.json, steps.csv,
// eval.csv, tasks, checkpoints and manifest.json under a fresh directory in
// out_root. Returns the run directory.
std::filesystem::path train(const TrainConfig& cfg, const std::filesystem::path& out_root);

// Prompt statistics checkpoint (flat record per prompt id).
void save_prompt_stats(const std::filesystem::path& path,
                       const std::unordered_map<std::uint64_t, PromptStats>& stats);
std::unordered_map<std::uint64_t, PromptStats> load_prompt_stats(
    const std::filesystem::path& path);

// 17-significant-digit float formatting shared by every data file.
std::string format_double(double value);

}  // namespace dcpo
