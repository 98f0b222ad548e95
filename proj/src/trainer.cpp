#include "dcpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dcpo/metrics.hpp"

namespace dcpo {

namespace {

constexpr std::uint64_t kGenStream = 0x67656eULL;    // generation
constexpr std::uint64_t kShuffleStream = 0x736866ULL;
constexpr std::uint64_t kEvalStream = 0x6576ULL;

}  // namespace

std::string to_string(Method method) {
    switch (method) {
        case Method::Grpo: return "grpo";
        case Method::Dapo: return "dapo";
        case Method::Gspo: return "gspo";
        case Method::Dcpo: return "dcpo";
    }
    return "unknown";
}

Method method_from(const std::string& name) {
    if (name == "grpo") return Method::Grpo;
    if (name == "dapo") return Method::Dapo;
    if (name == "gspo") return Method::Gspo;
    if (name == "dcpo") return Method::Dcpo;
    throw std::invalid_argument("unknown method: " + name);
}

LossMode loss_mode_of(Method method) {
    switch (method) {
        case Method::Grpo: return LossMode::Grpo;
        case Method::Dapo: return LossMode::Dapo;
        case Method::Gspo: return LossMode::Gspo;
        case Method::Dcpo: return LossMode::Dcpo;
    }
    throw std::invalid_argument("unknown method");
}

TrainConfig TrainConfig::defaults_for(Method method) {
    TrainConfig cfg;
    cfg.method = method;
    switch (method) {
        case Method::Grpo:
            cfg.clip = ClipConfig::fixed_symmetric(0.2);
            break;
        case Method::Dapo:
            cfg.clip = ClipConfig::fixed_asymmetric(0.2, 0.28);
            break;
        case Method::Gspo:
            cfg.clip = ClipConfig::sequence_level(3e-4, 4e-4);
            break;
        case Method::Dcpo:
            cfg.clip = ClipConfig::dynamic_adaptive(0.16, 0.2, 10.0);
            break;
    }
    return cfg;
}

void TrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("steps must be non-negative");
    if (group_size < 2) throw std::invalid_argument("group size must be at least 2");
    if (gen_batch < 1 || mini_batch < 1)
        throw std::invalid_argument("batch sizes must be positive");
    if (gen_batch % mini_batch != 0)
        throw std::invalid_argument("mini_batch must divide gen_batch");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
    if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
    if (eval_cadence < 1) throw std::invalid_argument("eval cadence must be positive");
    if (eval_k < 1) throw std::invalid_argument("eval_k must be at least 1");
    if (dapo_resample_factor < 0)
        throw std::invalid_argument("resample factor must be non-negative");
    clip.validate();

    const ClipMode expected = [this] {
        switch (method) {
            case Method::Grpo: return ClipMode::FixedSymmetric;
            case Method::Dapo: return ClipMode::FixedAsymmetric;
            case Method::Gspo: return ClipMode::SequenceLevel;
            case Method::Dcpo: return ClipMode::DynamicAdaptive;
        }
        return ClipMode::DynamicAdaptive;
    }();
    if (clip.mode != expected)
        throw std::invalid_argument("clip mode does not match the training method");
}

std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

using nlohmann::json;

std::string config_to_json(const TrainConfig& cfg) {
    json j;
    j["method"] = to_string(cfg.method);
    j["seed"] = cfg.seed;
    j["steps"] = cfg.steps;
    j["group_size"] = cfg.group_size;
    j["gen_batch"] = cfg.gen_batch;
    j["mini_batch"] = cfg.mini_batch;
    j["learning_rate"] = cfg.learning_rate;
    j["scale_lr_per_method"] = cfg.scale_lr_per_method;
    j["beta"] = cfg.beta;
    j["eval_cadence"] = cfg.eval_cadence;
    j["eval_k"] = cfg.eval_k;
    j["eval_count"] = cfg.eval_count;
    j["task_path"] = cfg.task_path;
    j["eval_task_path"] = cfg.eval_task_path;
    j["vocab_size"] = cfg.policy.vocab_size;
    j["context_order"] = cfg.policy.context_order;
    j["max_len"] = cfg.policy.max_len;
    j["init_logit_scale"] = cfg.init_logit_scale;
    j["clip.eps"] = cfg.clip.eps;
    j["clip.eps_low"] = cfg.clip.eps_low;
    j["clip.eps_high"] = cfg.clip.eps_high;
    j["clip.r_max"] = cfg.clip.r_max;
    j["tasks.count"] = cfg.tasks.count;
    j["tasks.copy_fraction"] = cfg.tasks.copy_fraction;
    j["tasks.label_noise"] = cfg.tasks.label_noise;
    j["dapo.resample_factor"] = cfg.dapo_resample_factor;
    return j.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& text) {
    static const std::vector<std::string> kKnownKeys = {
        "method",           "seed",
        "steps",            "group_size",
        "gen_batch",        "mini_batch",
        "learning_rate",    "scale_lr_per_method",
        "beta",             "eval_cadence",
        "eval_k",           "eval_count",
        "task_path",        "eval_task_path",
        "vocab_size",       "context_order",
        "max_len",          "init_logit_scale",
        "clip.eps",         "clip.eps_low",
        "clip.eps_high",    "clip.r_max",
        "tasks.count",      "tasks.copy_fraction",
        "tasks.label_noise", "dapo.resample_factor",
    };
    json j = json::parse(text);
    for (const auto& [key, value] : j.items()) {
        if (std::find(kKnownKeys.begin(), kKnownKeys.end(), key) == kKnownKeys.end())
            throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    const Method method =
        method_from(j.value("method", std::string("dcpo")));
    TrainConfig cfg = TrainConfig::defaults_for(method);

    auto get = [&j](const char* key, auto& slot) {
        if (j.contains(key)) slot = j.at(key).get<std::remove_reference_t<decltype(slot)>>();
    };
    get("seed", cfg.seed);
    get("steps", cfg.steps);
    get("group_size", cfg.group_size);
    get("gen_batch", cfg.gen_batch);
    get("mini_batch", cfg.mini_batch);
    get("learning_rate", cfg.learning_rate);
    get("scale_lr_per_method", cfg.scale_lr_per_method);
    get("beta", cfg.beta);
    get("eval_cadence", cfg.eval_cadence);
    get("eval_k", cfg.eval_k);
    get("eval_count", cfg.eval_count);
    get("task_path", cfg.task_path);
    get("eval_task_path", cfg.eval_task_path);
    get("vocab_size", cfg.policy.vocab_size);
    get("context_order", cfg.policy.context_order);
    get("max_len", cfg.policy.max_len);
    get("init_logit_scale", cfg.init_logit_scale);
    get("clip.eps", cfg.clip.eps);
    get("clip.eps_low", cfg.clip.eps_low);
    get("clip.eps_high", cfg.clip.eps_high);
    get("clip.r_max", cfg.clip.r_max);
    get("tasks.count", cfg.tasks.count);
    get("tasks.copy_fraction", cfg.tasks.copy_fraction);
    get("tasks.label_noise", cfg.tasks.label_noise);
    get("dapo.resample_factor", cfg.dapo_resample_factor);

    cfg.tasks.vocab_size = cfg.policy.vocab_size;
    cfg.tasks.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

namespace {

void shuffle_order(RunState& state, std::uint64_t run_seed) {
    Rng rng(mix_seed(run_seed, kShuffleStream, static_cast<std::uint64_t>(state.epoch)));
    auto& order = state.order;
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_int(i);
        std::swap(order[i - 1], order[j]);
    }
}

const TaskInstance& next_task(RunState& state, const TrainConfig& cfg) {
    if (state.cursor >= state.order.size()) {
        ++state.epoch;
        state.cursor = 0;
        shuffle_order(state, cfg.seed);
    }
    return state.tasks[state.order[state.cursor++]];
}

int correct_count(const RolloutGroup& group) {
    int n = 0;
    for (const auto& resp : group.responses)
        if (resp.reward == 1.0) ++n;
    return n;
}

}  // namespace

RunState init_run_state(const TrainConfig& cfg) {
    cfg.validate();
    RunState state{TabularPolicy(cfg.policy), TabularPolicy(cfg.policy), {}, {}, {}, {}, 0, 0, 0,
                   0.0, 0.0};
    if (cfg.init_logit_scale != 0.0) {
        state.policy.add_uniform_noise(cfg.init_logit_scale, cfg.seed);
    }
    state.ref_policy = state.policy;

    if (!cfg.task_path.empty()) {
        state.tasks = load_tasks(cfg.task_path);
    } else {
        TaskGenConfig gen = cfg.tasks;
        gen.vocab_size = cfg.policy.vocab_size;
        gen.seed = cfg.seed;
        state.tasks = generate_tasks(gen);
    }
    if (state.tasks.empty()) throw std::invalid_argument("task set is empty");

    if (!cfg.eval_task_path.empty()) {
        state.eval_tasks = load_tasks(cfg.eval_task_path);
    } else {
        TaskGenConfig gen = cfg.tasks;
        gen.vocab_size = cfg.policy.vocab_size;
        gen.count = cfg.eval_count;
        gen.seed = mix_seed(cfg.seed, 0xe7a1ULL);
        state.eval_tasks = generate_tasks(gen);
    }
    if (state.eval_tasks.empty()) throw std::invalid_argument("eval task set is empty");

    state.order.resize(state.tasks.size());
    for (std::size_t i = 0; i < state.order.size(); ++i) state.order[i] = i;
    shuffle_order(state, cfg.seed);
    return state;
}

DapoFilterOutcome dapo_filter(std::vector<RolloutGroup> groups, int group_size,
                              int target_batch, std::int64_t resample_budget,
                              const std::function<std::optional<RolloutGroup>()>& regenerate) {
    DapoFilterOutcome out;
    out.groups_generated = static_cast<std::int64_t>(groups.size());
    for (auto& group : groups) {
        const int correct = correct_count(group);
        if (correct > 0 && correct < group_size) out.kept.push_back(std::move(group));
    }
    std::int64_t used = 0;
    while (static_cast<int>(out.kept.size()) < target_batch && used < resample_budget) {
        std::optional<RolloutGroup> fresh = regenerate();
        if (!fresh) break;
        ++used;
        ++out.groups_generated;
        const int correct = correct_count(*fresh);
        if (correct > 0 && correct < group_size) out.kept.push_back(std::move(*fresh));
    }
    out.groups_discarded = out.groups_generated - static_cast<std::int64_t>(out.kept.size());
    return out;
}

std::pair<double, double> evaluate(const TabularPolicy& policy,
                                   std::span<const TaskInstance> tasks, int k,
                                   std::uint64_t seed) {
    if (tasks.empty()) throw std::invalid_argument("evaluation requires a non-empty task set");
    if (k < 1) throw std::invalid_argument("evaluation requires k >= 1");
    const Vocab vocab{policy.vocab_size()};

    std::int64_t greedy_hits = 0;
    std::int64_t sample_hits = 0;
    for (std::size_t idx = 0; idx < tasks.size(); ++idx) {
        const TaskInstance& task = tasks[idx];
        const std::vector<int> greedy = greedy_decode(policy, task.prompt);
        if (score_response(task, greedy, vocab).reward == 1) ++greedy_hits;

        const std::vector<Response> samples = sample_group(
            policy, task.prompt, k, 1.0, 1.0, mix_seed(seed, kEvalStream, idx));
        for (const auto& resp : samples)
            if (score_response(task, resp.tokens, vocab).reward == 1) ++sample_hits;
    }
    const double n = static_cast<double>(tasks.size());
    return {static_cast<double>(greedy_hits) / n,
            static_cast<double>(sample_hits) / (n * static_cast<double>(k))};
}

namespace {

struct GeneratedGroup {
    RolloutGroup rollout;
    const TaskInstance* task = nullptr;
};

GeneratedGroup generate_scored_group(const TabularPolicy& snapshot, const TaskInstance& task,
                                     const TrainConfig& cfg, std::uint64_t slot_seed) {
    GeneratedGroup out;
    out.task = &task;
    out.rollout.prompt = task.prompt;
    out.rollout.prompt_id = task.prompt_id();
    out.rollout.responses =
        sample_group(snapshot, task.prompt, cfg.group_size, 1.0, 1.0, slot_seed);
    const Vocab vocab{cfg.policy.vocab_size};
    for (auto& resp : out.rollout.responses)
        resp.reward = score_response(task, resp.tokens, vocab).reward;
    return out;
}

void fill_logp_ref(const TabularPolicy& ref, RolloutGroup& group) {
    for (auto& resp : group.responses) {
        resp.logp_ref.resize(resp.tokens.size());
        for (std::size_t t = 0; t < resp.tokens.size(); ++t)
            resp.logp_ref[t] =
                ref.log_softmax_row(resp.ctx_keys[t])[static_cast<std::size_t>(resp.tokens[t])];
    }
}

}  // namespace

StepOutcome run_step(RunState& state, const TrainConfig& cfg) {
    const TabularPolicy snapshot = state.policy;  // generation + ratio denominator
    const int step_index = state.step + 1;
    std::uint64_t slot = 0;
    auto slot_seed = [&] {
        return mix_seed(cfg.seed, kGenStream,
                        mix_seed(static_cast<std::uint64_t>(step_index), slot++));
    };

    // Generation. Every generated group (kept or later discarded) advances
    // its prompt statistics.
    std::vector<GeneratedGroup> generated;
    generated.reserve(static_cast<std::size_t>(cfg.gen_batch));
    auto generate_next = [&]() -> GeneratedGroup {
        const TaskInstance& task = next_task(state, cfg);
        GeneratedGroup g = generate_scored_group(snapshot, task, cfg, slot_seed());
        std::vector<double> rewards;
        rewards.reserve(g.rollout.responses.size());
        for (const auto& resp : g.rollout.responses) rewards.push_back(resp.reward);
        auto& stats = state.prompt_stats[g.rollout.prompt_id];
        stats.prompt_id = g.rollout.prompt_id;
        stats = update_stats(stats, rewards);
        stats.prompt_id = g.rollout.prompt_id;
        return g;
    };
    for (int i = 0; i < cfg.gen_batch; ++i) generated.push_back(generate_next());

    StepOutcome outcome;
    StepReport& report = outcome.report;
    report.step = step_index;
    report.entropy = [&] {
        std::vector<RolloutGroup> view;
        view.reserve(generated.size());
        for (const auto& g : generated) view.push_back(g.rollout);
        return batch_entropy(snapshot, view);
    }();

    std::vector<double> all_advantages;  // every generated response, for RUR
    std::int64_t reward_count = 0;
    double reward_sum = 0.0;
    auto absorb_rewards = [&](const RolloutGroup& rollout) {
        for (const auto& resp : rollout.responses) {
            reward_sum += resp.reward;
            ++reward_count;
        }
    };
    for (const auto& g : generated) absorb_rewards(g.rollout);

    // Advantages. Baselines standardize within the step; the SAS pipeline
    // blends with cumulative statistics (which already include this group).
    auto assign_advantages = [&](RolloutGroup& rollout) {
        std::vector<double> rewards;
        rewards.reserve(rollout.responses.size());
        for (const auto& resp : rollout.responses) rewards.push_back(resp.reward);
        std::vector<double> adv;
        if (cfg.method == Method::Dcpo) {
            const PromptStats& stats = state.prompt_stats.at(rollout.prompt_id);
            const std::vector<double> a_new = step_standardize(rewards);
            const std::vector<double> a_total = cumulative_standardize(rewards, stats);
            adv = smooth_and_select(a_new, a_total, stats.i).selected;
        } else {
            adv = step_standardize(rewards);
        }
        for (std::size_t j = 0; j < rollout.responses.size(); ++j) {
            rollout.responses[j].advantage = adv[j];
            all_advantages.push_back(adv[j]);
        }
    };

    std::vector<RolloutGroup> batch;
    std::int64_t groups_generated = static_cast<std::int64_t>(generated.size());
    std::int64_t groups_discarded = 0;
    if (cfg.method == Method::Dapo) {
        std::vector<RolloutGroup> rollouts;
        rollouts.reserve(generated.size());
        for (auto& g : generated) rollouts.push_back(std::move(g.rollout));
        const std::int64_t budget =
            static_cast<std::int64_t>(cfg.dapo_resample_factor) * cfg.gen_batch;
        DapoFilterOutcome filtered = dapo_filter(
            std::move(rollouts), cfg.group_size, cfg.gen_batch, budget,
            [&]() -> std::optional<RolloutGroup> {
                GeneratedGroup g = generate_next();
                absorb_rewards(g.rollout);
                return std::move(g.rollout);
            });
        groups_generated = filtered.groups_generated;
        groups_discarded = filtered.groups_discarded;
        batch = std::move(filtered.kept);
        for (auto& rollout : batch) assign_advantages(rollout);
        // Discarded responses never reach the update; they count as
        // zero-advantage in the utilization accounting.
        for (std::int64_t i = 0; i < groups_discarded * cfg.group_size; ++i)
            all_advantages.push_back(0.0);
    } else {
        batch.reserve(generated.size());
        for (auto& g : generated) batch.push_back(std::move(g.rollout));
        for (auto& rollout : batch) assign_advantages(rollout);
    }

    report.responses_generated = groups_generated * cfg.group_size;
    report.responses_discarded = groups_discarded * cfg.group_size;
    report.mean_reward = reward_count > 0 ? reward_sum / static_cast<double>(reward_count) : 0.0;
    report.rur = all_advantages.empty() ? 0.0 : rur(all_advantages);

    if (cfg.method == Method::Grpo && cfg.beta > 0.0)
        for (auto& rollout : batch) fill_logp_ref(state.ref_policy, rollout);

    if (batch.empty()) {
        // DAPO exhausted the refill budget; report and skip the update.
        outcome.skipped = true;
        report.avg1 = state.last_avg1;
        report.avgk = state.last_avgk;
        ++state.step;
        return outcome;
    }

    // One learning-rate unit means the same per-response step for every
    // objective: the baselines average over mini_batch*G responses where the
    // only-token-mean sums them, so their gradients are rescaled to the
    // common sum-of-response-means magnitude.
    const double lr =
        cfg.scale_lr_per_method && cfg.method != Method::Dcpo
            ? cfg.learning_rate * static_cast<double>(cfg.mini_batch) *
                  static_cast<double>(cfg.group_size)
            : cfg.learning_rate;
    const LossMode mode = loss_mode_of(cfg.method);
    const double beta = cfg.method == Method::Grpo ? cfg.beta : 0.0;

    std::vector<MicrobatchClipCount> clip_counts;
    double objective_sum = 0.0;
    std::size_t n_microbatches = 0;
    for (std::size_t offset = 0; offset < batch.size(); offset += cfg.mini_batch) {
        const std::size_t count =
            std::min<std::size_t>(cfg.mini_batch, batch.size() - offset);
        std::span<RolloutGroup> mb(batch.data() + offset, count);
        GradResult result = surrogate_grad(state.policy, mb, mode, cfg.clip, beta);
        state.policy.apply_gradient(result.grad, lr);
        clip_counts.push_back({result.surrogate.clipped_tokens, result.surrogate.total_tokens});
        report.clipped_tokens += result.surrogate.clipped_tokens;
        report.total_tokens += result.surrogate.total_tokens;
        objective_sum += result.surrogate.objective;
        ++n_microbatches;
    }
    report.objective = objective_sum / static_cast<double>(n_microbatches);
    report.tcr = tcr(clip_counts);

    ++state.step;
    if (state.step % cfg.eval_cadence == 0) {
        const auto [avg1, avgk] = evaluate(state.policy, state.eval_tasks, cfg.eval_k,
                                           mix_seed(cfg.seed, kEvalStream,
                                                    static_cast<std::uint64_t>(state.step)));
        state.last_avg1 = avg1;
        state.last_avgk = avgk;
        outcome.evaluated = true;
    }
    report.avg1 = state.last_avg1;
    report.avgk = state.last_avgk;
    return outcome;
}

void save_prompt_stats(const std::filesystem::path& path,
                       const std::unordered_map<std::uint64_t, PromptStats>& stats) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open prompt-stats checkpoint: " + path.string());
    std::vector<std::uint64_t> ids;
    ids.reserve(stats.size());
    for (const auto& [id, s] : stats) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    out << "dcpo-prompt-stats v1\n" << ids.size() << '\n';
    for (std::uint64_t id : ids) {
        const PromptStats& s = stats.at(id);
        out << id << ' ' << s.i << ' ' << format_double(s.mu_new) << ' '
            << format_double(s.sigma_new) << ' ' << format_double(s.mu_old) << ' '
            << format_double(s.sigma_old) << ' ' << s.n_old << '\n';
    }
    if (!out) throw std::runtime_error("failed writing prompt-stats checkpoint");
}

std::unordered_map<std::uint64_t, PromptStats> load_prompt_stats(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open prompt-stats checkpoint: " + path.string());
    std::string header;
    std::getline(in, header);
    if (header != "dcpo-prompt-stats v1")
        throw std::runtime_error("unsupported prompt-stats header: " + header);
    std::size_t n = 0;
    in >> n;
    std::unordered_map<std::uint64_t, PromptStats> stats;
    for (std::size_t i = 0; i < n; ++i) {
        PromptStats s;
        if (!(in >> s.prompt_id >> s.i >> s.mu_new >> s.sigma_new >> s.mu_old >> s.sigma_old >>
              s.n_old))
            throw std::runtime_error("truncated prompt-stats checkpoint");
        stats[s.prompt_id] = s;
    }
    return stats;
}

namespace {

std::string timestamp_utc() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::filesystem::path unique_run_dir(const std::filesystem::path& root,
                                     const TrainConfig& cfg) {
    const std::string base = to_string(cfg.method) + "-seed" + std::to_string(cfg.seed);
    std::filesystem::path dir = root / base;
    for (int n = 1; std::filesystem::exists(dir); ++n)
        dir = root / (base + "-" + std::to_string(n));
    return dir;
}

std::string step_csv_row(const StepReport& r) {
    std::string row = std::to_string(r.step);
    auto add = [&row](const std::string& field) {
        row += ',';
        row += field;
    };
    add(format_double(r.objective));
    add(format_double(r.tcr));
    add(format_double(r.rur));
    add(format_double(r.entropy));
    add(format_double(r.mean_reward));
    add(format_double(r.avg1));
    add(format_double(r.avgk));
    add(std::to_string(r.clipped_tokens));
    add(std::to_string(r.total_tokens));
    add(std::to_string(r.responses_generated));
    add(std::to_string(r.responses_discarded));
    return row + "\n";
}

}  // namespace

std::filesystem::path train(const TrainConfig& cfg, const std::filesystem::path& out_root) {
    cfg.validate();
    std::filesystem::create_directories(out_root);
    const std::filesystem::path run_dir = unique_run_dir(out_root, cfg);
    std::filesystem::create_directories(run_dir);

    const std::string started = timestamp_utc();
    {
        std::ofstream out(run_dir / "config.json", std::ios::binary);
        out << config_to_json(cfg);
    }

    RunState state = init_run_state(cfg);
    if (cfg.task_path.empty()) save_tasks(run_dir / "tasks.tsv", state.tasks, cfg.seed);
    if (cfg.eval_task_path.empty())
        save_tasks(run_dir / "eval_tasks.tsv", state.eval_tasks, mix_seed(cfg.seed, 0xe7a1ULL));

    std::ofstream steps_csv(run_dir / "steps.csv", std::ios::binary);
    steps_csv << "step,objective,tcr,rur,entropy,mean_reward,avg1,avgk,"
                 "clipped_tokens,total_tokens,responses_generated,responses_discarded\n";
    std::ofstream eval_csv(run_dir / "eval.csv", std::ios::binary);
    eval_csv << "step,avg1,avgk\n";

    {
        const auto [avg1, avgk] =
            evaluate(state.policy, state.eval_tasks, cfg.eval_k, mix_seed(cfg.seed, kEvalStream, 0));
        state.last_avg1 = avg1;
        state.last_avgk = avgk;
        eval_csv << "0," << format_double(avg1) << ',' << format_double(avgk) << "\n";
    }

    for (int s = 0; s < cfg.steps; ++s) {
        const StepOutcome outcome = run_step(state, cfg);
        steps_csv << step_csv_row(outcome.report);
        steps_csv.flush();
        if (outcome.evaluated) {
            eval_csv << outcome.report.step << ',' << format_double(outcome.report.avg1) << ','
                     << format_double(outcome.report.avgk) << "\n";
            eval_csv.flush();
        }
    }

    state.policy.save(run_dir / "policy.ckpt");
    save_prompt_stats(run_dir / "prompt_stats.ckpt", state.prompt_stats);

    json manifest;
    manifest["version"] = "dcpo-sim 0.1.0";
    manifest["seed"] = cfg.seed;
    manifest["method"] = to_string(cfg.method);
    manifest["started_at"] = started;
    manifest["finished_at"] = timestamp_utc();
    manifest["config"] = json::parse(config_to_json(cfg));
    manifest["outputs"] = {"config.json", "steps.csv",   "eval.csv",
                           "policy.ckpt", "prompt_stats.ckpt"};
    {
        std::ofstream out(run_dir / "manifest.json", std::ios::binary);
        out << manifest.dump(2) << "\n";
    }
    if (!steps_csv || !eval_csv) throw std::runtime_error("failed writing run reports");
    return run_dir;
}

}  // namespace dcpo
