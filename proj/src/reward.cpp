#include "dcpo/reward.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "dcpo/rng.hpp"

namespace dcpo {

std::string to_string(FormatRule rule) {
    return rule == FormatRule::SepEnd ? "sep-end" : "bare";
}

FormatRule format_rule_from(const std::string& name) {
    if (name == "sep-end") return FormatRule::SepEnd;
    if (name == "bare") return FormatRule::Bare;
    throw std::invalid_argument("unknown format rule: " + name);
}

std::uint64_t TaskInstance::prompt_id() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto absorb = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xffULL;
            h *= 0x100000001b3ULL;
        }
    };
    absorb(prompt.size());
    for (int tok : prompt) absorb(static_cast<std::uint64_t>(static_cast<std::int64_t>(tok)));
    return h;
}

namespace {

// Answer span under the task's format rule, or nullopt-like failure flag.
struct Extraction {
    bool format_ok = false;
    std::vector<int> answer;
};

Extraction extract_answer(FormatRule rule, std::span<const int> response, const Vocab& vocab) {
    Extraction out;
    if (rule == FormatRule::Bare) {
        out.format_ok = true;
        for (int tok : response) {
            if (tok == Vocab::kEnd) break;
            out.answer.push_back(tok);
        }
        return out;
    }
    // sep-end: terminator present, exactly one separator.
    if (response.empty() || response.back() != Vocab::kEnd) return out;
    std::size_t sep_count = 0;
    std::size_t sep_pos = 0;
    for (std::size_t t = 0; t < response.size(); ++t) {
        if (response[t] == Vocab::kSep) {
            ++sep_count;
            sep_pos = t;
        }
    }
    if (sep_count != 1) return out;
    out.format_ok = true;
    for (std::size_t t = sep_pos + 1; t + 1 < response.size(); ++t)
        out.answer.push_back(response[t]);
    (void)vocab;
    return out;
}

}  // namespace

std::string canonical_int(const std::string& digits) {
    std::size_t start = 0;
    while (start + 1 < digits.size() && digits[start] == '0') ++start;
    std::string out = digits.substr(start);
    if (out.empty()) out = "0";
    return out;
}

bool is_equivalent(const TaskInstance& task, std::span<const int> answer_tokens,
                   const Vocab& vocab) {
    if (task.kind == AnswerKind::TokenSeq) {
        return std::equal(answer_tokens.begin(), answer_tokens.end(),
                          task.seq_answer.begin(), task.seq_answer.end());
    }
    if (answer_tokens.empty()) return false;
    std::string digits;
    for (int tok : answer_tokens) {
        if (!vocab.is_digit(tok)) return false;
        digits.push_back(static_cast<char>('0' + vocab.digit_value(tok)));
    }
    return canonical_int(digits) == canonical_int(std::to_string(task.int_answer));
}

Verdict score_response(const TaskInstance& task, std::span<const int> response,
                       const Vocab& vocab) {
    Verdict v;
    const Extraction ex = extract_answer(task.rule, response, vocab);
    v.format_ok = ex.format_ok;
    if (!v.format_ok) {
        v.answer_ok = false;
        v.reward = -1;
        return v;
    }
    v.answer_ok = is_equivalent(task, ex.answer, vocab);
    v.reward = v.answer_ok ? 1 : 0;
    return v;
}

std::vector<TaskInstance> generate_tasks(const TaskGenConfig& cfg) {
    if (cfg.count <= 0) throw std::invalid_argument("task count must be positive");
    if (cfg.vocab_size < Vocab::kDigit0 + 10)
        throw std::invalid_argument("task generation needs all ten digit tokens");
    if (cfg.mod_min < 2 || cfg.mod_max > 10 || cfg.mod_min > cfg.mod_max)
        throw std::invalid_argument("modulus range must lie within [2, 10]");
    if (cfg.copy_fraction < 0.0 || cfg.copy_fraction > 1.0)
        throw std::invalid_argument("copy_fraction must lie in [0, 1]");

    const Vocab vocab{cfg.vocab_size};
    Rng rng(mix_seed(cfg.seed, 0x7a5c5ULL));
    std::vector<TaskInstance> tasks;
    std::unordered_set<std::uint64_t> seen;
    const int copy_count = static_cast<int>(cfg.copy_fraction * cfg.count + 0.5);

    int attempts = 0;
    const int max_attempts = cfg.count * 1000;
    while (static_cast<int>(tasks.size()) < cfg.count) {
        if (++attempts > max_attempts)
            throw std::runtime_error("task generation could not find enough distinct prompts");
        TaskInstance task;
        task.rule = FormatRule::SepEnd;
        const bool make_copy = static_cast<int>(tasks.size()) < copy_count;
        if (make_copy) {
            // Copy prompts are length 4..6 so they never collide with the
            // length-3 modular prompts.
            const int len = cfg.copy_prompt_min +
                            static_cast<int>(rng.uniform_int(
                                static_cast<std::uint64_t>(cfg.copy_prompt_max - cfg.copy_prompt_min + 1)));
            task.prompt.resize(len);
            for (int& tok : task.prompt)
                tok = vocab.digit_token(static_cast<int>(rng.uniform_int(10)));
            task.kind = AnswerKind::TokenSeq;
            task.seq_answer = {task.prompt.back()};
        } else {
            const int x = static_cast<int>(rng.uniform_int(10));
            const int y = static_cast<int>(rng.uniform_int(10));
            const int m = cfg.mod_min +
                          static_cast<int>(rng.uniform_int(
                              static_cast<std::uint64_t>(cfg.mod_max - cfg.mod_min + 1)));
            task.prompt = {vocab.digit_token(x), vocab.digit_token(y), vocab.digit_token(m)};
            task.kind = AnswerKind::Integer;
            task.int_answer = (x + y) % m;
            if (cfg.label_noise > 0.0 && rng.uniform() < cfg.label_noise) {
                // Mislabel with a different value from the answer range.
                const long long wrong =
                    (task.int_answer + 1 + static_cast<long long>(rng.uniform_int(
                                               static_cast<std::uint64_t>(m - 1)))) %
                    m;
                task.int_answer = wrong;
            }
        }
        if (seen.insert(task.prompt_id()).second) tasks.push_back(std::move(task));
    }
    return tasks;
}

void save_tasks(const std::filesystem::path& path, std::span<const TaskInstance> tasks,
                std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open task file for writing: " + path.string());
    out << "# dcpo-tasks v1 seed=" << seed << "\n";
    for (const auto& task : tasks) {
        for (std::size_t i = 0; i < task.prompt.size(); ++i) {
            if (i) out << ' ';
            out << task.prompt[i];
        }
        out << '\t';
        if (task.kind == AnswerKind::Integer) {
            out << "int:" << task.int_answer;
        } else {
            out << "seq:";
            for (std::size_t i = 0; i < task.seq_answer.size(); ++i) {
                if (i) out << ' ';
                out << task.seq_answer[i];
            }
        }
        out << '\t' << to_string(task.rule) << '\n';
    }
    if (!out) throw std::runtime_error("failed writing task file: " + path.string());
}

namespace {

std::vector<int> parse_token_list(const std::string& text) {
    std::vector<int> out;
    std::istringstream in(text);
    int tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

}  // namespace

std::vector<TaskInstance> load_tasks(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open task file: " + path.string());
    std::vector<TaskInstance> tasks;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string prompt_field, answer_field, rule_field;
        if (!std::getline(fields, prompt_field, '\t') ||
            !std::getline(fields, answer_field, '\t') ||
            !std::getline(fields, rule_field)) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected three tab-separated fields");
        }
        TaskInstance task;
        task.prompt = parse_token_list(prompt_field);
        task.rule = format_rule_from(rule_field);
        if (answer_field.rfind("int:", 0) == 0) {
            task.kind = AnswerKind::Integer;
            task.int_answer = std::stoll(answer_field.substr(4));
        } else if (answer_field.rfind("seq:", 0) == 0) {
            task.kind = AnswerKind::TokenSeq;
            task.seq_answer = parse_token_list(answer_field.substr(4));
        } else {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": answer field must start with int: or seq:");
        }
        if (task.prompt.empty())
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": empty prompt");
        tasks.push_back(std::move(task));
    }
    return tasks;
}

}  // namespace dcpo
