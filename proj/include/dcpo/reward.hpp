#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dcpo {

// Token layout shared by the task generator and the policy simulator.
// Token 0 ends a response, token 1 separates reasoning from the answer,
// tokens 2..11 encode the digits 0..9. Vocabularies smaller than 12 carry
// fewer digits.
struct Vocab {
    int size = 12;

    static constexpr int kEnd = 0;
    static constexpr int kSep = 1;
    static constexpr int kDigit0 = 2;

    int digits() const { return size - kDigit0; }
    bool is_digit(int tok) const { return tok >= kDigit0 && tok < size; }
    int digit_value(int tok) const { return tok - kDigit0; }
    int digit_token(int value) const { return value + kDigit0; }
};

enum class AnswerKind { Integer, TokenSeq };

// "sep-end": well-formatted responses end with the end token and contain
// exactly one separator; the answer is the span between them. "bare": the
// whole response up to the first end token is the answer and the format
// check always passes.
enum class FormatRule { SepEnd, Bare };

std::string to_string(FormatRule rule);
FormatRule format_rule_from(const std::string& name);

struct TaskInstance {
    std::vector<int> prompt;
    AnswerKind kind = AnswerKind::Integer;
    long long int_answer = 0;
    std::vector<int> seq_answer;
    FormatRule rule = FormatRule::SepEnd;

    std::uint64_t prompt_id() const;  // FNV-1a over the prompt tokens
};

struct Verdict {
    bool format_ok = false;
    bool answer_ok = false;
    int reward = -1;  // 1 correct, 0 wrong answer, -1 bad format
};

// Three-case rule-based reward; deterministic, never throws on malformed
// responses (they map to format failure).
Verdict score_response(const TaskInstance& task, std::span<const int> response,
                       const Vocab& vocab);

// Equivalence of an already-extracted answer span against the ground truth.
// Integer answers compare numerically (leading zeros stripped), token
// sequences compare exactly.
bool is_equivalent(const TaskInstance& task, std::span<const int> answer_tokens,
                   const Vocab& vocab);

// Strip leading zeros from a digit string; "" and "000" canonicalize to "0".
std::string canonical_int(const std::string& digits);

struct TaskGenConfig {
    int count = 512;
    double copy_fraction = 0.5;   // share of sequence-copy tasks
    double label_noise = 0.0;     // probability of mislabeling a modular task
    int vocab_size = 12;
    std::uint64_t seed = 1;
    int copy_prompt_min = 4;
    int copy_prompt_max = 6;
    int mod_min = 2;              // modulus range for (x + y) mod m
    int mod_max = 9;
};

// Synthetic verifiable tasks: modular arithmetic ((x+y) mod m from a three
// digit prompt) and sequence copy (answer repeats the final prompt token).
// Prompts are distinct within one set.
std::vector<TaskInstance> generate_tasks(const TaskGenConfig& cfg);

// Tab-separated task files: `prompt \t answer \t rule`, prompts as
// space-separated token ids, answers prefixed with `int:` or `seq:`. The
// generator seed goes into a header comment line.
void save_tasks(const std::filesystem::path& path, std::span<const TaskInstance> tasks,
                std::uint64_t seed);
std::vector<TaskInstance> load_tasks(const std::filesystem::path& path);

}  // namespace dcpo
