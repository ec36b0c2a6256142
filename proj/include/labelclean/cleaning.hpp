#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "labelclean/data.hpp"
#include "labelclean/influence.hpp"
#include "labelclean/nnet.hpp"

namespace labelclean::cleaning {

using data::Example;
using nnet::ParameterVector;

enum class StrategyKind { Cincer, NoCe, DropCe, Nn };

struct Strategy {
    StrategyKind kind = StrategyKind::Cincer;
    influence::CurvatureBackend backend = influence::CurvatureBackend::make(influence::CurvatureKind::TopFisher);
    influence::CandidateFilter filter;
    double tau = 0.2;

    /// Accepts "cincer", "cincer+<backend>", "drop-ce", "drop-ce+<backend>",
    /// "no-ce" and "nn". The backend defaults to top-fisher.
    static Strategy parse(const std::string& name, double tau = 0.2);
    std::string name() const;
    void validate() const;
};

struct MarginReport {
    int predicted = 0;
    int annotated = 0;
    double margin = 0.0;
    bool suspicious = false;
};

/// mu = P(predicted|x) - P(annotated|x); suspicious iff mu >= tau.
MarginReport margin(const ParameterVector& params, const Example& example, double tau);

struct CounterExampleQuery {
    std::uint64_t query_id = 0;
    int iteration = 0;
    Example suspicious;
    int prediction = 0;
    double margin = 0.0;
    std::optional<Example> counterexample;
    std::optional<double> counterexample_score;
};

struct AnnotatorDecision {
    int suspicious_label = 0;
    std::optional<int> counterexample_label;
};

class Annotator {
public:
    virtual ~Annotator() = default;
    virtual AnnotatorDecision decide(const CounterExampleQuery& query) = 0;
};

/// Perfect annotator: answers with the ground-truth labels of both items.
AnnotatorDecision oracle_annotator(const CounterExampleQuery& query);

class OracleAnnotator final : public Annotator {
public:
    AnnotatorDecision decide(const CounterExampleQuery& query) override { return oracle_annotator(query); }
};

/// Replays a fixed list of decisions in order.
class ScriptedAnnotator final : public Annotator {
public:
    explicit ScriptedAnnotator(std::vector<AnnotatorDecision> decisions) : decisions_(std::move(decisions)) {}
    AnnotatorDecision decide(const CounterExampleQuery& query) override;

private:
    std::vector<AnnotatorDecision> decisions_;
    std::size_t next_ = 0;
};

struct TraceRecord {
    int iteration = 0;
    int example_id = 0;
    int predicted = 0;
    int annotated = 0;
    double margin = 0.0;
    bool suspicious = false;
    bool queried = false;
    std::optional<int> ce_id;
    std::optional<double> ce_score;
    int suspicious_label_before = 0;
    int suspicious_label_after = 0;
    std::optional<int> ce_label_before;
    std::optional<int> ce_label_after;
    bool ce_dropped = false;
    bool useless_query = false;
    int cleaned_suspicious = 0;
    int cleaned_ce = 0;
    int queries = 0;
    int useless_queries = 0;
    int dropped = 0;
    std::size_t dataset_size = 0;
    std::optional<double> f1;

    int cleaned() const noexcept { return cleaned_suspicious + cleaned_ce; }
};

void to_json(nlohmann::json& j, const TraceRecord& r);
void from_json(const nlohmann::json& j, TraceRecord& r);

struct LoopTrace {
    std::vector<TraceRecord> records;

    /// One JSON object per line.
    std::string to_jsonl() const;
    static LoopTrace from_jsonl(const std::string& text);
    /// Decisions as recorded, for replay through ScriptedAnnotator.
    std::vector<AnnotatorDecision> decisions() const;
};

struct SessionConfig {
    nnet::ArchitectureSpec arch;
    nnet::TrainConfig train;
    Strategy strategy;
    std::uint64_t seed = 0;
};

enum class Phase { AwaitingExample, AwaitingDecision, Finished };
std::string to_string(Phase phase);

struct Counters {
    int cleaned_suspicious = 0;
    int cleaned_ce = 0;
    int queries = 0;
    int useless_queries = 0;
    int dropped = 0;

    int cleaned() const noexcept { return cleaned_suspicious + cleaned_ce; }
};

struct AdvanceResult {
    bool compatible = true;
    std::optional<CounterExampleQuery> query;
};

/// Sequential cleaning loop state. Each incoming example is checked with the
/// margin; compatible examples are appended and the model refit, suspicious
/// ones produce a pending query that decide() resolves. Refits always start
/// from scratch with a seed derived from (session seed, iteration).
class Session {
public:
    Session(data::ExampleSet bootstrap, std::vector<Example> stream, SessionConfig config,
            std::optional<data::ExampleSet> test = std::nullopt);

    Phase phase() const noexcept { return phase_; }
    const std::optional<CounterExampleQuery>& pending() const noexcept { return pending_; }
    const data::ExampleSet& dataset() const noexcept { return dataset_; }
    const ParameterVector& params() const noexcept { return params_; }
    const LoopTrace& trace() const noexcept { return trace_; }
    const Counters& counters() const noexcept { return counters_; }
    const SessionConfig& config() const noexcept { return config_; }
    const std::optional<data::ExampleSet>& test_set() const noexcept { return test_; }
    std::size_t stream_position() const noexcept { return cursor_; }
    std::size_t stream_size() const noexcept { return stream_.size(); }
    int iteration() const noexcept { return iteration_; }
    std::optional<double> current_f1() const;

    /// Consumes the next stream example. Throws StateError when a decision is
    /// pending or the stream is exhausted (the latter also finishes the session).
    AdvanceResult advance();
    /// Same as advance() for an example supplied by the caller.
    AdvanceResult offer(const Example& incoming);
    /// Applies the annotator's labels to the pending query and refits.
    const TraceRecord& decide(std::uint64_t query_id, const AnnotatorDecision& decision);

    /// One full iteration: offer, ask `annotator` if suspicious, decide.
    void step(const Example& incoming, Annotator& annotator);
    /// Runs advance/decide over the remaining stream.
    void run(Annotator& annotator);

private:
    void refit();
    void record(TraceRecord rec);
    std::optional<Example> select_counterexample(const Example& incoming, int prediction, double& score);

    SessionConfig config_;
    data::ExampleSet dataset_;
    std::vector<Example> stream_;
    std::optional<data::ExampleSet> test_;
    ParameterVector params_;
    Phase phase_ = Phase::AwaitingExample;
    std::optional<CounterExampleQuery> pending_;
    TraceRecord pending_record_;
    LoopTrace trace_;
    Counters counters_;
    std::size_t cursor_ = 0;
    int iteration_ = 0;
    std::uint64_t next_query_id_ = 1;
};

struct LoopResult {
    Session session;
    LoopTrace trace;
};

/// Fits on `bootstrap`, then steps over `stream` in order.
LoopResult run_loop(const data::ExampleSet& bootstrap, const std::vector<Example>& stream, const Strategy& strategy,
                    Annotator& annotator, const nnet::ArchitectureSpec& arch, const nnet::TrainConfig& cfg,
                    std::uint64_t seed, std::optional<data::ExampleSet> test = std::nullopt);

}  // namespace labelclean::cleaning
