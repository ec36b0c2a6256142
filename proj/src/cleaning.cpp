#include "labelclean/cleaning.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "labelclean/errors.hpp"
#include "labelclean/metrics.hpp"
#include "labelclean/random.hpp"

namespace labelclean::cleaning {

namespace {

std::string strategy_prefix(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::Cincer: return "cincer";
        case StrategyKind::NoCe: return "no-ce";
        case StrategyKind::DropCe: return "drop-ce";
        case StrategyKind::Nn: return "nn";
    }
    return "unknown";
}

template <class T>
void put_optional(nlohmann::json& j, const char* key, const std::optional<T>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> get_optional(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

}  // namespace

Strategy Strategy::parse(const std::string& name, double tau) {
    Strategy s;
    s.tau = tau;
    const auto plus = name.find('+');
    const std::string head = name.substr(0, plus);
    if (head == "cincer") s.kind = StrategyKind::Cincer;
    else if (head == "no-ce") s.kind = StrategyKind::NoCe;
    else if (head == "drop-ce") s.kind = StrategyKind::DropCe;
    else if (head == "nn") s.kind = StrategyKind::Nn;
    else throw ConfigError("unknown strategy '" + name + "'");
    if (plus != std::string::npos) {
        if (s.kind == StrategyKind::NoCe || s.kind == StrategyKind::Nn)
            throw ConfigError("strategy '" + head + "' takes no curvature backend");
        s.backend = influence::CurvatureBackend::make(influence::parse_curvature_kind(name.substr(plus + 1)));
    }
    s.validate();
    return s;
}

std::string Strategy::name() const {
    if (kind == StrategyKind::NoCe || kind == StrategyKind::Nn) return strategy_prefix(kind);
    if (kind == StrategyKind::DropCe && backend.kind == influence::CurvatureKind::TopFisher) return "drop-ce";
    return strategy_prefix(kind) + "+" + influence::to_string(backend.kind);
}

void Strategy::validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("margin threshold tau must lie in [0, 1]");
    if (kind == StrategyKind::Cincer || kind == StrategyKind::DropCe) backend.validate();
    if (filter.perceptual_k && *filter.perceptual_k < 1) throw ConfigError("perceptual_k must be >= 1");
}

MarginReport margin(const ParameterVector& params, const Example& example, double tau) {
    const auto dist = nnet::predict_proba(params, example.x);
    if (example.label < 0 || example.label >= dist.probs.size()) throw ConfigError("label outside class range");
    MarginReport r;
    r.predicted = dist.argmax();
    r.annotated = example.label;
    r.margin = r.predicted == r.annotated ? 0.0 : dist.probs[r.predicted] - dist.probs[r.annotated];
    r.suspicious = r.margin >= tau;
    return r;
}

AnnotatorDecision oracle_annotator(const CounterExampleQuery& query) {
    AnnotatorDecision d;
    d.suspicious_label = query.suspicious.hidden.true_label;
    if (query.counterexample) d.counterexample_label = query.counterexample->hidden.true_label;
    return d;
}

AnnotatorDecision ScriptedAnnotator::decide(const CounterExampleQuery&) {
    if (next_ >= decisions_.size()) throw Error("scripted annotator ran out of decisions");
    return decisions_[next_++];
}

void to_json(nlohmann::json& j, const TraceRecord& r) {
    j = nlohmann::json::object();
    j["iter"] = r.iteration;
    j["example_id"] = r.example_id;
    j["predicted"] = r.predicted;
    j["annotated"] = r.annotated;
    j["margin"] = r.margin;
    j["suspicious"] = r.suspicious;
    j["queried"] = r.queried;
    put_optional(j, "ce_id", r.ce_id);
    put_optional(j, "ce_score", r.ce_score);
    j["label_before"] = r.suspicious_label_before;
    j["label_after"] = r.suspicious_label_after;
    put_optional(j, "ce_label_before", r.ce_label_before);
    put_optional(j, "ce_label_after", r.ce_label_after);
    j["ce_dropped"] = r.ce_dropped;
    j["useless_query"] = r.useless_query;
    j["cleaned"] = r.cleaned();
    j["cleaned_suspicious"] = r.cleaned_suspicious;
    j["cleaned_ce"] = r.cleaned_ce;
    j["queries"] = r.queries;
    j["useless_queries"] = r.useless_queries;
    j["dropped"] = r.dropped;
    j["dataset_size"] = r.dataset_size;
    put_optional(j, "f1", r.f1);
}

void from_json(const nlohmann::json& j, TraceRecord& r) {
    r.iteration = j.at("iter").get<int>();
    r.example_id = j.at("example_id").get<int>();
    r.predicted = j.at("predicted").get<int>();
    r.annotated = j.at("annotated").get<int>();
    r.margin = j.at("margin").get<double>();
    r.suspicious = j.at("suspicious").get<bool>();
    r.queried = j.at("queried").get<bool>();
    r.ce_id = get_optional<int>(j, "ce_id");
    r.ce_score = get_optional<double>(j, "ce_score");
    r.suspicious_label_before = j.at("label_before").get<int>();
    r.suspicious_label_after = j.at("label_after").get<int>();
    r.ce_label_before = get_optional<int>(j, "ce_label_before");
    r.ce_label_after = get_optional<int>(j, "ce_label_after");
    r.ce_dropped = j.at("ce_dropped").get<bool>();
    r.useless_query = j.at("useless_query").get<bool>();
    r.cleaned_suspicious = j.at("cleaned_suspicious").get<int>();
    r.cleaned_ce = j.at("cleaned_ce").get<int>();
    r.queries = j.at("queries").get<int>();
    r.useless_queries = j.at("useless_queries").get<int>();
    r.dropped = j.at("dropped").get<int>();
    r.dataset_size = j.at("dataset_size").get<std::size_t>();
    r.f1 = get_optional<double>(j, "f1");
}

std::string LoopTrace::to_jsonl() const {
    std::string out;
    for (const auto& r : records) {
        out += nlohmann::json(r).dump();
        out += '\n';
    }
    return out;
}

LoopTrace LoopTrace::from_jsonl(const std::string& text) {
    LoopTrace t;
    std::istringstream in(text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        try {
            t.records.push_back(nlohmann::json::parse(line).get<TraceRecord>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("trace line " + std::to_string(row) + ": " + e.what(), row, "");
        }
    }
    return t;
}

std::vector<AnnotatorDecision> LoopTrace::decisions() const {
    std::vector<AnnotatorDecision> out;
    for (const auto& r : records) {
        if (!r.queried) continue;
        AnnotatorDecision d;
        d.suspicious_label = r.suspicious_label_after;
        // a dropped CE keeps its recorded label; what matters for replay is the suspicious label
        d.counterexample_label = r.ce_label_after;
        out.push_back(d);
    }
    return out;
}

std::string to_string(Phase phase) {
    switch (phase) {
        case Phase::AwaitingExample: return "awaiting-example";
        case Phase::AwaitingDecision: return "awaiting-decision";
        case Phase::Finished: return "finished";
    }
    return "unknown";
}

Session::Session(data::ExampleSet bootstrap, std::vector<Example> stream, SessionConfig config,
                 std::optional<data::ExampleSet> test)
    : config_(std::move(config)), dataset_(std::move(bootstrap)), stream_(std::move(stream)), test_(std::move(test)) {
    config_.arch.validate();
    config_.train.validate();
    config_.strategy.validate();
    dataset_.validate();
    if (dataset_.empty()) throw ConfigError("bootstrap set is empty");
    if (config_.arch.input_dim != dataset_.feature_dim || config_.arch.num_classes != dataset_.num_classes)
        throw ConfigError("architecture does not match the dataset dimensions");
    std::unordered_set<int> ids;
    for (const auto& e : dataset_.examples) ids.insert(e.id);
    for (const auto& e : stream_)
        if (!ids.insert(e.id).second) throw ConfigError("bootstrap and stream share example id " + std::to_string(e.id));
    refit();
}

void Session::refit() {
    nnet::TrainConfig cfg = config_.train;
    cfg.seed = derive_seed(config_.seed, {0xf17u, static_cast<std::uint64_t>(iteration_)});
    params_ = nnet::fit(dataset_.view(), config_.arch, cfg);
}

std::optional<double> Session::current_f1() const {
    if (!test_ || test_->empty()) return std::nullopt;
    return evalx::f1_macro(params_, test_->view());
}

AdvanceResult Session::advance() {
    if (phase_ == Phase::AwaitingDecision)
        throw StateError(StateError::Kind::DecisionPending, "a decision is pending for query " +
                                                                std::to_string(pending_->query_id));
    if (cursor_ >= stream_.size()) {
        phase_ = Phase::Finished;
        throw StateError(StateError::Kind::StreamExhausted, "stream exhausted");
    }
    const Example incoming = stream_[cursor_];
    auto result = offer(incoming);
    ++cursor_;
    return result;
}

std::optional<Example> Session::select_counterexample(const Example& incoming, int prediction, double& score) {
    const auto& strategy = config_.strategy;
    std::vector<Example> candidates =
        influence::filter_candidates(dataset_.view(), incoming, prediction,
                                     {strategy.filter.pertinence_enabled, strategy.filter.perceptual_k});
    if (candidates.empty()) candidates = dataset_.examples;
    if (candidates.empty()) return std::nullopt;

    if (strategy.kind == StrategyKind::Nn) {
        auto nearest = influence::filter_candidates(candidates, incoming, prediction, {false, 1});
        score = (nearest.front().x - incoming.x).norm();
        return nearest.front();
    }
    influence::CurvatureBackend backend = strategy.backend;
    backend.seed = derive_seed(config_.seed, {0x115au, static_cast<std::uint64_t>(iteration_)});
    const auto inverse = influence::InverseCurvature::prepare(backend, params_, dataset_.view());
    const auto scores = influence::score_counterexamples(params_, incoming, candidates, inverse);
    score = scores.front().score;
    const int best = scores.front().candidate_id;
    return *std::find_if(candidates.begin(), candidates.end(), [best](const Example& e) { return e.id == best; });
}

AdvanceResult Session::offer(const Example& incoming) {
    if (phase_ == Phase::AwaitingDecision)
        throw StateError(StateError::Kind::DecisionPending, "a decision is pending for query " +
                                                                std::to_string(pending_->query_id));
    if (phase_ == Phase::Finished) throw StateError(StateError::Kind::StreamExhausted, "session finished");
    if (incoming.x.size() != dataset_.feature_dim || incoming.label < 0 || incoming.label >= dataset_.num_classes)
        throw ConfigError("incoming example does not match the dataset");
    for (const auto& e : dataset_.examples)
        if (e.id == incoming.id) throw ConfigError("example id " + std::to_string(incoming.id) + " already in dataset");

    ++iteration_;
    const MarginReport m = margin(params_, incoming, config_.strategy.tau);
    TraceRecord rec;
    rec.iteration = iteration_;
    rec.example_id = incoming.id;
    rec.predicted = m.predicted;
    rec.annotated = m.annotated;
    rec.margin = m.margin;
    rec.suspicious = m.suspicious;
    rec.suspicious_label_before = incoming.label;
    rec.suspicious_label_after = incoming.label;

    if (!m.suspicious) {
        dataset_.examples.push_back(incoming);
        refit();
        record(rec);
        return {true, std::nullopt};
    }

    CounterExampleQuery q;
    q.query_id = next_query_id_++;
    q.iteration = iteration_;
    q.suspicious = incoming;
    q.prediction = m.predicted;
    q.margin = m.margin;
    if (config_.strategy.kind != StrategyKind::NoCe) {
        double score = 0.0;
        q.counterexample = select_counterexample(incoming, m.predicted, score);
        if (q.counterexample) q.counterexample_score = score;
    }
    rec.queried = true;
    rec.useless_query = !incoming.corrupted() && !(q.counterexample && q.counterexample->corrupted());
    if (q.counterexample) {
        rec.ce_id = q.counterexample->id;
        rec.ce_score = q.counterexample_score;
        rec.ce_label_before = q.counterexample->label;
        rec.ce_label_after = q.counterexample->label;
    }
    pending_ = q;
    pending_record_ = rec;
    phase_ = Phase::AwaitingDecision;
    return {false, q};
}

const TraceRecord& Session::decide(std::uint64_t query_id, const AnnotatorDecision& decision) {
    if (phase_ != Phase::AwaitingDecision || !pending_)
        throw StateError(StateError::Kind::NoPendingQuery, "no query is pending");
    if (query_id != pending_->query_id)
        throw StateError(StateError::Kind::StaleQuery, "query " + std::to_string(query_id) +
                                                           " is not the pending query " +
                                                           std::to_string(pending_->query_id));
    const int c = dataset_.num_classes;
    auto in_range = [c](int y) { return y >= 0 && y < c; };
    if (!in_range(decision.suspicious_label)) throw ConfigError("suspicious label outside class range");
    if (decision.counterexample_label && !in_range(*decision.counterexample_label))
        throw ConfigError("counter-example label outside class range");

    const CounterExampleQuery q = *pending_;
    TraceRecord rec = pending_record_;

    Example incoming = q.suspicious;
    incoming.label = decision.suspicious_label;
    rec.suspicious_label_after = incoming.label;
    if (incoming.label != q.suspicious.label) ++counters_.cleaned_suspicious;

    if (q.counterexample) {
        auto it = std::find_if(dataset_.examples.begin(), dataset_.examples.end(),
                               [&](const Example& e) { return e.id == q.counterexample->id; });
        if (it == dataset_.examples.end()) throw Error("counter-example vanished from the dataset");
        if (config_.strategy.kind == StrategyKind::DropCe) {
            if (decision.suspicious_label == q.suspicious.label) {
                dataset_.examples.erase(it);
                rec.ce_dropped = true;
                ++counters_.dropped;
            }
        } else {
            const int new_label = decision.counterexample_label.value_or(it->label);
            if (new_label != it->label) ++counters_.cleaned_ce;
            it->label = new_label;
            rec.ce_label_after = new_label;
        }
    }
    dataset_.examples.push_back(std::move(incoming));
    ++counters_.queries;
    if (rec.useless_query) ++counters_.useless_queries;

    pending_.reset();
    phase_ = Phase::AwaitingExample;
    refit();
    record(rec);
    return trace_.records.back();
}

void Session::record(TraceRecord rec) {
    rec.cleaned_suspicious = counters_.cleaned_suspicious;
    rec.cleaned_ce = counters_.cleaned_ce;
    rec.queries = counters_.queries;
    rec.useless_queries = counters_.useless_queries;
    rec.dropped = counters_.dropped;
    rec.dataset_size = dataset_.size();
    rec.f1 = current_f1();
    trace_.records.push_back(rec);
}

void Session::step(const Example& incoming, Annotator& annotator) {
    auto r = offer(incoming);
    if (r.query) decide(r.query->query_id, annotator.decide(*r.query));
}

void Session::run(Annotator& annotator) {
    while (cursor_ < stream_.size()) {
        auto r = advance();
        if (r.query) decide(r.query->query_id, annotator.decide(*r.query));
    }
    phase_ = Phase::Finished;
}

LoopResult run_loop(const data::ExampleSet& bootstrap, const std::vector<Example>& stream, const Strategy& strategy,
                    Annotator& annotator, const nnet::ArchitectureSpec& arch, const nnet::TrainConfig& cfg,
                    std::uint64_t seed, std::optional<data::ExampleSet> test) {
    Session session(bootstrap, stream, SessionConfig{arch, cfg, strategy, seed}, std::move(test));
    session.run(annotator);
    LoopTrace trace = session.trace();
    return {std::move(session), std::move(trace)};
}

}  // namespace labelclean::cleaning
