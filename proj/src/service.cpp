#include "labelclean/service.hpp"

#include <charconv>
#include <cmath>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "labelclean/errors.hpp"
#include "labelclean/random.hpp"

namespace labelclean::service {

using nlohmann::json;

json error_body(const std::string& code, const std::string& message) {
    return json{{"code", code}, {"message", message}};
}

namespace {

Response error(int status, const std::string& code, const std::string& message) {
    return {status, error_body(code, message)};
}

Response not_found(const std::string& session_id) {
    return error(404, "unknown-session", "no session with id '" + session_id + "'");
}

json render(const data::Example& e, const data::ExampleSet& raw) {
    const data::Example* source = &e;
    for (const auto& r : raw.examples)
        if (r.id == e.id) {
            source = &r;
            break;
        }
    const Eigen::VectorXd& x = source->x;
    if (raw.image_shape) {
        const auto [rows, cols] = *raw.image_shape;
        json grid = json::array();
        for (int i = 0; i < rows; ++i) {
            json row = json::array();
            for (int j = 0; j < cols; ++j) row.push_back(x(i * cols + j));
            grid.push_back(std::move(row));
        }
        return json{{"kind", "image"}, {"rows", rows}, {"cols", cols}, {"pixels", grid}};
    }
    return json{{"kind", "features"}, {"values", std::vector<double>(x.data(), x.data() + x.size())}};
}

}  // namespace

SessionRequest SessionRequest::from_json(const json& j) {
    SessionRequest r;
    try {
        if (!j.is_object()) throw ConfigError("session config must be a JSON object");
        r.dataset = j.at("dataset").get<std::string>();
        if (j.contains("model")) r.model = evalx::ModelConfig::from_json(j.at("model"));
        r.strategy = j.value("strategy", r.strategy);
        if (j.contains("corruption")) {
            const auto& c = j.at("corruption");
            r.corruption_rate = c.is_number() ? c.get<double>() : c.value("rate", r.corruption_rate);
        }
        r.bootstrap_size = j.value("bootstrap_size", r.bootstrap_size);
        if (j.contains("stream_length")) r.stream_length = j.at("stream_length").get<int>();
        r.seed = j.value("seed", r.seed);
        r.tau = j.value("tau", r.tau);
        r.train_fraction = j.value("train_fraction", r.train_fraction);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("session config: ") + e.what());
    }
    cleaning::Strategy::parse(r.strategy, r.tau).validate();
    return r;
}

Service::Service() {
    auto moons = data::make_synthetic(data::SyntheticKind::Moons, 400, 0.2, 0);
    moons.name = "moons";
    add_dataset(std::move(moons));
    auto blobs = data::make_synthetic(data::SyntheticKind::TwoGaussians, 400, 1.0, 0);
    blobs.name = "two-gaussians";
    add_dataset(std::move(blobs));
}

void Service::add_dataset(data::ExampleSet set) {
    set.validate();
    std::unique_lock lock(registry_mutex_);
    const std::string name = set.name;
    datasets_[name] = std::make_shared<const data::ExampleSet>(std::move(set));
}

void Service::add_manifest(const std::filesystem::path& manifest_path) {
    add_dataset(data::load_manifest(data::DatasetManifest::load(manifest_path), false));
}

std::vector<std::string> Service::dataset_names() const {
    std::shared_lock lock(registry_mutex_);
    std::vector<std::string> names;
    for (const auto& [name, _] : datasets_) names.push_back(name);
    return names;
}

std::shared_ptr<const data::ExampleSet> Service::dataset(const std::string& name) const {
    std::shared_lock lock(registry_mutex_);
    auto it = datasets_.find(name);
    return it == datasets_.end() ? nullptr : it->second;
}

std::shared_ptr<SessionEntry> Service::find(const std::string& session_id) const {
    std::shared_lock lock(registry_mutex_);
    auto it = sessions_.find(session_id);
    return it == sessions_.end() ? nullptr : it->second;
}

Response Service::create_session(const json& body) {
    SessionRequest req;
    try {
        req = SessionRequest::from_json(body);
    } catch (const Error& e) {
        return error(400, "invalid-config", e.what());
    }
    auto raw = dataset(req.dataset);
    if (!raw) return error(400, "unknown-dataset", "dataset '" + req.dataset + "' is not loaded");

    evalx::ExperimentConfig cfg;
    cfg.experiment = "custom";
    cfg.model = req.model;
    cfg.corruption_rate = req.corruption_rate;
    cfg.bootstrap_size = req.bootstrap_size;
    cfg.tau = req.tau;
    cfg.train_fraction = req.train_fraction;
    const auto train_size = static_cast<int>(std::floor(req.train_fraction * static_cast<double>(raw->size())));
    cfg.stream_length = req.stream_length.value_or(std::max(0, train_size - req.bootstrap_size));

    try {
        auto run = evalx::prepare_run(*raw, cfg, req.seed);
        auto arch = evalx::make_arch(cfg, run.bootstrap, derive_seed(req.seed, {0xa7u}));
        auto strategy = cleaning::Strategy::parse(req.strategy, req.tau);
        cleaning::Session session(std::move(run.bootstrap), std::move(run.stream),
                                  {arch, cfg.model.train, strategy, req.seed}, std::move(run.test));
        std::unique_lock lock(registry_mutex_);
        std::string id = "s" + std::to_string(next_session_++);
        sessions_.emplace(id, std::make_shared<SessionEntry>(id, std::move(req), raw, std::move(session)));
        spdlog::info("created session {} on dataset {}", id, raw->name);
        return {201, json{{"session_id", id}, {"phase", "awaiting-example"}}};
    } catch (const ConfigError& e) {
        return error(400, "invalid-config", e.what());
    } catch (const Error& e) {
        return error(500, "runtime-failure", e.what());
    }
}

json query_json(const cleaning::CounterExampleQuery& q, const data::ExampleSet& meta, const data::ExampleSet& raw) {
    json suspicious{{"id", q.suspicious.id},
                    {"payload", render(q.suspicious, raw)},
                    {"current_label", q.suspicious.label},
                    {"prediction", q.prediction},
                    {"margin", q.margin}};
    json ce = nullptr;
    if (q.counterexample)
        ce = json{{"id", q.counterexample->id},
                  {"payload", render(*q.counterexample, raw)},
                  {"current_label", q.counterexample->label},
                  {"score", q.counterexample_score ? json(*q.counterexample_score) : json(nullptr)}};
    return json{{"query_id", q.query_id},
                {"iteration", q.iteration},
                {"suspicious", suspicious},
                {"counterexample", ce},
                {"class_names", meta.class_names},
                {"feature_names", meta.feature_names}};
}

Response Service::advance(const std::string& session_id) {
    auto entry = find(session_id);
    if (!entry) return not_found(session_id);
    std::unique_lock lock(entry->mutex);
    try {
        auto result = entry->session.advance();
        if (!result.query) return {200, json{{"status", "compatible"}, {"dataset_size", entry->session.dataset().size()}}};
        return {200, json{{"status", "query"}, {"query", query_json(*result.query, entry->session.dataset(), *entry->raw)}}};
    } catch (const StateError& e) {
        if (e.kind() == StateError::Kind::StreamExhausted) return error(410, "stream-exhausted", e.what());
        return error(409, "decision-pending", e.what());
    } catch (const Error& e) {
        return error(500, "runtime-failure", e.what());
    }
}

Response Service::decide(const std::string& session_id, const json& body) {
    auto entry = find(session_id);
    if (!entry) return not_found(session_id);
    std::uint64_t query_id = 0;
    cleaning::AnnotatorDecision decision;
    try {
        query_id = body.at("query_id").get<std::uint64_t>();
        decision.suspicious_label = body.at("y_t").get<int>();
        if (body.contains("y_k") && !body.at("y_k").is_null()) decision.counterexample_label = body.at("y_k").get<int>();
    } catch (const json::exception& e) {
        return error(400, "invalid-decision", std::string("decision body: ") + e.what());
    }
    std::unique_lock lock(entry->mutex);
    try {
        const auto& rec = entry->session.decide(query_id, decision);
        const auto& c = entry->session.counters();
        return {200, json{{"cleaned", c.cleaned()},
                          {"cleaned_suspicious", c.cleaned_suspicious},
                          {"cleaned_ce", c.cleaned_ce},
                          {"queries", c.queries},
                          {"useless_queries", c.useless_queries},
                          {"dropped", c.dropped},
                          {"dataset_size", rec.dataset_size},
                          {"f1", rec.f1 ? json(*rec.f1) : json(nullptr)}}};
    } catch (const StateError& e) {
        if (e.kind() == StateError::Kind::StaleQuery) return error(409, "stale-query", e.what());
        return error(409, "no-pending-query", e.what());
    } catch (const ConfigError& e) {
        return error(400, "label-out-of-range", e.what());
    } catch (const Error& e) {
        return error(500, "runtime-failure", e.what());
    }
}

Response Service::metrics(const std::string& session_id) const {
    auto entry = find(session_id);
    if (!entry) return not_found(session_id);
    std::shared_lock lock(entry->mutex);
    json rows = json::array();
    for (const auto& r : entry->session.trace().records) rows.push_back(r);
    return {200, json{{"session_id", session_id}, {"strategy", entry->request.strategy}, {"rows", rows}}};
}

Response Service::describe(const std::string& session_id) const {
    auto entry = find(session_id);
    if (!entry) return not_found(session_id);
    std::shared_lock lock(entry->mutex);
    const auto& s = entry->session;
    json pending = nullptr;
    if (s.pending()) pending = query_json(*s.pending(), s.dataset(), *entry->raw);
    const auto& c = s.counters();
    return {200, json{{"session_id", session_id},
                      {"dataset", entry->request.dataset},
                      {"strategy", entry->request.strategy},
                      {"phase", cleaning::to_string(s.phase())},
                      {"pending", pending},
                      {"stream_position", s.stream_position()},
                      {"stream_size", s.stream_size()},
                      {"dataset_size", s.dataset().size()},
                      {"counters",
                       {{"cleaned", c.cleaned()},
                        {"cleaned_suspicious", c.cleaned_suspicious},
                        {"cleaned_ce", c.cleaned_ce},
                        {"queries", c.queries},
                        {"useless_queries", c.useless_queries},
                        {"dropped", c.dropped}}},
                      {"f1", s.current_f1() ? json(*s.current_f1()) : json(nullptr)}}};
}

Response Service::list_datasets() const {
    json arr = json::array();
    std::shared_lock lock(registry_mutex_);
    for (const auto& [name, set] : datasets_)
        arr.push_back({{"name", name},
                       {"size", set->size()},
                       {"num_classes", set->num_classes},
                       {"feature_dim", set->feature_dim},
                       {"class_names", set->class_names}});
    return {200, json{{"datasets", arr}}};
}

Response Service::handle(const std::string& method, const std::string& path, const std::string& body) {
    std::vector<std::string> parts;
    for (std::size_t pos = 0; pos <= path.size();) {
        const auto next = path.find('/', pos);
        const auto end = next == std::string::npos ? path.size() : next;
        if (end > pos) parts.push_back(path.substr(pos, end - pos));
        pos = end + 1;
    }
    auto parse_body = [&body](json& out) -> std::optional<Response> {
        try {
            out = body.empty() ? json::object() : json::parse(body);
            return std::nullopt;
        } catch (const json::exception& e) {
            return error(400, "invalid-json", e.what());
        }
    };

    if (parts.size() == 1 && parts[0] == "datasets" && method == "GET") return list_datasets();
    if (parts.empty() || parts[0] != "sessions") return error(404, "not-found", "no route for " + path);
    if (parts.size() == 1) {
        if (method != "POST") return error(405, "method-not-allowed", method + " " + path);
        json j;
        if (auto err = parse_body(j)) return *err;
        return create_session(j);
    }
    const std::string& id = parts[1];
    if (parts.size() == 2) {
        if (method != "GET") return error(405, "method-not-allowed", method + " " + path);
        return describe(id);
    }
    if (parts.size() == 3) {
        const std::string& action = parts[2];
        if (action == "advance") {
            if (method != "POST") return error(405, "method-not-allowed", method + " " + path);
            return advance(id);
        }
        if (action == "decision") {
            if (method != "POST") return error(405, "method-not-allowed", method + " " + path);
            json j;
            if (auto err = parse_body(j)) return *err;
            return decide(id, j);
        }
        if (action == "metrics") {
            if (method != "GET") return error(405, "method-not-allowed", method + " " + path);
            return metrics(id);
        }
    }
    return error(404, "not-found", "no route for " + path);
}

std::pair<std::string, int> parse_address(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size())
        throw ConfigError("address '" + addr + "' is not of the form host:port");
    int port = -1;
    const char* first = addr.data() + colon + 1;
    const char* last = addr.data() + addr.size();
    auto [ptr, ec] = std::from_chars(first, last, port);
    if (ec != std::errc() || ptr != last || port < 0 || port > 65535)
        throw ConfigError("address '" + addr + "' has an invalid port");
    return {addr.substr(0, colon), port};
}

struct HttpServer::Impl {
    Service& service;
    httplib::Server server;

    explicit Impl(Service& s) : service(s) {
        auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
            Response r = service.handle(req.method, req.path, req.body);
            res.status = r.status;
            res.set_content(r.body.dump(), "application/json");
            spdlog::debug("{} {} -> {}", req.method, req.path, r.status);
        };
        server.Get(R"(/.*)", dispatch);
        server.Post(R"(/.*)", dispatch);
        server.Put(R"(/.*)", dispatch);
        server.Delete(R"(/.*)", dispatch);
    }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }

}  // namespace labelclean::service
