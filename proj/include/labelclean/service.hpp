#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labelclean/cleaning.hpp"
#include "labelclean/data.hpp"
#include "labelclean/evalx.hpp"

namespace labelclean::service {

struct Response {
    int status = 200;
    nlohmann::json body;
};

/// Error body used by every failing endpoint.
nlohmann::json error_body(const std::string& code, const std::string& message);

/// Options accepted by POST /sessions.
struct SessionRequest {
    std::string dataset;
    evalx::ModelConfig model;
    std::string strategy = "cincer";
    double corruption_rate = 0.2;
    int bootstrap_size = 100;
    std::optional<int> stream_length;  // default: the rest of the training split
    std::uint64_t seed = 0;
    double tau = 0.2;
    double train_fraction = 0.8;

    static SessionRequest from_json(const nlohmann::json& j);
};

struct SessionEntry {
    std::string id;
    SessionRequest request;
    std::shared_ptr<const data::ExampleSet> raw;  // unstandardized, for rendering
    cleaning::Session session;
    mutable std::shared_mutex mutex;

    SessionEntry(std::string id_, SessionRequest req, std::shared_ptr<const data::ExampleSet> raw_,
                 cleaning::Session s)
        : id(std::move(id_)), request(std::move(req)), raw(std::move(raw_)), session(std::move(s)) {}
};

/// Transport-independent request handling. Every public method is safe to
/// call from several threads: mutations of one session are serialized,
/// reads share the lock.
class Service {
public:
    Service();

    /// Registers a dataset under set.name. The built-in synthetic sets
    /// "moons" and "two-gaussians" are always present.
    void add_dataset(data::ExampleSet set);
    void add_manifest(const std::filesystem::path& manifest_path);
    std::vector<std::string> dataset_names() const;

    Response create_session(const nlohmann::json& body);
    Response advance(const std::string& session_id);
    Response decide(const std::string& session_id, const nlohmann::json& body);
    Response metrics(const std::string& session_id) const;
    Response describe(const std::string& session_id) const;
    Response list_datasets() const;

    /// Routes a method/path pair to the handlers above.
    Response handle(const std::string& method, const std::string& path, const std::string& body);

    /// Direct access for tests and trace export.
    std::shared_ptr<SessionEntry> find(const std::string& session_id) const;

private:
    std::shared_ptr<const data::ExampleSet> dataset(const std::string& name) const;

    mutable std::shared_mutex registry_mutex_;
    std::map<std::string, std::shared_ptr<const data::ExampleSet>> datasets_;
    std::map<std::string, std::shared_ptr<SessionEntry>> sessions_;
    std::uint64_t next_session_ = 1;
};

/// Wire form of a pending query.
nlohmann::json query_json(const cleaning::CounterExampleQuery& query, const data::ExampleSet& meta,
                          const data::ExampleSet& raw);

/// Parses "host:port"; throws ConfigError on malformed input.
std::pair<std::string, int> parse_address(const std::string& addr);

/// Blocking HTTP server around a Service.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace labelclean::service
