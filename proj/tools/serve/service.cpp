#include "service.hpp"

#include <cmath>
#include <mutex>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "irtnet/checkpoint.hpp"
#include "irtnet/downstream.hpp"
#include "irtnet/error.hpp"

namespace irtnet::serve {

using nlohmann::json;

namespace {

struct RequestError {
  int status;
  std::string message;
};

Reply json_reply(int status, const json& body) { return {status, body.dump()}; }
Reply error_reply(int status, const std::string& message) { return json_reply(status, {{"error", message}}); }

// Embeddings are held at f32 precision everywhere else, so raw request
// vectors are rounded the same way before encoding.
Vec parse_embedding(const json& value, std::size_t dim) {
  if (!value.is_array()) throw RequestError{400, "embedding must be an array of numbers"};
  if (value.size() != dim) {
    throw RequestError{400, "embedding has length " + std::to_string(value.size()) + ", expected " +
                                std::to_string(dim)};
  }
  Vec out;
  out.reserve(dim);
  for (const auto& x : value) {
    if (!x.is_number()) throw RequestError{400, "embedding must be an array of numbers"};
    const auto f = static_cast<float>(x.get<double>());
    if (!std::isfinite(f)) throw RequestError{400, "embedding values must be finite f32 numbers"};
    out.push_back(static_cast<double>(f));
  }
  return out;
}

}  // namespace

Service::Service(IrtNetParams params, std::optional<EmbeddingStore> store, std::size_t max_body_bytes)
    : params_(std::move(params)), store_(std::move(store)), max_body_bytes_(max_body_bytes) {
  if (store_ && store_->dim() != params_.hp.embed_dim) {
    throw DimensionError("embedding store dim " + std::to_string(store_->dim()) + " does not match checkpoint embed_dim " +
                         std::to_string(params_.hp.embed_dim));
  }
}

Service Service::from_config(const ServeConfig& config) {
  IrtNetParams params = load_checkpoint(config.checkpoint);
  std::optional<EmbeddingStore> store;
  if (config.ids.has_value() != config.vectors.has_value()) {
    throw std::invalid_argument("--ids and --vectors must be given together");
  }
  if (config.ids) store = load_embeddings(*config.ids, *config.vectors);
  return Service(std::move(params), std::move(store), config.max_body_bytes);
}

Reply Service::handle(std::string_view method, std::string_view path, std::string_view body) const {
  if (body.size() > max_body_bytes_) {
    return error_reply(413, "request body exceeds " + std::to_string(max_body_bytes_) + " bytes");
  }
  const bool known = path == "/health" || path == "/models" || path == "/route" || path == "/predict";
  if (!known) return error_reply(404, "no such endpoint: " + std::string(path));
  const bool is_get = path == "/health" || path == "/models";
  if (method != (is_get ? "GET" : "POST")) {
    return error_reply(405, std::string(path) + " expects " + (is_get ? "GET" : "POST"));
  }
  try {
    if (path == "/health") return health();
    if (path == "/models") return models();
    if (path == "/route") return route(body);
    return predict(body);
  } catch (const RequestError& e) {
    return error_reply(e.status, e.message);
  } catch (const json::exception& e) {
    return error_reply(400, std::string("malformed request: ") + e.what());
  }
}

Reply Service::health() const {
  return json_reply(200, {{"status", "ok"}, {"n_models", params_.num_models()}, {"d", params_.hp.ability_dim}});
}

Reply Service::models() const {
  json list = json::array();
  for (std::size_t i = 0; i < params_.model_names.size(); ++i) {
    list.push_back({{"index", i}, {"name", params_.model_names[i]}});
  }
  return json_reply(200, {{"models", list}});
}

namespace {

json parse_body(std::string_view body) {
  json j = json::parse(body.begin(), body.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw RequestError{400, "malformed JSON body"};
  if (!j.is_object()) throw RequestError{400, "request body must be a JSON object"};
  return j;
}

ModelId find_model(const IrtNetParams& params, const json& name) {
  if (!name.is_string()) throw RequestError{400, "model names must be strings"};
  const auto s = name.get<std::string>();
  for (std::size_t i = 0; i < params.model_names.size(); ++i) {
    if (params.model_names[i] == s) return ModelId{static_cast<std::uint32_t>(i)};
  }
  throw RequestError{404, "unknown model '" + s + "'"};
}

}  // namespace

Reply Service::route(std::string_view body) const {
  const json req = parse_body(body);
  Vec embedding;
  if (req.contains("embedding") == req.contains("query_id")) {
    throw RequestError{400, "give exactly one of \"embedding\" or \"query_id\""};
  }
  if (req.contains("embedding")) {
    embedding = parse_embedding(req["embedding"], params_.hp.embed_dim);
  } else {
    if (!req["query_id"].is_string()) throw RequestError{400, "query_id must be a string"};
    if (!store_) throw RequestError{400, "by-id requests need an embedding store loaded at startup"};
    const auto id = req["query_id"].get<std::string>();
    const auto row = store_->find(id);
    if (!row) throw RequestError{404, "unknown query id '" + id + "'"};
    const auto v = store_->row(*row);
    embedding.assign(v.begin(), v.end());
  }

  std::vector<ModelId> candidates;
  if (req.contains("candidates")) {
    const auto& c = req["candidates"];
    if (!c.is_array()) throw RequestError{400, "candidates must be an array of model names"};
    if (c.empty()) throw RequestError{400, "candidates must not be empty"};
    for (const auto& name : c) candidates.push_back(find_model(params_, name));
  } else {
    for (std::uint32_t i = 0; i < params_.num_models(); ++i) candidates.push_back(ModelId{i});
  }

  const RoutingDecision d = irtnet::route(params_, embedding, candidates);
  return json_reply(200, {{"model", params_.model_names.at(d.chosen.index)},
                          {"probability", d.probability()},
                          {"tie_broken", d.tie_broken}});
}

Reply Service::predict(std::string_view body) const {
  const json req = parse_body(body);
  if (!req.contains("model")) throw RequestError{400, "missing \"model\""};
  const ModelId model = find_model(params_, req["model"]);
  if (req.contains("embeddings") == req.contains("query_ids")) {
    throw RequestError{400, "give exactly one of \"embeddings\" or \"query_ids\""};
  }

  std::vector<Vec> owned;
  std::vector<std::span<const double>> set;
  if (req.contains("embeddings")) {
    const auto& list = req["embeddings"];
    if (!list.is_array()) throw RequestError{400, "embeddings must be an array of arrays"};
    owned.reserve(list.size());
    for (const auto& e : list) owned.push_back(parse_embedding(e, params_.hp.embed_dim));
    for (const auto& v : owned) set.emplace_back(v);
  } else {
    const auto& list = req["query_ids"];
    if (!list.is_array()) throw RequestError{400, "query_ids must be an array of strings"};
    if (!store_) throw RequestError{400, "by-id requests need an embedding store loaded at startup"};
    for (const auto& id : list) {
      if (!id.is_string()) throw RequestError{400, "query_ids must be an array of strings"};
      const auto row = store_->find(id.get<std::string>());
      if (!row) throw RequestError{404, "unknown query id '" + id.get<std::string>() + "'"};
      set.push_back(store_->row(*row));
    }
  }
  if (set.empty()) throw RequestError{400, "query set must not be empty"};

  const BenchmarkPrediction p = predict_benchmark(params_, model, set);
  return json_reply(200, {{"model", params_.model_names.at(model.index)},
                          {"predicted_accuracy", p.predicted_accuracy},
                          {"n_queries", p.num_queries}});
}

// ---------------------------------------------------------------------------

struct Server::Impl {
  const Service* service;
  httplib::Server http;
  std::mutex state;
  bool bound = false;
  bool stop_requested = false;
};

Server::Server(const Service& service) : impl_(std::make_unique<Impl>()) {
  impl_->service = &service;
  auto& http = impl_->http;
  http.set_payload_max_length(service.max_body_bytes());
  const auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    const Reply r = impl_->service->handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  http.Get(".*", dispatch);
  http.Post(".*", dispatch);
  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", httplib::status_message(res.status)}}.dump(), "application/json");
    }
  });
}

Server::~Server() { stop(); }

bool Server::listen(const std::string& host, int port, const std::function<void(int)>& on_ready) {
  auto& http = impl_->http;
  const int bound = port == 0 ? http.bind_to_any_port(host) : (http.bind_to_port(host, port) ? port : -1);
  if (bound < 0) return false;
  {
    // A stop() that arrived before the bind must not be lost.
    std::lock_guard lock(impl_->state);
    if (impl_->stop_requested) return false;
    impl_->bound = true;
  }
  if (on_ready) on_ready(bound);
  return http.listen_after_bind();
}

void Server::stop() {
  if (!impl_) return;
  {
    std::lock_guard lock(impl_->state);
    impl_->stop_requested = true;
    if (!impl_->bound) return;
  }
  impl_->http.wait_until_ready();
  impl_->http.stop();
}

}  // namespace irtnet::serve
