#pragma once

// Read-only HTTP front end over a loaded checkpoint.
//
//   GET  /health  -> {"status":"ok","n_models":n,"d":d}
//   GET  /models  -> {"models":[{"index":i,"name":...}, ...]}
//   POST /route   {"embedding":[...]} | {"query_id":"..."}, optional "candidates":[names]
//                 -> {"model":name,"probability":p,"tie_broken":bool}
//   POST /predict {"model":name, "embeddings":[[...],...]} | {"model":name, "query_ids":[...]}
//                 -> {"model":name,"predicted_accuracy":s,"n_queries":k}
//
// Errors are {"error":"..."} with 400 (malformed body or embedding length),
// 404 (unknown path, model or query id), 405 (wrong method) or 413 (body over
// the limit).

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "irtnet/embeddings.hpp"
#include "irtnet/model.hpp"

namespace irtnet::serve {

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> ids;      // with `vectors`, enables by-id requests
  std::optional<std::filesystem::path> vectors;
  std::size_t max_body_bytes = 1 << 20;
};

struct Reply {
  int status = 200;
  std::string body;
};

class Service {
 public:
  Service(IrtNetParams params, std::optional<EmbeddingStore> store, std::size_t max_body_bytes = 1 << 20);
  /// Loads the checkpoint (and store, when configured) or throws.
  static Service from_config(const ServeConfig& config);

  /// Pure function of (parameters, request); safe for concurrent callers.
  Reply handle(std::string_view method, std::string_view path, std::string_view body) const;

  const IrtNetParams& params() const noexcept { return params_; }
  std::size_t max_body_bytes() const noexcept { return max_body_bytes_; }

 private:
  Reply health() const;
  Reply models() const;
  Reply route(std::string_view body) const;
  Reply predict(std::string_view body) const;

  IrtNetParams params_;
  std::optional<EmbeddingStore> store_;
  std::size_t max_body_bytes_;
};

/// Binds and blocks until stop() is requested from another thread or the
/// process is terminated. `on_ready` receives the bound port.
class Server {
 public:
  explicit Server(const Service& service);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// port 0 binds an ephemeral port. Returns false if binding failed or stop()
  /// was already requested.
  bool listen(const std::string& host, int port, const std::function<void(int)>& on_ready = {});
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace irtnet::serve
