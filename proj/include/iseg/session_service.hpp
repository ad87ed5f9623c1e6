#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "iseg/cascade.hpp"
#include "iseg/types.hpp"

namespace iseg {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080; // 0 picks a free port
    double session_ttl = 1800.0; // seconds of inactivity before a session is dropped
    int max_sessions = 64;
    std::filesystem::path static_dir; // served under "/" when set
    int max_side = 1024;
    int max_clicks = 100;
    std::size_t max_upload_bytes = 32u << 20;

    void validate() const;
};

/// Row-major run lengths alternating background and foreground, starting with a
/// (possibly empty) background run.
std::vector<std::size_t> rle_encode(const BinMask& mask);
BinMask rle_decode(const std::vector<std::size_t>& counts, int height, int width);

/// Pads bottom and right by edge replication up to multiples of `stride`.
Tensor pad_to_multiple(const Tensor& image, int stride);

/// HTTP front end over interactive_step. Routes:
///   POST   /sessions                  image bytes (PNG/PNM) or {"generate": {"kind", "seed"}}
///   GET    /sessions/{id}
///   GET    /sessions/{id}/image.png
///   GET    /sessions/{id}/prob.png
///   POST   /sessions/{id}/clicks      {"row", "col", "polarity"}
///   POST   /sessions/{id}/undo
///   DELETE /sessions/{id}
/// Model parameters are shared read-only; each session mutates under its own lock
/// and a request that finds the lock taken gets 409.
class SessionServer {
  public:
    SessionServer(CascadeModel model, CascadeConfig cascade, ServiceConfig cfg);
    ~SessionServer();
    SessionServer(const SessionServer&) = delete;
    SessionServer& operator=(const SessionServer&) = delete;

    /// Binds the listening socket and returns the port. Throws IoError on failure.
    int bind();
    /// Serves until stop(); binds first if needed.
    void run();
    /// run() on a background thread; returns once the server accepts connections.
    void start();
    void stop();

    int port() const;
    std::size_t session_count() const;
    /// Drops sessions idle for longer than the TTL; returns how many went.
    std::size_t sweep_expired();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace iseg
