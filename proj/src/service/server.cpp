// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <thread>

#include "httplib.h"
#include "tts/common/error.hpp"
#include "tts/service/service.hpp"

namespace tts::service {

namespace {

Request to_request(const httplib::Request& req) {
  Request r;
  r.method = req.method;
  r.path = req.path;
  for (const auto& [k, v] : req.params) r.query[k] = v;
  r.body = req.body;
  auto auth = req.get_header_value("Authorization");
  constexpr std::string_view kBearer = "Bearer ";
  if (auth.rfind(kBearer, 0) == 0) r.bearer = auth.substr(kBearer.size());
  return r;
}

}  // namespace

void serve(Api& api, const std::function<bool()>& should_stop, const std::function<void(int)>& on_listening) {
  httplib::Server server;
  auto handler = [&api](const httplib::Request& req, httplib::Response& res) {
    auto out = api.handle(to_request(req));
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.Get(".*", handler);
  server.Post(".*", handler);
  server.Put(".*", handler);
  server.Delete(".*", handler);
  server.set_payload_max_length(64u << 20);

  int port = api.config().port;
  if (port == 0) {
    port = server.bind_to_any_port(api.config().host);
  } else if (!server.bind_to_port(api.config().host, port)) {
    port = -1;
  }
  if (port < 0) throw Error(Errc::Io, "cannot bind " + api.config().host + ":" + std::to_string(api.config().port));

  std::atomic<bool> done{false};
  std::thread ticker([&] {
    auto next = std::chrono::steady_clock::now();
    while (!done) {
      auto period = std::chrono::duration<double>(1.0 / api.step_rate());
      next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
      auto now = std::chrono::steady_clock::now();
      if (next < now) next = now;
      // Wake often enough to notice shutdown even at slow step rates.
      while (!done && std::chrono::steady_clock::now() < next) {
        std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(
            next - std::chrono::steady_clock::now(), std::chrono::milliseconds(50)));
      }
      if (!done) api.tick_if_running();
    }
  });
  std::thread watcher([&] {
    while (!done) {
      if (should_stop && should_stop()) {
        server.stop();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  });
  if (on_listening) on_listening(port);
  server.listen_after_bind();
  done = true;
  ticker.join();
  watcher.join();
}

}  // namespace tts::service
