// Serves a simulator environment over the line-JSON wire protocol.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "sgelab/xenv.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"environment server"};
  std::string env_name = "combination_lock";
  std::string host = "127.0.0.1";
  int port = 0;
  app.add_option("--env", env_name,
                 "combination_lock | noisy_tap | feedback_repair");
  app.add_option("--host", host, "bind address");
  app.add_option("--port", port, "bind port (0 = ephemeral)");
  CLI11_PARSE(app, argc, argv);

  try {
    std::unique_ptr<sgelab::Env> env = sgelab::make_env(env_name);
    sgelab::EnvServer server(*env, host, port);
    std::cout << "listening on " << host << ":" << server.port() << std::endl;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop) {
      timespec ts{0, 100 * 1000 * 1000};
      nanosleep(&ts, nullptr);
    }
    server.stop();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
