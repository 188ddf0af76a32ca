// Stand-alone stub recognizer: answers crop requests with the label tag painted into them.

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include "bodyfuse/error.hpp"
#include "bodyfuse/stub_recognizer.hpp"
#include "bodyfuse/transport.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Stub gesture/face recognizer serving the crop wire protocol."};
  std::string endpoint = "127.0.0.1:5555";
  int delay_ms = 0;
  app.add_option("-e,--endpoint", endpoint, "listen endpoint, host:port (port 0 picks one)");
  app.add_option("--delay-ms", delay_ms, "artificial latency before each reply")->check(CLI::NonNegativeNumber);
  CLI11_PARSE(app, argc, argv);

  // Block the signals before any thread starts so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    bodyfuse::transport::ServerOptions options;
    options.reply_delay = std::chrono::milliseconds(delay_ms);
    bodyfuse::transport::RequestServer server(bodyfuse::transport::Endpoint::parse(endpoint),
                                              bodyfuse::stub::handle, options);
    // Scripts wait for this line before connecting.
    std::cout << "listening on port " << server.port() << std::endl;
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
    std::cerr << "stub: served " << server.requests_served() << " requests\n";
  } catch (const std::exception& e) {
    std::cerr << "stub: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
