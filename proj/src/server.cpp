#include "cardood/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cardood/error.hpp"
#include "cardood/workload.hpp"

namespace cardood {

namespace {

constexpr int kPollMillis = 100;

std::string error_object(std::string_view message) {
  return nlohmann::json{{"error", message}}.dump();
}

bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

EstimateService::EstimateService(Model<float> model, const Database& db, EncoderOptions options)
    : model_(std::move(model)), db_(&db), encoder_(db, options) {
  const ModelDims expected = ModelDims::for_encoder(encoder_);
  const ModelDims& got = model_.dims();
  const bool fits = model_.arch() == Arch::Mlp
                        ? got.input_width == expected.input_width
                        : got.relation_width == expected.relation_width &&
                              got.selection_width == expected.selection_width && got.join_width == expected.join_width;
  if (!fits) throw DataError("checkpoint does not match the database encoding");
}

std::string EstimateService::handle(std::string_view line) const {
  try {
    SPJQuery q = query_from_json(line, *db_);
    q.normalize();
    validate_query(*db_, q);
    return nlohmann::json{{"cardinality", predict_cardinality(model_, q, encoder_)}}.dump();
  } catch (const std::exception& e) {
    return error_object(e.what());
  }
}

EstimateServer::EstimateServer(const EstimateService& service, std::uint16_t port, std::size_t workers)
    : service_(service), workers_(std::max<std::size_t>(1, workers)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw DataError(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(listen_fd_, 16) < 0) {
    const std::string reason = std::strerror(errno);
    ::close(listen_fd_);
    throw DataError("cannot bind port " + std::to_string(port) + ": " + reason);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

EstimateServer::~EstimateServer() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void EstimateServer::run() {
  std::vector<std::thread> extra;
  for (std::size_t i = 1; i < workers_; ++i) extra.emplace_back([this] { accept_loop(); });
  accept_loop();
  for (auto& t : extra) t.join();
}

void EstimateServer::accept_loop() {
  while (!stopping_.load()) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, kPollMillis);
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;  // another worker took it, or the client left
    serve_connection(fd);
    ::close(fd);
  }
}

void EstimateServer::serve_connection(int fd) {
  std::string buffer;
  char chunk[4096];
  while (!stopping_.load()) {
    pollfd p{fd, POLLIN, 0};
    const int ready = ::poll(&p, 1, kPollMillis);
    if (ready < 0 && errno != EINTR) return;
    if (ready <= 0) continue;
    const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
      std::string_view line(buffer.data() + start, nl - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!send_all(fd, service_.handle(line) + '\n')) return;
    }
    buffer.erase(0, start);
  }
}

}  // namespace cardood
