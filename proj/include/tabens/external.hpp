#pragma once

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "learners.hpp"
#include "wire.hpp"

namespace tabens {

// A child process spoken to line-by-line over its stdin/stdout. The child's
// stderr is inherited. One request is in flight at a time.
class WorkerProcess {
public:
    explicit WorkerProcess(std::vector<std::string> command, double timeout_seconds = 300.0)
        : command_(std::move(command)), timeout_(timeout_seconds) {
        require(!command_.empty(), ErrorCode::InvalidConfig, "empty worker command");
        // Writes to a dead worker must surface as errors, not terminate us.
        static const bool sigpipe_ignored = [] {
            std::signal(SIGPIPE, SIG_IGN);
            return true;
        }();
        (void)sigpipe_ignored;
        std::vector<char*> argv;
        for (auto& a : command_) argv.push_back(a.data());
        argv.push_back(nullptr);
        int to_child[2], from_child[2];
        require(::pipe(to_child) == 0 && ::pipe(from_child) == 0, ErrorCode::Io, "pipe() failed");
        pid_ = ::fork();
        require(pid_ >= 0, ErrorCode::Io, "fork() failed");
        if (pid_ == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execvp(argv[0], argv.data());
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        in_ = to_child[1];
        out_ = from_child[0];
        ::fcntl(in_, F_SETFD, FD_CLOEXEC);
        ::fcntl(out_, F_SETFD, FD_CLOEXEC);
    }

    WorkerProcess(const WorkerProcess&) = delete;
    WorkerProcess& operator=(const WorkerProcess&) = delete;

    ~WorkerProcess() {
        if (pid_ > 0 && alive_) {
            try {
                request(wire::shutdown_request(), 5.0);
            } catch (...) {
            }
        }
        close_fds();
        reap(true);
    }

    const std::vector<std::string>& command() const noexcept { return command_; }

    // Sends one line and waits for one line back.
    std::string request(const std::string& line) { return request(line, timeout_); }

private:
    std::string request(const std::string& line, double timeout) {
        require(alive_, ErrorCode::Protocol, "worker '" + command_[0] + "' is not running");
        std::string msg = line + '\n';
        const char* p = msg.data();
        std::size_t left = msg.size();
        while (left > 0) {
            const ssize_t w = ::write(in_, p, left);
            if (w < 0 && errno == EINTR) continue;
            if (w <= 0) {
                alive_ = false;
                throw Error(ErrorCode::Protocol, "worker '" + command_[0] + "' closed its input");
            }
            p += w;
            left -= static_cast<std::size_t>(w);
        }
        return read_line(timeout);
    }

    std::string read_line(double timeout) {
        const auto deadline = std::chrono::steady_clock::now() +
                              std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                  std::chrono::duration<double>(timeout));
        for (;;) {
            const auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            const auto now = std::chrono::steady_clock::now();
            if (now >= deadline) {
                kill_child();
                throw Error(ErrorCode::Protocol, "worker '" + command_[0] + "' timed out");
            }
            const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
            pollfd pfd{out_, POLLIN, 0};
            const int r = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(ms + 1, 1000)));
            if (r < 0 && errno == EINTR) continue;
            if (r <= 0) continue;
            char chunk[65536];
            const ssize_t got = ::read(out_, chunk, sizeof chunk);
            if (got < 0 && errno == EINTR) continue;
            if (got <= 0) {
                alive_ = false;
                throw Error(ErrorCode::Protocol, "worker '" + command_[0] + "' exited");
            }
            buffer_.append(chunk, static_cast<std::size_t>(got));
        }
    }

    void kill_child() {
        if (pid_ > 0) ::kill(pid_, SIGKILL);
        alive_ = false;
        close_fds();
        reap(true);
    }

    void close_fds() {
        if (in_ >= 0) ::close(in_);
        if (out_ >= 0) ::close(out_);
        in_ = out_ = -1;
    }

    void reap(bool block) {
        if (pid_ <= 0) return;
        int status = 0;
        if (::waitpid(pid_, &status, block ? 0 : WNOHANG) == pid_) pid_ = -1;
    }

    std::vector<std::string> command_;
    double timeout_;
    pid_t pid_ = -1;
    int in_ = -1;
    int out_ = -1;
    bool alive_ = true;
    std::string buffer_;
};

// Pool member backed by an external worker. Every instance (including each
// clone made for out-of-fold fits) owns its own worker process.
class ExternalPredictor final : public Learner {
public:
    ExternalPredictor(std::string name, std::vector<std::string> command, std::uint64_t seed = 0,
                      double timeout_seconds = 300.0)
        : name_(std::move(name)),
          command_(std::move(command)),
          seed_(seed),
          timeout_(timeout_seconds),
          worker_(std::make_unique<WorkerProcess>(command_, timeout_)) {
        const auto h = wire::parse_handshake(wire::parse_response(worker_->request(wire::handshake_request())));
        remote_model_ = h.model;
        remote_classes_ = h.classes;
    }

    std::string name() const override { return name_; }
    ModelKind kind() const override { return ModelKind::External; }
    std::uint64_t seed() const override { return seed_; }
    const std::string& remote_model() const noexcept { return remote_model_; }

    FitReport fit(const Matrix& x, std::span<const int> y, int class_count) override {
        Stopwatch sw;
        detail::check_training_input(x, y, class_count);
        wire::parse_response(worker_->request(wire::fit_request(x, y, seed_)));
        classes_ = class_count;
        return {sw.seconds(), 0.0};
    }

    ProbabilityMatrix predict_proba(const Matrix& x) const override {
        require(classes_ > 0, ErrorCode::NotFitted, "external model '" + name_ + "' not fitted");
        const auto resp = wire::parse_response(worker_->request(wire::predict_request(x)));
        if (!resp.contains("proba")) throw Error(ErrorCode::Protocol, "predict response lacks 'proba'");
        Matrix m = wire::matrix_from_json(resp["proba"]);
        require(m.rows() == x.rows() && m.cols() == static_cast<std::size_t>(classes_),
                ErrorCode::ShapeMismatch, "external model '" + name_ + "' returned a wrongly shaped matrix");
        return ProbabilityMatrix(std::move(m));
    }

    std::unique_ptr<Learner> clone(std::uint64_t seed) const override {
        return std::make_unique<ExternalPredictor>(name_, command_, seed, timeout_);
    }

private:
    std::string name_;
    std::vector<std::string> command_;
    std::uint64_t seed_;
    double timeout_;
    std::unique_ptr<WorkerProcess> worker_;
    std::string remote_model_;
    std::optional<int> remote_classes_;
    int classes_ = 0;
};

}  // namespace tabens
