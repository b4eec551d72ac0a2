#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <sys/types.h>

namespace aiq {

/// A child process run through `/bin/sh -c` with its stdin and stdout
/// connected to pipes. The destructor closes the pipes and reaps the child.
class Subprocess {
public:
    explicit Subprocess(const std::string& command);
    ~Subprocess();

    Subprocess(const Subprocess&) = delete;
    Subprocess& operator=(const Subprocess&) = delete;

    /// Writes all of `data`; false if the child closed its end.
    bool write(const std::string& data);

    /// Reads one line without its newline. nullopt on EOF; throws
    /// SubprocessTimeout if no full line arrives within `timeout`.
    std::optional<std::string> read_line(std::chrono::milliseconds timeout);

    void kill();
    bool running();

private:
    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

struct SubprocessTimeout {};

}  // namespace aiq
