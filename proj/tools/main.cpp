#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cli.hpp"
#include "crisp/runtime.hpp"

int main(int argc, char** argv) {
    crisp::tune_allocator();
    spdlog::set_default_logger(spdlog::stderr_color_mt("crisp"));
    return crisp::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
