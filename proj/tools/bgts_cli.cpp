#include <vector>

#include "bgts/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return bgts::cli::run_cli(std::move(args));
}
