#include <vector>

#include "oats/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return oats::cli::run_command(args);
}
