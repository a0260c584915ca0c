#include <vector>

#include "reg/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return reg::run_cli(args);
}
