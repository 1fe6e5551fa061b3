#include <string>
#include <vector>

#include "comma/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return comma::cli::run(args);
}
