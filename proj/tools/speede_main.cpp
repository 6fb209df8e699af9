#include <string>
#include <vector>

#include "speede/cli.hpp"

int main(int argc, char** argv) {
    return speede::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
