#include "asfp/cli.hpp"

int main(int argc, char** argv) {
  return asfp::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
