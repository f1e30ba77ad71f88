#include <iostream>

#include "aop/cli.hpp"

int main(int argc, char** argv) {
  return aop::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
