#include <iostream>

#include "cli.h"

int main(int argc, char** argv) {
  mlsa::cli::install_signal_handlers();
  return mlsa::cli::run(argc, argv, std::cout, std::cerr);
}
