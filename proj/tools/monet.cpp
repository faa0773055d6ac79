#include "monet/cli.hpp"

int main(int argc, char** argv) {
  return monet::cli::run(argc, argv);
}
