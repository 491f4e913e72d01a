#include "symoden/cli.hpp"
#include "symoden/runtime.hpp"

int main(int argc, char** argv) {
  symoden::tune_allocator();
  return symoden::cli::run_cli(argc, argv);
}
