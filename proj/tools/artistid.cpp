#include "artistid/cli.hpp"
#include "artistid/memory.hpp"

int main(int argc, char** argv) {
  artistid::retain_freed_memory();
  return artistid::cli::run(argc, argv);
}
