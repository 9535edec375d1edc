#include "textdepth/cli.hpp"

int main(int argc, char** argv) {
  return textdepth::cli_main(argc, argv);
}
