#include "noduleclip/cli.hpp"

int main(int argc, char** argv) { return noduleclip::cli::run(argc, argv); }
