#include "bocpdms/cli.hpp"

int main(int argc, char** argv) { return bocpdms::cli_main(argc, argv); }
