#include <iostream>

#include "cmdb/cli/app.hpp"

int main(int argc, char** argv) { return cmdb::cli::run(argc, argv, {std::cout, std::cerr}); }
